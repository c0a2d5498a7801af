"""Hot numeric kernels: triple scoring, fused loss-gradient SGD steps, and
filtered negative sampling.

Two interchangeable backends exist for every kernel: a numba ``@njit``
version and a pure-numpy vectorized version.  Selection is controlled by the
``KGEPB_BACKEND`` env var: ``auto`` (default; numba when importable),
``numba`` (require numba), or ``numpy`` (force the fallback).  All random
inputs are drawn outside the kernels with numpy generators, so both backends
consume identical random streams and differ only in floating-point
association order.

Entity tables are float64 ``(n_entities, D)`` with ``D = dim`` for the
translation model and ``D = 2*dim`` (real halves then imaginary halves) for
the rotation model; rotation relations are phase vectors ``(n_relations, dim)``.
"""

from __future__ import annotations

import math
import os

import numpy as np

_requested = os.environ.get("KGEPB_BACKEND", "auto").strip().lower() or "auto"
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"KGEPB_BACKEND must be auto|numba|numpy, got {_requested!r}")

NUMBA_AVAILABLE = False
if _requested in ("auto", "numba"):
    try:
        from numba import njit, prange

        NUMBA_AVAILABLE = True
    except ImportError:
        if _requested == "numba":
            raise ImportError("KGEPB_BACKEND=numba but numba is not importable") from None

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"

if not NUMBA_AVAILABLE:  # keep decorators importable when running pure numpy
    def njit(*args, **kwargs):  # noqa: D103
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco

    prange = range


# ---------------------------------------------------------------------------
# numerics helpers (numpy side)

def sigmoid_np(x):
    """Numerically stable logistic; exact for large |x|."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=np.float64)))


def log_sigmoid_np(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _log_sigmoid(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


# ---------------------------------------------------------------------------
# scoring

def transe_scores_np(ent, rel, h, r, t, p):
    diff = ent[h] + rel[r] - ent[t]
    if p == 1:
        return -np.abs(diff).sum(axis=1)
    return -np.sqrt((diff * diff).sum(axis=1))


@njit(cache=True)
def transe_scores_nb(ent, rel, h, r, t, p):
    n = h.shape[0]
    d = rel.shape[1]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        if p == 1:
            for j in range(d):
                acc += abs(ent[h[i], j] + rel[r[i], j] - ent[t[i], j])
        else:
            for j in range(d):
                v = ent[h[i], j] + rel[r[i], j] - ent[t[i], j]
                acc += v * v
            acc = math.sqrt(acc)
        out[i] = -acc
    return out


def rotate_scores_np(ent, rel, h, r, t):
    d = rel.shape[1]
    h_re, h_im = ent[h, :d], ent[h, d:]
    cos, sin = np.cos(rel[r]), np.sin(rel[r])
    dre = h_re * cos - h_im * sin - ent[t, :d]
    dim = h_re * sin + h_im * cos - ent[t, d:]
    return -np.sqrt((dre * dre + dim * dim).sum(axis=1))


@njit(cache=True)
def rotate_scores_nb(ent, rel, h, r, t):
    n = h.shape[0]
    d = rel.shape[1]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            c = math.cos(rel[r[i], j])
            s = math.sin(rel[r[i], j])
            dre = ent[h[i], j] * c - ent[h[i], d + j] * s - ent[t[i], j]
            dim = ent[h[i], j] * s + ent[h[i], d + j] * c - ent[t[i], d + j]
            acc += dre * dre + dim * dim
        out[i] = -math.sqrt(acc)
    return out


# ---------------------------------------------------------------------------
# filtered negative sampling
#
# pos: (B, 3) positives; sides: (B, N) 1 = corrupt head, 0 = corrupt tail;
# uni: (B, N, R) uniforms in [0, 1) supplying up to R candidate draws per slot;
# role_of: (n_entities,) role code per entity; role_members/role_offsets:
# entity ids grouped by role code; keys: sorted int64 encodings of existing
# triples, key = (h * n_rel + r) * n_ent + t.  Writes negatives into out and
# returns the number of slots whose R draws were all existing triples.

def fill_negatives_np(pos, sides, uni, role_of, role_members, role_offsets, keys, n_rel, n_ent, out):
    B, N, R = uni.shape
    corrupt_head = sides.astype(bool)
    h0 = pos[:, 0][:, None, None]
    r0 = pos[:, 1][:, None, None]
    t0 = pos[:, 2][:, None, None]
    orig = np.where(corrupt_head, pos[:, 0][:, None], pos[:, 2][:, None])
    role = role_of[orig]
    lo = role_offsets[role]
    size = role_offsets[role + 1] - lo
    cand = role_members[lo[..., None] + (uni * size[..., None]).astype(np.int64)]
    nh = np.where(corrupt_head[..., None], cand, h0)
    nt = np.where(corrupt_head[..., None], t0, cand)
    key = (nh * n_rel + r0) * n_ent + nt
    if keys.size:
        idx = np.searchsorted(keys, key)
        exists = (idx < keys.size) & (keys[np.minimum(idx, keys.size - 1)] == key)
    else:
        exists = np.zeros(key.shape, dtype=bool)
    valid = ~exists
    any_valid = valid.any(axis=2)
    first = valid.argmax(axis=2)
    bb = np.arange(B)[:, None]
    nn = np.arange(N)[None, :]
    out[..., 0] = np.where(any_valid, nh[bb, nn, first], pos[:, 0][:, None])
    out[..., 1] = pos[:, 1][:, None]
    out[..., 2] = np.where(any_valid, nt[bb, nn, first], pos[:, 2][:, None])
    return int((~any_valid).sum())


@njit(cache=True)
def fill_negatives_nb(pos, sides, uni, role_of, role_members, role_offsets, keys, n_rel, n_ent, out):
    B, N, R = uni.shape
    fails = 0
    for b in range(B):
        h0 = pos[b, 0]
        r0 = pos[b, 1]
        t0 = pos[b, 2]
        for i in range(N):
            corrupt_head = sides[b, i] == 1
            orig = h0 if corrupt_head else t0
            role = role_of[orig]
            lo = role_offsets[role]
            size = role_offsets[role + 1] - lo
            found = False
            for q in range(R):
                cand = role_members[lo + np.int64(uni[b, i, q] * size)]
                nh = cand if corrupt_head else h0
                nt = t0 if corrupt_head else cand
                key = (nh * n_rel + r0) * n_ent + nt
                j = np.searchsorted(keys, key)
                if j < keys.size and keys[j] == key:
                    continue
                out[b, i, 0] = nh
                out[b, i, 1] = r0
                out[b, i, 2] = nt
                found = True
                break
            if not found:
                fails += 1
                out[b, i, 0] = h0
                out[b, i, 1] = r0
                out[b, i, 2] = t0
    return fails


# ---------------------------------------------------------------------------
# fused self-adversarial loss + SGD step
#
# Batch objective: L = (1/B) sum_b [ -log sig(gamma + s_pos)
#   - sum_i p_i * log sig(-s_neg_i - gamma) ],  p_i = softmax_i(alpha * s_neg_i),
# with the gradient taken through p_i as well.  All scores are computed at the
# pre-update tables, gradients accumulated, then applied once (one SGD step
# per batch).  Returns the batch loss.

def _coefficients_np(s_pos, s_neg, gamma, alpha):
    loss_pos = -log_sigmoid_np(gamma + s_pos)
    l_neg = log_sigmoid_np(-s_neg - gamma)
    a = alpha * s_neg
    a = a - a.max(axis=1, keepdims=True)
    w = np.exp(a)
    p = w / w.sum(axis=1, keepdims=True)
    lbar = (p * l_neg).sum(axis=1)
    loss = float((loss_pos - lbar).mean())
    c_pos = sigmoid_np(gamma + s_pos) - 1.0
    c_neg = p * sigmoid_np(s_neg + gamma) - alpha * p * (l_neg - lbar[:, None])
    return loss, c_pos, c_neg


def transe_sgd_np(ent, rel, pos, neg, gamma, alpha, lr, p):
    B, N = neg.shape[:2]
    h = np.concatenate([pos[:, :1], neg[:, :, 0]], axis=1).ravel()
    r = np.concatenate([pos[:, 1:2], neg[:, :, 1]], axis=1).ravel()
    t = np.concatenate([pos[:, 2:3], neg[:, :, 2]], axis=1).ravel()
    diff = ent[h] + rel[r] - ent[t]
    if p == 1:
        dist = np.abs(diff).sum(axis=1)
        unit = np.sign(diff)
    else:
        dist = np.sqrt((diff * diff).sum(axis=1))
        safe = np.where(dist > 0.0, dist, 1.0)
        unit = diff / safe[:, None]
        unit[dist == 0.0] = 0.0
    scores = (-dist).reshape(B, 1 + N)
    loss, c_pos, c_neg = _coefficients_np(scores[:, 0], scores[:, 1:], gamma, alpha)
    coef = np.concatenate([c_pos[:, None], c_neg], axis=1).ravel() / B
    g = coef[:, None] * unit
    np.add.at(ent, h, lr * g)      # ds/dh = -unit, update is -lr * c * ds/dh
    np.add.at(ent, t, -lr * g)
    np.add.at(rel, r, lr * g)
    return loss


def rotate_sgd_np(ent, rel, pos, neg, gamma, alpha, lr):
    B, N = neg.shape[:2]
    d = rel.shape[1]
    h = np.concatenate([pos[:, :1], neg[:, :, 0]], axis=1).ravel()
    r = np.concatenate([pos[:, 1:2], neg[:, :, 1]], axis=1).ravel()
    t = np.concatenate([pos[:, 2:3], neg[:, :, 2]], axis=1).ravel()
    h_re, h_im = ent[h, :d], ent[h, d:]
    cos, sin = np.cos(rel[r]), np.sin(rel[r])
    hr_re = h_re * cos - h_im * sin
    hr_im = h_re * sin + h_im * cos
    dre = hr_re - ent[t, :d]
    dim = hr_im - ent[t, d:]
    dist = np.sqrt((dre * dre + dim * dim).sum(axis=1))
    scores = (-dist).reshape(B, 1 + N)
    loss, c_pos, c_neg = _coefficients_np(scores[:, 0], scores[:, 1:], gamma, alpha)
    coef = np.concatenate([c_pos[:, None], c_neg], axis=1).ravel() / B
    safe = np.where(dist > 0.0, dist, 1.0)
    cd = (coef / safe)[:, None]
    cd[dist == 0.0] = 0.0
    g_h = np.empty((h.size, 2 * d))
    g_h[:, :d] = -cd * (dre * cos + dim * sin)
    g_h[:, d:] = cd * (dre * sin - dim * cos)
    g_t = np.empty((h.size, 2 * d))
    g_t[:, :d] = cd * dre
    g_t[:, d:] = cd * dim
    g_r = cd * (dre * hr_im - dim * hr_re)
    np.add.at(ent, h, -lr * g_h)
    np.add.at(ent, t, -lr * g_t)
    np.add.at(rel, r, -lr * g_r)
    return loss


@njit(cache=True)
def _slot_ids(pos, neg, b, j):
    if j == 0:
        return pos[b, 0], pos[b, 1], pos[b, 2]
    return neg[b, j - 1, 0], neg[b, j - 1, 1], neg[b, j - 1, 2]


@njit(cache=True)
def _coefficients_nb(scores, B, N, gamma, alpha, coef):
    loss = 0.0
    for b in range(B):
        base = b * (1 + N)
        sp = scores[base]
        loss += -_log_sigmoid(gamma + sp)
        coef[base] = _sigmoid(gamma + sp) - 1.0
        m = -1.0e308
        for i in range(N):
            a = alpha * scores[base + 1 + i]
            if a > m:
                m = a
        z = 0.0
        for i in range(N):
            z += math.exp(alpha * scores[base + 1 + i] - m)
        lbar = 0.0
        for i in range(N):
            s = scores[base + 1 + i]
            pi = math.exp(alpha * s - m) / z
            lbar += pi * _log_sigmoid(-s - gamma)
        loss += -lbar
        for i in range(N):
            s = scores[base + 1 + i]
            pi = math.exp(alpha * s - m) / z
            li = _log_sigmoid(-s - gamma)
            coef[base + 1 + i] = pi * _sigmoid(s + gamma) - alpha * pi * (li - lbar)
    return loss / B


@njit(cache=True)
def transe_sgd_nb(ent, rel, pos, neg, gamma, alpha, lr, p):
    B = pos.shape[0]
    N = neg.shape[1]
    d = rel.shape[1]
    T = B * (1 + N)
    scores = np.empty(T)
    for idx in range(T):
        b = idx // (1 + N)
        h, r, t = _slot_ids(pos, neg, b, idx % (1 + N))
        acc = 0.0
        if p == 1:
            for j in range(d):
                acc += abs(ent[h, j] + rel[r, j] - ent[t, j])
        else:
            for j in range(d):
                v = ent[h, j] + rel[r, j] - ent[t, j]
                acc += v * v
            acc = math.sqrt(acc)
        scores[idx] = -acc
    coef = np.empty(T)
    loss = _coefficients_nb(scores, B, N, gamma, alpha, coef)
    invB = 1.0 / B
    g_h = np.empty((T, d))
    g_r = np.empty((T, d))
    ids = np.empty((T, 3), dtype=np.int64)
    for idx in range(T):
        b = idx // (1 + N)
        h, r, t = _slot_ids(pos, neg, b, idx % (1 + N))
        ids[idx, 0] = h
        ids[idx, 1] = r
        ids[idx, 2] = t
        c = coef[idx] * invB
        dist = -scores[idx]
        for j in range(d):
            v = ent[h, j] + rel[r, j] - ent[t, j]
            if p == 1:
                u = 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0)
            else:
                u = v / dist if dist > 0.0 else 0.0
            g_h[idx, j] = -c * u
            g_r[idx, j] = -c * u
    for idx in range(T):
        h = ids[idx, 0]
        r = ids[idx, 1]
        t = ids[idx, 2]
        for j in range(d):
            ent[h, j] -= lr * g_h[idx, j]
            ent[t, j] += lr * g_h[idx, j]      # ds/dt = -ds/dh
            rel[r, j] -= lr * g_r[idx, j]
    return loss


@njit(cache=True)
def rotate_sgd_nb(ent, rel, pos, neg, gamma, alpha, lr):
    B = pos.shape[0]
    N = neg.shape[1]
    d = rel.shape[1]
    T = B * (1 + N)
    scores = np.empty(T)
    for idx in range(T):
        b = idx // (1 + N)
        h, r, t = _slot_ids(pos, neg, b, idx % (1 + N))
        acc = 0.0
        for j in range(d):
            c = math.cos(rel[r, j])
            s = math.sin(rel[r, j])
            dre = ent[h, j] * c - ent[h, d + j] * s - ent[t, j]
            dim = ent[h, j] * s + ent[h, d + j] * c - ent[t, d + j]
            acc += dre * dre + dim * dim
        scores[idx] = -math.sqrt(acc)
    coef = np.empty(T)
    loss = _coefficients_nb(scores, B, N, gamma, alpha, coef)
    invB = 1.0 / B
    g_e = np.empty((T, 4 * d))      # h grads then t grads
    g_r = np.empty((T, d))
    ids = np.empty((T, 3), dtype=np.int64)
    for idx in range(T):
        b = idx // (1 + N)
        h, r, t = _slot_ids(pos, neg, b, idx % (1 + N))
        ids[idx, 0] = h
        ids[idx, 1] = r
        ids[idx, 2] = t
        dist = -scores[idx]
        cd = coef[idx] * invB / dist if dist > 0.0 else 0.0
        for j in range(d):
            c = math.cos(rel[r, j])
            s = math.sin(rel[r, j])
            hr_re = ent[h, j] * c - ent[h, d + j] * s
            hr_im = ent[h, j] * s + ent[h, d + j] * c
            dre = hr_re - ent[t, j]
            dim = hr_im - ent[t, d + j]
            g_e[idx, j] = -cd * (dre * c + dim * s)
            g_e[idx, d + j] = cd * (dre * s - dim * c)
            g_e[idx, 2 * d + j] = cd * dre
            g_e[idx, 3 * d + j] = cd * dim
            g_r[idx, j] = cd * (dre * hr_im - dim * hr_re)
    for idx in range(T):
        h = ids[idx, 0]
        r = ids[idx, 1]
        t = ids[idx, 2]
        for j in range(d):
            ent[h, j] -= lr * g_e[idx, j]
            ent[h, d + j] -= lr * g_e[idx, d + j]
            ent[t, j] -= lr * g_e[idx, 2 * d + j]
            ent[t, d + j] -= lr * g_e[idx, 3 * d + j]
            rel[r, j] -= lr * g_r[idx, j]
    return loss


# ---------------------------------------------------------------------------
# hogwild variants: batch slots race on the shared tables (parallel mode;
# results vary run to run).  Compiled lazily on first use.

_HOGWILD: dict[str, object] = {}


def _build_hogwild(kind: str):
    if not NUMBA_AVAILABLE:
        raise RuntimeError("parallel training requires the numba backend")
    if kind in _HOGWILD:
        return _HOGWILD[kind]
    from numba import njit as _njit  # local to keep compile cost off import

    if kind == "transe":

        @_njit(parallel=True)
        def hogwild(ent, rel, pos, neg, gamma, alpha, lr, p):
            B = pos.shape[0]
            total = 0.0
            for b in prange(B):
                total += transe_sgd_nb(
                    ent, rel, pos[b : b + 1], neg[b : b + 1], gamma, alpha, lr, p
                )
            return total / B

    else:

        @_njit(parallel=True)
        def hogwild(ent, rel, pos, neg, gamma, alpha, lr):
            B = pos.shape[0]
            total = 0.0
            for b in prange(B):
                total += rotate_sgd_nb(
                    ent, rel, pos[b : b + 1], neg[b : b + 1], gamma, alpha, lr
                )
            return total / B

    _HOGWILD[kind] = hogwild
    return hogwild


# ---------------------------------------------------------------------------
# backend dispatch

if BACKEND == "numba":
    transe_scores = transe_scores_nb
    rotate_scores = rotate_scores_nb
    fill_negatives = fill_negatives_nb
    transe_sgd = transe_sgd_nb
    rotate_sgd = rotate_sgd_nb
else:
    transe_scores = transe_scores_np
    rotate_scores = rotate_scores_np
    fill_negatives = fill_negatives_np
    transe_sgd = transe_sgd_np
    rotate_sgd = rotate_sgd_np

"""Embedding models and training.

Two scoring families: a translation model (``transe``: score is the negated
p-norm of ``h + r - t``) and a rotation model (``rotate``: relations are
unit-modulus elementwise rotations in complex space, score is the negated
Euclidean distance between ``h`` rotated by ``r`` and ``t``).  Training uses
self-adversarial negative sampling with plain constant-rate SGD.

The analytic gradient here (:func:`loss_gradient`) is the reference
implementation, exact for the stated loss including the dependence through
the adversarial softmax weights; the fused kernels in :mod:`kgepb.kernels`
implement the same math and are cross-checked against it in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .kg import ROLES, KnowledgeGraph, Triple

KIND_TRANSE = "transe"
KIND_ROTATE = "rotate"
MODEL_KINDS = (KIND_TRANSE, KIND_ROTATE)

CHECKPOINT_VERSION = 1


class NegativeSamplingError(RuntimeError):
    """Filtered corruption could not find a non-existing triple within the retry cap."""


class TrainingDivergedError(RuntimeError):
    """Non-finite loss encountered; message carries epoch, batch and learning rate."""


@dataclass
class TrainConfig:
    dim: int = 70
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.05
    negatives: int = 8
    adversarial_temperature: float = 1.0
    margin: float = 6.0
    norm_p: int = 2
    seed: int = 0
    parallel: bool = False
    redraw_cap: int = 32

    def validate(self) -> None:
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.adversarial_temperature < 0:
            raise ValueError("adversarial_temperature must be non-negative")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.norm_p not in (1, 2):
            raise ValueError("norm_p must be 1 or 2")
        if self.redraw_cap < 1:
            raise ValueError("redraw_cap must be >= 1")


@dataclass
class EmbeddingModel:
    """Entity/relation tables plus the scoring kind and margin.

    ``entities`` is ``(n_entities, dim)`` for transe and ``(n_entities, 2*dim)``
    for rotate (real halves then imaginary halves); rotate ``relations`` are
    phase vectors in ``[0, 2pi)``, so relation modulus is exactly 1 elementwise.
    """

    kind: str
    dim: int
    entities: np.ndarray
    relations: np.ndarray
    gamma: float
    norm_p: int = 2
    entity_labels: list[str] = field(default_factory=list)
    relation_labels: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.gamma <= 0:
            raise ValueError("margin gamma must be positive")
        width = self.dim if self.kind == KIND_TRANSE else 2 * self.dim
        if self.entities.shape[1] != width:
            raise ValueError(f"entity table width {self.entities.shape[1]} != {width}")
        if self.relations.shape[1] != self.dim:
            raise ValueError(f"relation table width {self.relations.shape[1]} != {self.dim}")

    @property
    def n_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relations.shape[0]

    def _check_ids(self, h, r, t) -> None:
        for name, arr, bound in (("entity", h, self.n_entities), ("relation", r, self.n_relations), ("entity", t, self.n_entities)):
            if np.any(arr < 0) or np.any(arr >= bound):
                raise IndexError(f"{name} id out of bounds (table size {bound})")

    def score_many(self, h, r, t) -> np.ndarray:
        """Scores for parallel id arrays; higher means more plausible."""
        h = np.ascontiguousarray(h, dtype=np.int64)
        r = np.ascontiguousarray(r, dtype=np.int64)
        t = np.ascontiguousarray(t, dtype=np.int64)
        self._check_ids(h, r, t)
        if self.kind == KIND_TRANSE:
            return kernels.transe_scores(self.entities, self.relations, h, r, t, self.norm_p)
        return kernels.rotate_scores(self.entities, self.relations, h, r, t)

    def score(self, triple: Triple) -> float:
        h, r, t = triple
        return float(self.score_many(np.array([h]), np.array([r]), np.array([t]))[0])

    def plausibility_many(self, h, r, t) -> np.ndarray:
        """Logistic of (gamma + score): strictly increasing in score, in (0, 1)."""
        return kernels.sigmoid_np(self.gamma + self.score_many(h, r, t))

    def plausibility(self, triple: Triple) -> float:
        return float(kernels.sigmoid_np(self.gamma + self.score(triple)))

    def copy(self) -> "EmbeddingModel":
        return replace(self, entities=self.entities.copy(), relations=self.relations.copy())


def init_model(kind: str, n_entities: int, n_relations: int, config: TrainConfig,
               entity_labels: list[str] | None = None,
               relation_labels: list[str] | None = None) -> EmbeddingModel:
    """Seeded initialization: bounded uniform entity components, uniform phases."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    bound = config.margin / config.dim
    if kind == KIND_TRANSE:
        ent = rng.uniform(-bound, bound, size=(n_entities, config.dim))
        rel = rng.uniform(-bound, bound, size=(n_relations, config.dim))
    elif kind == KIND_ROTATE:
        ent = rng.uniform(-bound, bound, size=(n_entities, 2 * config.dim))
        rel = rng.uniform(0.0, 2.0 * np.pi, size=(n_relations, config.dim))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return EmbeddingModel(
        kind=kind,
        dim=config.dim,
        entities=ent,
        relations=rel,
        gamma=config.margin,
        norm_p=config.norm_p,
        entity_labels=list(entity_labels or []),
        relation_labels=list(relation_labels or []),
    )


# ---------------------------------------------------------------------------
# negative sampling (standalone, per-triple)

def sample_negatives(
    triple: Triple,
    graph: KnowledgeGraph,
    n: int,
    mode: str = "both",
    seed: int = 0,
    redraw_cap: int = 1000,
) -> list[Triple]:
    """Draw ``n`` role-preserving corruptions of ``triple`` absent from ``graph``.

    ``mode`` selects the corrupted slot: ``head``, ``tail``, or ``both``
    (uniform per negative).  Each corruption replaces the slot entity with a
    uniform entity of the same role, rejecting corruptions that exist in the
    graph; after ``redraw_cap`` rejected draws for one negative the candidate
    pool is considered exhausted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in ("both", "head", "tail"):
        raise ValueError(f"mode must be both|head|tail, got {mode!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    out: list[Triple] = []
    for _ in range(n):
        for _attempt in range(redraw_cap):
            if mode == "both":
                corrupt_head = bool(rng.integers(2))
            else:
                corrupt_head = mode == "head"
            orig = triple.head if corrupt_head else triple.tail
            pool = graph.entities_with_role(graph.entity_role(orig))
            cand = int(pool[rng.integers(pool.size)])
            negative = (
                Triple(cand, triple.relation, triple.tail)
                if corrupt_head
                else Triple(triple.head, triple.relation, cand)
            )
            if not graph.has_triple(*negative):
                out.append(negative)
                break
        else:
            raise NegativeSamplingError(
                f"no filtered negative for {triple} after {redraw_cap} draws "
                "(candidate pool exhausted)"
            )
    return out


# ---------------------------------------------------------------------------
# reference loss and gradient (single positive + its negatives)

def _adversarial_terms(s_pos: float, s_neg: np.ndarray, gamma: float, alpha: float):
    l_neg = kernels.log_sigmoid_np(-s_neg - gamma)
    a = alpha * s_neg
    w = np.exp(a - a.max())
    p = w / w.sum()
    lbar = float((p * l_neg).sum())
    loss = float(-kernels.log_sigmoid_np(gamma + s_pos)) - lbar
    c_pos = float(kernels.sigmoid_np(gamma + s_pos)) - 1.0
    c_neg = p * kernels.sigmoid_np(s_neg + gamma) - alpha * p * (l_neg - lbar)
    return loss, c_pos, c_neg


def loss(model: EmbeddingModel, positive: Triple, negatives: list[Triple], alpha: float = 1.0) -> float:
    """Self-adversarial negative-sampling loss for one positive."""
    value, _, _ = loss_gradient(model, positive, negatives, alpha)
    return value


def loss_gradient(
    model: EmbeddingModel, positive: Triple, negatives: list[Triple], alpha: float = 1.0
) -> tuple[float, dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Loss plus exact gradient tables covering only the ids in the batch.

    Returns ``(loss, entity_grads, relation_grads)`` with dicts keyed by id.
    The gradient is taken through the adversarial softmax weights, so it is
    the exact derivative of :func:`loss` and matches central finite
    differences.
    """
    if not negatives:
        raise ValueError("negatives must be non-empty")
    trips = [positive, *negatives]
    h = np.array([tr.head for tr in trips])
    r = np.array([tr.relation for tr in trips])
    t = np.array([tr.tail for tr in trips])
    scores = model.score_many(h, r, t)
    value, c_pos, c_neg = _adversarial_terms(scores[0], scores[1:], model.gamma, alpha)
    coef = np.concatenate([[c_pos], c_neg])

    ent_g: dict[int, np.ndarray] = {}
    rel_g: dict[int, np.ndarray] = {}

    def acc(table: dict[int, np.ndarray], idx: int, grad: np.ndarray) -> None:
        if idx in table:
            table[idx] = table[idx] + grad
        else:
            table[idx] = grad.copy()

    d = model.dim
    for k, tr in enumerate(trips):
        c = coef[k]
        if model.kind == KIND_TRANSE:
            diff = model.entities[tr.head] + model.relations[tr.relation] - model.entities[tr.tail]
            if model.norm_p == 1:
                unit = np.sign(diff)
            else:
                dist = float(np.sqrt((diff * diff).sum()))
                unit = diff / dist if dist > 0 else np.zeros_like(diff)
            acc(ent_g, tr.head, -c * unit)
            acc(ent_g, tr.tail, c * unit)
            acc(rel_g, tr.relation, -c * unit)
        else:
            h_re, h_im = model.entities[tr.head, :d], model.entities[tr.head, d:]
            theta = model.relations[tr.relation]
            cos, sin = np.cos(theta), np.sin(theta)
            hr_re = h_re * cos - h_im * sin
            hr_im = h_re * sin + h_im * cos
            dre = hr_re - model.entities[tr.tail, :d]
            dim = hr_im - model.entities[tr.tail, d:]
            dist = float(np.sqrt((dre * dre + dim * dim).sum()))
            cd = c / dist if dist > 0 else 0.0
            gh = np.concatenate([-cd * (dre * cos + dim * sin), cd * (dre * sin - dim * cos)])
            gt = np.concatenate([cd * dre, cd * dim])
            acc(ent_g, tr.head, gh)
            acc(ent_g, tr.tail, gt)
            acc(rel_g, tr.relation, cd * (dre * hr_im - dim * hr_re))
    return value, ent_g, rel_g


# ---------------------------------------------------------------------------
# training

def _role_layout(graph: KnowledgeGraph):
    """Entity ids grouped by role code, plus the per-entity code array."""
    role_code = {role: i for i, role in enumerate(ROLES)}
    role_of = np.array([role_code[tag] for tag in graph.entity_roles], dtype=np.int64)
    members = []
    offsets = np.zeros(len(ROLES) + 1, dtype=np.int64)
    for i, role in enumerate(ROLES):
        ids = graph.entities_with_role(role)
        members.append(ids)
        offsets[i + 1] = offsets[i] + ids.size
    return role_of, np.concatenate(members) if members else np.empty(0, np.int64), offsets


def triple_keys(graph: KnowledgeGraph) -> np.ndarray:
    """Sorted int64 encodings of the graph's triples for membership tests."""
    arr = graph.triples_array()
    if arr.size == 0:
        return np.empty(0, dtype=np.int64)
    keys = (arr[:, 0] * graph.n_relations + arr[:, 1]) * graph.n_entities + arr[:, 2]
    return np.sort(keys)


def train(graph: KnowledgeGraph, config: TrainConfig, kind: str = KIND_ROTATE) -> EmbeddingModel:
    """SGD over shuffled mini-batches with filtered role-aware negatives.

    With ``config.parallel`` off the run is bit-deterministic given the seed.
    Parallel mode processes batch slots hogwild-style (numba backend only)
    and its results vary run to run.
    """
    config.validate()
    if graph.n_triples == 0:
        raise ValueError("cannot train on an empty graph")
    model = init_model(
        kind, graph.n_entities, graph.n_relations, config,
        entity_labels=graph.entity_labels, relation_labels=graph.relation_labels,
    )
    positives = graph.triples_array()
    keys = triple_keys(graph)
    role_of, role_members, role_offsets = _role_layout(graph)
    n_rel, n_ent = graph.n_relations, graph.n_entities

    sgd_transe = kernels.transe_sgd
    sgd_rotate = kernels.rotate_sgd
    if config.parallel:
        if kernels.BACKEND != "numba":
            raise RuntimeError("parallel training requires the numba backend")
        hog = kernels._build_hogwild(kind)
        if kind == KIND_TRANSE:
            sgd_transe = hog
        else:
            sgd_rotate = hog

    rng = np.random.Generator(np.random.PCG64(config.seed))
    n_pos = positives.shape[0]
    B, N, R = config.batch_size, config.negatives, config.redraw_cap
    for epoch in range(config.epochs):
        order = rng.permutation(n_pos)
        for batch_no, start in enumerate(range(0, n_pos, B)):
            batch = np.ascontiguousarray(positives[order[start : start + B]])
            b = batch.shape[0]
            sides = rng.integers(0, 2, size=(b, N)).astype(np.uint8)
            uni = rng.random((b, N, R))
            negs = np.empty((b, N, 3), dtype=np.int64)
            fails = kernels.fill_negatives(
                batch, sides, uni, role_of, role_members, role_offsets, keys, n_rel, n_ent, negs
            )
            if fails:
                raise NegativeSamplingError(
                    f"{fails} negative slot(s) exhausted {R} draws at epoch {epoch} "
                    f"batch {batch_no} (candidate pool too dense)"
                )
            if kind == KIND_TRANSE:
                value = sgd_transe(
                    model.entities, model.relations, batch, negs,
                    config.margin, config.adversarial_temperature, config.learning_rate,
                    config.norm_p,
                )
            else:
                value = sgd_rotate(
                    model.entities, model.relations, batch, negs,
                    config.margin, config.adversarial_temperature, config.learning_rate,
                )
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {batch_no} "
                    f"(lr={config.learning_rate})"
                )
    if kind == KIND_ROTATE:
        np.mod(model.relations, 2.0 * np.pi, out=model.relations)
    return model


# ---------------------------------------------------------------------------
# checkpointing

def save_model(model: EmbeddingModel, path) -> None:
    """Versioned checkpoint; round-trips exactly (float64 preserved bit-for-bit)."""
    np.savez(
        path,
        version=np.int64(CHECKPOINT_VERSION),
        kind=model.kind,
        dim=np.int64(model.dim),
        gamma=np.float64(model.gamma),
        norm_p=np.int64(model.norm_p),
        entities=model.entities,
        relations=model.relations,
        entity_labels=np.array(model.entity_labels, dtype="U") if model.entity_labels else np.empty(0, dtype="U1"),
        relation_labels=np.array(model.relation_labels, dtype="U") if model.relation_labels else np.empty(0, dtype="U1"),
    )


def load_model(path) -> EmbeddingModel:
    with np.load(path, allow_pickle=False) as npz:
        version = int(npz["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return EmbeddingModel(
            kind=str(npz["kind"]),
            dim=int(npz["dim"]),
            entities=npz["entities"],
            relations=npz["relations"],
            gamma=float(npz["gamma"]),
            norm_p=int(npz["norm_p"]),
            entity_labels=[str(x) for x in npz["entity_labels"]],
            relation_labels=[str(x) for x in npz["relation_labels"]],
        )

"""Post-processing list sanitization: keep ``t`` top items, append ``r`` random ones.

The first ``W`` items of the ranked input form the working window.  With
shuffling on (the ``S_shuf`` variant) the window is permuted first, so the kept
prefix is a random ``t``-subset of the top ``W`` in random order; random
replacements are always drawn from the item universe minus the (unshuffled)
window, so the appended tail never overlaps the model's top ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ranker import RecommendationList

DEFAULT_SHUFFLE_WINDOW = 10


@dataclass
class SanitizeConfig:
    """(t, r, shuffle, W, seed): output is ``t`` kept + ``r`` random items."""

    keep_top: int
    random_count: int
    shuffle: bool = False
    shuffle_window: int = DEFAULT_SHUFFLE_WINDOW
    seed: int = 0

    @property
    def k(self) -> int:
        return self.keep_top + self.random_count

    def validate(self) -> None:
        if self.keep_top < 0 or self.random_count < 0:
            raise ValueError("keep_top and random_count must be non-negative")
        if self.k < 1:
            raise ValueError("output size t + r must be >= 1")
        if self.shuffle_window < 1:
            raise ValueError("shuffle_window must be >= 1")
        if self.keep_top > self.shuffle_window:
            raise ValueError(
                f"keep_top t={self.keep_top} exceeds shuffle window W={self.shuffle_window}"
            )
        if self.shuffle and self.shuffle_window < self.k:
            raise ValueError(
                f"shuffle window W={self.shuffle_window} must be >= K={self.k} when shuffling"
            )


def sanitize(
    ranked: RecommendationList,
    universe,
    config: SanitizeConfig,
    score_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> RecommendationList:
    """Sanitized list: ``t`` items kept from the top-``W`` window plus ``r``
    uniform draws (without replacement) from ``universe`` minus the window.

    ``ranked`` is the model's ranked output for the user and must carry at
    least ``W`` items when shuffling.  Kept items keep their scores and input
    order (post-shuffle); random items get scores from ``score_fn`` (an
    array-in, array-out scorer) or NaN.  Deterministic given the config seed.
    """
    config.validate()
    items = ranked.items
    scores = ranked.scores
    if config.shuffle and items.size < config.shuffle_window:
        raise ValueError(
            f"ranked list has {items.size} items, shuffle needs W={config.shuffle_window}"
        )
    w = min(config.shuffle_window, items.size)
    if w < config.keep_top:
        raise ValueError(f"ranked list too short: window {w} < t={config.keep_top}")
    window_items = items[:w]
    window_scores = scores[:w]

    rng = np.random.Generator(np.random.PCG64(config.seed))
    if config.shuffle:
        perm = rng.permutation(w)
        window_items = window_items[perm]
        window_scores = window_scores[perm]
    kept = window_items[: config.keep_top]
    kept_scores = window_scores[: config.keep_top]

    pool = np.setdiff1d(np.asarray(list(universe), dtype=np.int64), items[:w])
    if pool.size < config.random_count:
        raise ValueError(
            f"universe too small after excluding the top-{w} window: "
            f"need {config.random_count}, have {pool.size}"
        )
    if config.random_count:
        randoms = rng.choice(pool, size=config.random_count, replace=False)
        random_scores = (
            np.asarray(score_fn(randoms), dtype=np.float64)
            if score_fn is not None
            else np.full(config.random_count, np.nan)
        )
    else:
        randoms = np.empty(0, dtype=np.int64)
        random_scores = np.empty(0, dtype=np.float64)

    return RecommendationList(
        user=ranked.user,
        items=np.concatenate([kept, randoms]),
        scores=np.concatenate([kept_scores, random_scores]),
        provenance=["kept"] * config.keep_top + ["random"] * config.random_count,
    )

"""(h, r, ?) query answering: candidate ranking, top-K lists, hits@K."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .kg import ROLE_ITEM, KnowledgeGraph, Triple
from .kge import EmbeddingModel


@dataclass
class RecommendationList:
    """Ordered, scored, duplicate-free item list for one user.

    ``provenance`` marks each slot ``kept`` or ``random`` on sanitized lists;
    ranked lists produced by :func:`top_k` leave it ``None`` and carry
    non-increasing scores.
    """

    user: int
    items: np.ndarray
    scores: np.ndarray
    provenance: list[str] | None = None

    def __post_init__(self) -> None:
        self.items = np.asarray(self.items, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)

    @property
    def k(self) -> int:
        return int(self.items.size)

    def validate(self, require_sorted: bool = True) -> None:
        if self.items.size != self.scores.size:
            raise ValueError("items and scores must be parallel")
        if np.unique(self.items).size != self.items.size:
            raise ValueError("items must be unique")
        if require_sorted and self.items.size > 1 and np.any(np.diff(self.scores) > 0):
            raise ValueError("scores must be non-increasing")
        if self.provenance is not None and len(self.provenance) != self.items.size:
            raise ValueError("provenance must be parallel to items")


def rank_tails(
    model: EmbeddingModel,
    head: int,
    relation: int,
    candidates,
    exclude: Iterable[int] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Full descending-score ordering over ``candidates`` minus ``exclude``.

    Ties break by ascending entity id, so the ordering is deterministic and
    invariant under any strictly increasing transform of the scores.
    """
    cand = np.unique(np.asarray(list(candidates), dtype=np.int64))
    excluded = np.asarray(sorted(set(exclude)), dtype=np.int64)
    if excluded.size:
        cand = cand[~np.isin(cand, excluded)]
    if cand.size == 0:
        raise ValueError("no candidates left after exclusion")
    heads = np.full(cand.size, head, dtype=np.int64)
    rels = np.full(cand.size, relation, dtype=np.int64)
    scores = model.score_many(heads, rels, cand)
    order = np.lexsort((cand, -scores))
    return cand[order], scores[order]


def top_k(
    model: EmbeddingModel,
    user: int,
    relation: int,
    k: int,
    graph: KnowledgeGraph,
    exclude_known: bool = True,
) -> RecommendationList:
    """Top-``k`` item-role tails for ``(user, relation, ?)``.

    The user's known tails under ``relation`` in ``graph`` (their training
    interactions) are excluded from the candidate set.
    """
    items = graph.entities_with_role(ROLE_ITEM)
    exclude = graph.tails_of(user, relation) if exclude_known else ()
    ids, scores = rank_tails(model, user, relation, items, exclude)
    if ids.size < k:
        raise ValueError(f"only {ids.size} candidates available for user {user}, need k={k}")
    return RecommendationList(user=user, items=ids[:k].copy(), scores=scores[:k].copy())


def hits_at_k(
    model: EmbeddingModel,
    held_out: Sequence[Triple],
    k: int,
    graph: KnowledgeGraph,
) -> float:
    """Fraction of held-out triples whose tail ranks in the user's top-``k``.

    Filtered ranking: the user's known tails in ``graph`` and their other
    held-out tails are excluded from the candidate set when ranking each
    target.
    """
    if not held_out:
        raise ValueError("held_out must be non-empty")
    items = graph.entities_with_role(ROLE_ITEM)
    by_query: dict[tuple[int, int], list[int]] = {}
    for h, r, t in held_out:
        by_query.setdefault((h, r), []).append(t)

    hits = 0
    total = 0
    for (user, rel), tails in sorted(by_query.items()):
        heads = np.full(items.size, user, dtype=np.int64)
        rels = np.full(items.size, rel, dtype=np.int64)
        scores = model.score_many(heads, rels, items)
        excluded = set(graph.tails_of(user, rel)) | set(tails)
        allowed = ~np.isin(items, np.asarray(sorted(excluded), dtype=np.int64))
        for target in tails:
            pos = int(np.searchsorted(items, target))
            if pos >= items.size or items[pos] != target:
                raise KeyError(f"held-out tail {target} is not an item in the graph")
            s_t = scores[pos]
            higher = int(((scores > s_t) & allowed).sum())
            tied_before = int(((scores == s_t) & allowed & (items < target)).sum())
            hits += (higher + tied_before) < k
            total += 1
    return hits / total


def write_lists_tsv(lists: Sequence[RecommendationList], graph: KnowledgeGraph, path,
                    header_comment: str | None = None) -> None:
    """Dump lists as ``user<TAB>rank<TAB>item<TAB>score`` (+``kept|random`` when present)."""
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment is not None:
            fh.write(f"# {header_comment}\n")
        for lst in lists:
            user = graph.entity_label(lst.user)
            for rank, (item, score) in enumerate(zip(lst.items, lst.scores), 1):
                row = f"{user}\t{rank}\t{graph.entity_label(int(item))}\t{score!r}"
                if lst.provenance is not None:
                    row += f"\t{lst.provenance[rank - 1]}"
                fh.write(row + "\n")


def read_lists_tsv(path, graph: KnowledgeGraph) -> list[RecommendationList]:
    """Read a dump written by :func:`write_lists_tsv` (comment lines ignored)."""
    rows: dict[str, list[tuple[int, int, float, str | None]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (4, 5):
                raise ValueError(f"{path}:{lineno}: expected 4 or 5 fields, got {len(fields)}")
            user, rank, item, score = fields[:4]
            prov = fields[4] if len(fields) == 5 else None
            rows.setdefault(user, []).append(
                (int(rank), graph.entity_id(item), float(score), prov)
            )
    lists = []
    for user, entries in rows.items():
        entries.sort()
        items = np.array([e[1] for e in entries], dtype=np.int64)
        scores = np.array([e[2] for e in entries], dtype=np.float64)
        prov = [e[3] for e in entries] if entries and entries[0][3] is not None else None
        lists.append(RecommendationList(user=graph.entity_id(user), items=items, scores=scores, provenance=prov))
    return lists

"""Typed knowledge-graph storage.

A :class:`KnowledgeGraph` interns entity/relation labels to dense ids,
stores a duplicate-free triple list with lookup indices, and tags every
entity with a role (user, item, attribute value, other).  Construction is
single-writer; call :meth:`KnowledgeGraph.freeze` once built, after which
the graph is immutable and safe for concurrent readers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

ROLE_USER = "user"
ROLE_ITEM = "item"
ROLE_VALUE = "attribute-value"
ROLE_OTHER = "other"
ROLES = (ROLE_USER, ROLE_ITEM, ROLE_VALUE, ROLE_OTHER)


class RoleConflictError(ValueError):
    """A label was interned twice with incompatible specific roles."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """Interned (head, relation, tail) facts with per-entity role tags."""

    def __init__(self) -> None:
        self.entity_labels: list[str] = []
        self.entity_roles: list[str] = []
        self.relation_labels: list[str] = []
        self.triples: list[Triple] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_ids: dict[str, int] = {}
        self._triple_set: set[Triple] = set()
        self._by_head_rel: dict[tuple[int, int], list[int]] = {}
        self._tails_by_rel: dict[int, set[int]] = {}
        self._frozen = False
        self._role_members: dict[str, np.ndarray] = {}
        self._triples_array: np.ndarray | None = None

    # ------------------------------------------------------------------
    # interning

    def intern_entity(self, label: str, role: str = ROLE_OTHER) -> int:
        """Return the dense id for ``label``, interning it if new.

        Re-interning with the same role is idempotent.  ``other`` is
        compatible with any existing role; a specific role tightens an
        existing ``other`` tag; two different specific roles conflict.
        """
        if not label:
            raise ValueError("entity label must be a non-empty string")
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}, expected one of {ROLES}")
        eid = self._entity_ids.get(label)
        if eid is None:
            self._check_mutable()
            eid = len(self.entity_labels)
            self.entity_labels.append(label)
            self.entity_roles.append(role)
            self._entity_ids[label] = eid
            return eid
        current = self.entity_roles[eid]
        if role == current or role == ROLE_OTHER:
            return eid
        if current == ROLE_OTHER:
            self._check_mutable()
            self.entity_roles[eid] = role
            return eid
        raise RoleConflictError(
            f"label {label!r} already interned with role {current!r}, got {role!r}"
        )

    def intern_relation(self, label: str) -> int:
        if not label:
            raise ValueError("relation label must be a non-empty string")
        rid = self._relation_ids.get(label)
        if rid is None:
            self._check_mutable()
            rid = len(self.relation_labels)
            self.relation_labels.append(label)
            self._relation_ids[label] = rid
        return rid

    def entity_id(self, label: str) -> int:
        try:
            return self._entity_ids[label]
        except KeyError:
            raise KeyError(f"unknown entity label {label!r}") from None

    def relation_id(self, label: str) -> int:
        try:
            return self._relation_ids[label]
        except KeyError:
            raise KeyError(f"unknown relation label {label!r}") from None

    def has_entity(self, label: str) -> bool:
        return label in self._entity_ids

    def has_relation(self, label: str) -> bool:
        return label in self._relation_ids

    def entity_label(self, eid: int) -> str:
        return self.entity_labels[eid]

    def relation_label(self, rid: int) -> str:
        return self.relation_labels[rid]

    def entity_role(self, eid: int) -> str:
        return self.entity_roles[eid]

    # ------------------------------------------------------------------
    # triples

    def add(
        self,
        head_label: str,
        relation_label: str,
        tail_label: str,
        head_role: str = ROLE_OTHER,
        tail_role: str = ROLE_OTHER,
    ) -> Triple:
        """Intern all three labels and add the triple (duplicates are dropped)."""
        h = self.intern_entity(head_label, head_role)
        r = self.intern_relation(relation_label)
        t = self.intern_entity(tail_label, tail_role)
        return self.add_triple(h, r, t)

    def add_triple(self, head: int, relation: int, tail: int) -> Triple:
        self._check_mutable()
        if not (0 <= head < len(self.entity_labels) and 0 <= tail < len(self.entity_labels)):
            raise IndexError(f"entity id out of range in triple ({head}, {relation}, {tail})")
        if not 0 <= relation < len(self.relation_labels):
            raise IndexError(f"relation id {relation} out of range")
        triple = Triple(head, relation, tail)
        if triple in self._triple_set:
            return triple
        self._triple_set.add(triple)
        self.triples.append(triple)
        self._by_head_rel.setdefault((head, relation), []).append(tail)
        self._tails_by_rel.setdefault(relation, set()).add(tail)
        return triple

    def has_triple(self, head: int, relation: int, tail: int) -> bool:
        return Triple(head, relation, tail) in self._triple_set

    def tails_of(self, head: int, relation: int) -> list[int]:
        """Tails observed with (head, relation), in insertion order."""
        return list(self._by_head_rel.get((head, relation), ()))

    def candidate_tails(self, relation: int | str) -> set[int]:
        """All distinct tails observed with ``relation``."""
        rid = self.relation_id(relation) if isinstance(relation, str) else relation
        if not 0 <= rid < len(self.relation_labels):
            raise KeyError(f"unknown relation id {rid}")
        return set(self._tails_by_rel.get(rid, frozenset()))

    def entities_with_role(self, role: str) -> np.ndarray:
        """Sorted ids of all entities tagged ``role``."""
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        cached = self._role_members.get(role)
        if cached is not None:
            return cached
        ids = np.array(
            [i for i, tag in enumerate(self.entity_roles) if tag == role], dtype=np.int64
        )
        if self._frozen:
            self._role_members[role] = ids
        return ids

    def triples_array(self) -> np.ndarray:
        """Triples as an (N, 3) int64 array."""
        if self._triples_array is not None:
            return self._triples_array
        arr = np.asarray(self.triples, dtype=np.int64).reshape(len(self.triples), 3)
        if self._frozen:
            self._triples_array = arr
        return arr

    # ------------------------------------------------------------------
    # lifecycle

    def freeze(self) -> "KnowledgeGraph":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _check_mutable(self) -> None:
        if self._frozen:
            raise RuntimeError("graph is frozen; construction is single-writer")

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entity_labels == other.entity_labels
            and self.entity_roles == other.entity_roles
            and self.relation_labels == other.relation_labels
            and self.triples == other.triples
        )

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={self.n_entities}, relations={self.n_relations}, "
            f"triples={self.n_triples})"
        )

    def triple_labels(self) -> list[tuple[str, str, str]]:
        """Triples as (head, relation, tail) label tuples, in insertion order."""
        return [
            (self.entity_labels[h], self.relation_labels[r], self.entity_labels[t])
            for h, r, t in self.triples
        ]

    def export_tsv(self, path, header_comment: str | None = None) -> None:
        """Write the canonical triple file: ``head<TAB>relation<TAB>tail`` per line."""
        with open(path, "w", encoding="utf-8") as fh:
            if header_comment is not None:
                fh.write(f"# {header_comment}\n")
            for h, r, t in self.triples:
                fh.write(
                    f"{self.entity_labels[h]}\t{self.relation_labels[r]}\t{self.entity_labels[t]}\n"
                )

    @classmethod
    def with_vocab_of(cls, source: "KnowledgeGraph", triples: Iterable[Triple]) -> "KnowledgeGraph":
        """A new graph sharing ``source``'s vocabularies but holding only ``triples``."""
        g = cls()
        g.entity_labels = list(source.entity_labels)
        g.entity_roles = list(source.entity_roles)
        g.relation_labels = list(source.relation_labels)
        g._entity_ids = dict(source._entity_ids)
        g._relation_ids = dict(source._relation_ids)
        for tr in triples:
            g.add_triple(*tr)
        return g


@dataclass
class Split:
    """Train graph plus held-out interaction triples (ids resolve in ``train``)."""

    train: KnowledgeGraph
    held_out: list[Triple]
    seed: int


def split_interactions(graph: KnowledgeGraph, holdout_fraction: float, seed: int) -> Split:
    """Per-user uniform holdout of interaction (user -> item) triples.

    Each user holds out ``floor(fraction * n_u)`` of its interactions but
    always keeps at least one in train; users with a single interaction are
    kept entirely in train (warning, not failure).  Non-interaction triples
    all stay in train.  Deterministic given ``seed``.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    by_user: dict[int, list[int]] = {}
    interaction_idx: set[int] = set()
    for idx, (h, r, t) in enumerate(graph.triples):
        if graph.entity_roles[h] == ROLE_USER and graph.entity_roles[t] == ROLE_ITEM:
            by_user.setdefault(h, []).append(idx)
            interaction_idx.add(idx)

    rng = np.random.Generator(np.random.PCG64(seed))
    held: set[int] = set()
    single_users = 0
    for user in sorted(by_user):
        idxs = by_user[user]
        n = len(idxs)
        if n == 1:
            single_users += 1
            continue
        n_hold = int(np.floor(holdout_fraction * n))
        n_hold = min(n_hold, n - 1)
        if n_hold == 0:
            continue
        chosen = rng.choice(n, size=n_hold, replace=False)
        held.update(idxs[i] for i in chosen)
    if single_users:
        warnings.warn(
            f"{single_users} user(s) with a single interaction kept entirely in train",
            stacklevel=2,
        )

    train_triples = [tr for i, tr in enumerate(graph.triples) if i not in held]
    held_triples = [graph.triples[i] for i in sorted(held)]
    train = KnowledgeGraph.with_vocab_of(graph, train_triples).freeze()
    return Split(train=train, held_out=held_triples, seed=seed)

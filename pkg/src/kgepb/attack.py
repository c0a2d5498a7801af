"""Attribute inference against released recommendation lists.

The adversary sees one (possibly sanitized) top-K list per user, the
sensitive attribute values of the known users, and optionally public item
genre facts.  It builds its own knowledge graph from exactly that, trains an
embedding model on it, and ranks the candidate attribute values for each
target user; the attack succeeds when the true value ranks first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .ingest import RELATION_GENDER, RELATION_GENRE, RELATION_RECOMMENDED, ROLE_SCHEMA
from .kg import ROLE_ITEM, ROLE_USER, ROLE_VALUE, KnowledgeGraph
from .kge import KIND_ROTATE, EmbeddingModel, TrainConfig, train
from .ranker import RecommendationList, rank_tails
from .seeding import derive_seed


class LeakError(RuntimeError):
    """A target user's sensitive triple reached the attack graph."""


def _default_attack_train() -> TrainConfig:
    # paper-stated attack capacity: dim 70, 100 epochs, batch 64
    return TrainConfig(dim=70, epochs=100, batch_size=64)


@dataclass
class AttackSetup:
    sensitive_relation: str = RELATION_GENDER
    target_fraction: float = 0.10
    include_genres: bool = True
    model_kind: str = KIND_ROTATE
    train: TrainConfig = field(default_factory=_default_attack_train)
    seed: int = 0


@dataclass
class AttackRow:
    user: str
    true_value: str
    predicted: str
    success: bool
    ranking: list[str] = field(default_factory=list)


@dataclass
class AttackResult:
    rows: list[AttackRow]

    @property
    def i_u(self) -> float:
        return attack_success_rate(self.rows)

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment is not None:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["user", "true_value", "predicted", "success"])
            for row in self.rows:
                writer.writerow([row.user, row.true_value, row.predicted, int(row.success)])
            writer.writerow(["__summary__", "i_u", f"{self.i_u:.6f}", len(self.rows)])


def attack_success_rate(rows: Sequence[AttackRow]) -> float:
    """Fraction of target users whose true sensitive value was ranked first."""
    if not rows:
        raise ValueError("no target users")
    return sum(r.success for r in rows) / len(rows)


def split_attack_users(users, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform seeded partition into (known, target); |target| = round(fraction * n)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    users = np.unique(np.asarray(list(users), dtype=np.int64))
    n_target = int(round(fraction * users.size))
    if n_target == 0 or n_target == users.size:
        raise ValueError(f"fraction {fraction} yields an empty side for {users.size} users")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(users)
    return np.sort(perm[n_target:]), np.sort(perm[:n_target])


def build_attack_graph(
    released_lists: Sequence[RecommendationList],
    graph: KnowledgeGraph,
    setup: AttackSetup,
    known: np.ndarray,
    target: np.ndarray,
) -> KnowledgeGraph:
    """The adversary's graph: released lists + known attributes (+ genre facts).

    Entities are re-interned fresh, so ids are local to the attack graph.
    Target users contribute only ``recommended`` triples; a leak check runs
    on every build.
    """
    known_set = {int(u) for u in known}
    target_set = {int(u) for u in target}
    if known_set & target_set:
        raise ValueError("known and target user sets overlap")

    ag = KnowledgeGraph()
    for lst in released_lists:
        user_lab = graph.entity_label(lst.user)
        for item in lst.items:
            ag.add(user_lab, RELATION_RECOMMENDED, graph.entity_label(int(item)),
                   ROLE_USER, ROLE_ITEM)
    srel = graph.relation_id(setup.sensitive_relation)
    head_role, tail_role = ROLE_SCHEMA.get(setup.sensitive_relation, (ROLE_USER, ROLE_VALUE))
    for user in sorted(known_set):
        for value in graph.tails_of(user, srel):
            ag.add(graph.entity_label(user), setup.sensitive_relation,
                   graph.entity_label(value), head_role, tail_role)
    if setup.include_genres and graph.has_relation(RELATION_GENRE):
        grel = graph.relation_id(RELATION_GENRE)
        for h, r, t in graph.triples:
            if r == grel:
                ag.add(graph.entity_label(h), RELATION_GENRE, graph.entity_label(t),
                       ROLE_ITEM, ROLE_VALUE)
    ag.freeze()
    assert_no_leak(ag, graph, setup, target)
    return ag


def assert_no_leak(
    attack_graph: KnowledgeGraph,
    graph: KnowledgeGraph,
    setup: AttackSetup,
    target: np.ndarray,
) -> None:
    """Raise :class:`LeakError` if any target user's sensitive triple leaked."""
    if not attack_graph.has_relation(setup.sensitive_relation):
        return
    srel = attack_graph.relation_id(setup.sensitive_relation)
    for user in target:
        label = graph.entity_label(int(user))
        if attack_graph.has_entity(label):
            if attack_graph.tails_of(attack_graph.entity_id(label), srel):
                raise LeakError(
                    f"target user {label!r} has a {setup.sensitive_relation} triple "
                    "in the attack graph"
                )


def infer(
    model: EmbeddingModel,
    attack_graph: KnowledgeGraph,
    user: int,
    setup: AttackSetup,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate sensitive values ranked for one attack-graph user id.

    Candidates are the values observable to the adversary (distinct tails of
    the sensitive relation in the attack graph); the top value is the
    prediction, ties resolved by the deterministic tie rule.
    """
    srel = attack_graph.relation_id(setup.sensitive_relation)
    candidates = attack_graph.candidate_tails(srel)
    if not candidates:
        raise ValueError(f"no candidate values for {setup.sensitive_relation}")
    return rank_tails(model, user, srel, candidates)


def run_attack(
    graph: KnowledgeGraph,
    released_lists: Sequence[RecommendationList],
    setup: AttackSetup,
    known: np.ndarray | None = None,
    target: np.ndarray | None = None,
) -> AttackResult:
    """Full attack pipeline on released lists; returns per-target rows and I_u.

    When ``known``/``target`` are omitted the users are split here with the
    setup's fraction and seed.  Ground truth comes from the source graph;
    a target user with no ground-truth triple is an error.
    """
    users = sorted({lst.user for lst in released_lists})
    if known is None or target is None:
        known, target = split_attack_users(
            users, setup.target_fraction, derive_seed(setup.seed, "attack-split")
        )
    attack_graph = build_attack_graph(released_lists, graph, setup, known, target)
    config = replace(setup.train, seed=derive_seed(setup.seed, "attack-train"))
    model = train(attack_graph, config, kind=setup.model_kind)

    srel = graph.relation_id(setup.sensitive_relation)
    rows: list[AttackRow] = []
    for user in target:
        truths = graph.tails_of(int(user), srel)
        if not truths:
            raise ValueError(
                f"target user {graph.entity_label(int(user))!r} has no "
                f"{setup.sensitive_relation} ground truth"
            )
        true_label = graph.entity_label(truths[0])
        user_label = graph.entity_label(int(user))
        ranked_ids, _ = infer(model, attack_graph, attack_graph.entity_id(user_label), setup)
        ranking = [attack_graph.entity_label(int(v)) for v in ranked_ids]
        predicted = ranking[0]
        rows.append(
            AttackRow(
                user=user_label,
                true_value=true_label,
                predicted=predicted,
                success=predicted == true_label,
                ranking=ranking,
            )
        )
    return AttackResult(rows=rows)

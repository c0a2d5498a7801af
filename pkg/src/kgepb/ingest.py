"""Dataset ingestion: MovieLens 100K raw files and canonical TSV triple files.

The fixed relation schema is (user, interactedWith, movie), (user, hasGender, g),
(user, hasAgeGroup, a), (user, hasOccupation, o), (movie, hasGenre, x).  Every
rating row becomes one interaction triple regardless of rating value; repeated
rows are deduplicated.  Entity labels are prefixed by kind (``user:1``,
``movie:50``, ``gender:F``, ...) so vocabularies never collide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .kg import ROLE_ITEM, ROLE_OTHER, ROLE_USER, ROLE_VALUE, KnowledgeGraph

RELATION_INTERACTED = "interactedWith"
RELATION_GENDER = "hasGender"
RELATION_AGE = "hasAgeGroup"
RELATION_OCCUPATION = "hasOccupation"
RELATION_GENRE = "hasGenre"
RELATION_RECOMMENDED = "recommended"

# relation -> (head role, tail role); unknown relations tag endpoints "other"
ROLE_SCHEMA: dict[str, tuple[str, str]] = {
    RELATION_INTERACTED: (ROLE_USER, ROLE_ITEM),
    RELATION_RECOMMENDED: (ROLE_USER, ROLE_ITEM),
    RELATION_GENDER: (ROLE_USER, ROLE_VALUE),
    RELATION_AGE: (ROLE_USER, ROLE_VALUE),
    RELATION_OCCUPATION: (ROLE_USER, ROLE_VALUE),
    RELATION_GENRE: (ROLE_ITEM, ROLE_VALUE),
}

KIND_MOVIELENS = "movielens-100k"
KIND_TSV = "generic-tsv"

# upstream u.genre order; used when the file is absent
DEFAULT_GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)

AGE_GROUPS = ("<18", "18-24", "25-34", "35-44", "45-49", "50-55", "56+")
_AGE_UPPER = (18, 25, 35, 45, 50, 56)


class IngestError(ValueError):
    """Malformed input row; the message carries file and line number."""


def age_group(age: int) -> str:
    """Bucket a raw age into one of the seven age-group labels."""
    for upper, name in zip(_AGE_UPPER, AGE_GROUPS):
        if age < upper:
            return name
    return AGE_GROUPS[-1]


def user_label(raw_id: str) -> str:
    return f"user:{raw_id}"


def movie_label(raw_id: str) -> str:
    return f"movie:{raw_id}"


def _add(graph: KnowledgeGraph, head: str, relation: str, tail: str) -> None:
    head_role, tail_role = ROLE_SCHEMA.get(relation, (ROLE_OTHER, ROLE_OTHER))
    graph.add(head, relation, tail, head_role, tail_role)


def _read_genre_names(path: Path) -> tuple[str, ...]:
    if not path.exists():
        return DEFAULT_GENRES
    names: list[str] = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("|")
            if len(fields) != 2:
                raise IngestError(f"{path}:{lineno}: expected 2 pipe-separated fields, got {len(fields)}")
            names.append(fields[0])
    return tuple(names)


def _parse_items(path: Path, genres: tuple[str, ...]) -> dict[str, list[str]]:
    """movie id -> list of flagged genre names, in file order."""
    n_fields = 5 + len(genres)
    items: dict[str, list[str]] = {}
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("|")
            if len(fields) != n_fields:
                raise IngestError(
                    f"{path}:{lineno}: expected {n_fields} pipe-separated fields, got {len(fields)}"
                )
            mid = fields[0]
            flagged = []
            for name, flag in zip(genres, fields[5:]):
                if flag not in ("0", "1"):
                    raise IngestError(f"{path}:{lineno}: genre flag must be 0 or 1, got {flag!r}")
                if flag == "1":
                    flagged.append(name)
            items[mid] = flagged
    return items


def _parse_users(path: Path) -> list[tuple[str, int, str, str]]:
    """(user id, age, gender, occupation) rows, in file order."""
    rows: list[tuple[str, int, str, str]] = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("|")
            if len(fields) != 5:
                raise IngestError(f"{path}:{lineno}: expected 5 pipe-separated fields, got {len(fields)}")
            uid, age_str, gender, occupation = fields[0], fields[1], fields[2], fields[3]
            try:
                age = int(age_str)
            except ValueError:
                raise IngestError(f"{path}:{lineno}: age must be an integer, got {age_str!r}") from None
            rows.append((uid, age, gender, occupation))
    return rows


def load_movielens(directory) -> KnowledgeGraph:
    """Build a knowledge graph from a MovieLens 100K directory.

    Requires the standard ``u.data``, ``u.user``, ``u.item`` files; ``u.genre``
    is used for genre names when present.  Triple order: interactions in
    ``u.data`` order, then per-user demographics, then per-movie genres, so id
    assignment is a pure function of file contents.
    """
    d = Path(directory)
    ratings_path, users_path, items_path = d / "u.data", d / "u.user", d / "u.item"
    for p in (ratings_path, users_path, items_path):
        if not p.exists():
            raise FileNotFoundError(f"missing MovieLens file: {p}")

    genres = _read_genre_names(d / "u.genre")
    items = _parse_items(items_path, genres)
    users = _parse_users(users_path)

    g = KnowledgeGraph()
    with open(ratings_path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise IngestError(
                    f"{ratings_path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}"
                )
            uid, mid = fields[0], fields[1]
            if mid not in items:
                raise IngestError(f"{ratings_path}:{lineno}: rating references unknown movie id {mid!r}")
            _add(g, user_label(uid), RELATION_INTERACTED, movie_label(mid))
    for uid, age, gender, occupation in users:
        ul = user_label(uid)
        _add(g, ul, RELATION_GENDER, f"gender:{gender}")
        _add(g, ul, RELATION_AGE, f"age:{age_group(age)}")
        _add(g, ul, RELATION_OCCUPATION, f"occupation:{occupation}")
    for mid, flagged in items.items():
        ml = movie_label(mid)
        for name in flagged:
            _add(g, ml, RELATION_GENRE, f"genre:{name}")
    return g.freeze()


def load_tsv(path) -> KnowledgeGraph:
    """Load the canonical triple file: ``head<TAB>relation<TAB>tail`` per line.

    ``#``-prefixed comment lines and blank lines are ignored; any other line
    with a field count other than 3 is a hard error with its line number.
    Roles are assigned from the relation schema.
    """
    g = KnowledgeGraph()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            _add(g, fields[0], fields[1], fields[2])
    return g.freeze()


@dataclass
class DatasetManifest:
    """Which dataset to ingest and where it lives."""

    kind: str
    path: Path
    relations: tuple[str, ...] = (
        RELATION_INTERACTED,
        RELATION_GENDER,
        RELATION_AGE,
        RELATION_OCCUPATION,
        RELATION_GENRE,
    )

    def validate(self) -> None:
        if self.kind not in (KIND_MOVIELENS, KIND_TSV):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        path = Path(self.path)
        if self.kind == KIND_MOVIELENS:
            for name in ("u.data", "u.user", "u.item"):
                if not (path / name).exists():
                    raise FileNotFoundError(f"missing MovieLens file: {path / name}")
        elif not path.exists():
            raise FileNotFoundError(f"missing triple file: {path}")

    def load(self) -> KnowledgeGraph:
        self.validate()
        if self.kind == KIND_MOVIELENS:
            return load_movielens(self.path)
        return load_tsv(self.path)

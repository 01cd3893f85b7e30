"""Domain records and the delimited-file dataset loader.

A dataset lives in a directory with one delimited file per record type
(users, items, interactions, cases) and a YAML manifest that names the
files and maps their columns onto record fields.  See ``DatasetSchema``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import yaml

GENDERS = ("female", "male", "other", "undisclosed")
INTERACTION_KINDS = ("click", "purchase", "rating", "unspecified")
DOMAINS = ("ecommerce", "movie")
BIG_FIVE_TRAITS = (
    "openness",
    "conscientiousness",
    "extraversion",
    "agreeableness",
    "neuroticism",
)


class DatasetError(ValueError):
    """Raised for any problem found while loading or validating a dataset."""


def round_half_up(x: float) -> int:
    """Round to the nearest integer with ties going up (2.5 -> 3, -2.5 -> -2).

    Used everywhere a real value is mapped onto the Likert scale.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot round non-finite value {x!r}")
    # Decimal(repr) avoids binary artefacts such as 2.4999999999999996 for 0.1-steps.
    d = Decimal(repr(float(x)))
    return int((d + Decimal("0.5")).to_integral_value(rounding=ROUND_FLOOR))


@dataclass(frozen=True)
class Interaction:
    item_id: str
    timestamp: int
    kind: str = "unspecified"
    rating_value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in INTERACTION_KINDS:
            raise DatasetError(f"unknown interaction kind {self.kind!r}")
        if not math.isfinite(self.timestamp):
            raise DatasetError("interaction timestamp must be finite")
        if (self.kind == "rating") != (self.rating_value is not None):
            raise DatasetError(
                "rating_value must be present exactly when kind == 'rating'"
            )
        if self.rating_value is not None and not 1 <= self.rating_value <= 5:
            raise DatasetError(f"rating_value {self.rating_value} outside [1, 5]")


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    history: tuple[Interaction, ...] = ()
    age: int | None = None
    gender: str | None = None
    curiosity: float | None = None
    big_five: tuple[float, float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if not self.user_id:
            raise DatasetError("user_id must be non-empty")
        if self.gender is not None and self.gender not in GENDERS:
            raise DatasetError(f"unknown gender {self.gender!r}")
        if self.curiosity is not None and not math.isfinite(self.curiosity):
            raise DatasetError(f"user {self.user_id}: curiosity must be finite")
        if self.big_five is not None:
            if len(self.big_five) != 5 or not all(math.isfinite(v) for v in self.big_five):
                raise DatasetError(f"user {self.user_id}: big_five must be 5 finite reals")
        ts = [it.timestamp for it in self.history]
        if any(a > b for a, b in zip(ts, ts[1:])):
            raise DatasetError(f"user {self.user_id}: history not sorted by time")


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    genres: frozenset[str] = frozenset()
    description: str | None = None
    popularity_raw: float | None = None

    def __post_init__(self) -> None:
        if not self.item_id:
            raise DatasetError("item_id must be non-empty")


@dataclass(frozen=True)
class EvaluationCase:
    case_id: str
    user_id: str
    target_item_id: str
    ground_truth: int
    cutoff_timestamp: int

    def __post_init__(self) -> None:
        if self.ground_truth not in (1, 2, 3, 4, 5):
            raise DatasetError(
                f"case {self.case_id}: ground_truth {self.ground_truth!r} not in 1..5"
            )


@dataclass(frozen=True)
class Dataset:
    domain: str
    users: Mapping[str, UserRecord]
    items: Mapping[str, ItemRecord]
    cases: tuple[EvaluationCase, ...]
    digest: str = ""

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise DatasetError(f"unknown domain {self.domain!r}")
        # freeze the maps so the dataset can be shared across threads
        object.__setattr__(self, "users", MappingProxyType(dict(self.users)))
        object.__setattr__(self, "items", MappingProxyType(dict(self.items)))
        object.__setattr__(self, "cases", tuple(self.cases))
        for u in self.users.values():
            for it in u.history:
                if it.item_id not in self.items:
                    raise DatasetError(
                        f"user {u.user_id}: interaction references unknown item {it.item_id!r}"
                    )
        seen = set()
        for c in self.cases:
            if c.case_id in seen:
                raise DatasetError(f"duplicate case id {c.case_id!r}")
            seen.add(c.case_id)
            if c.user_id not in self.users:
                raise DatasetError(f"case {c.case_id}: unknown user {c.user_id!r}")
            if c.target_item_id not in self.items:
                raise DatasetError(f"case {c.case_id}: unknown item {c.target_item_id!r}")

    def ground_truth(self) -> list[int]:
        return [c.ground_truth for c in self.cases]

    def subset(self, case_ids: Iterable[str]) -> "Dataset":
        """Same users and items, restricted to the given cases (order kept)."""
        keep = set(case_ids)
        return Dataset(
            domain=self.domain,
            users=self.users,
            items=self.items,
            cases=tuple(c for c in self.cases if c.case_id in keep),
            digest=self.digest,
        )


# --------------------------------------------------------------------------
# schema + loading


_DEFAULT_COLUMNS: dict[str, dict[str, str]] = {
    "users": {
        "user_id": "user_id",
        "age": "age",
        "gender": "gender",
        "curiosity": "curiosity",
        **{t: t for t in BIG_FIVE_TRAITS},
    },
    "items": {
        "item_id": "item_id",
        "title": "title",
        "genres": "genres",
        "description": "description",
        "popularity_raw": "popularity_raw",
    },
    "interactions": {
        "user_id": "user_id",
        "item_id": "item_id",
        "timestamp": "timestamp",
        "kind": "kind",
        "rating_value": "rating_value",
    },
    "cases": {
        "case_id": "case_id",
        "user_id": "user_id",
        "target_item_id": "target_item_id",
        "ground_truth": "ground_truth",
        "cutoff_timestamp": "cutoff_timestamp",
    },
}


@dataclass
class DatasetSchema:
    """File names and column mapping for one dataset directory.

    ``columns`` maps, per record type, field name -> column header; fields
    left out use their own name as the header.  When
    ``ground_truth_variables`` is set, the case ground truth is derived from
    those three Likert columns (movie-style surveys) instead of read from a
    single column.
    """

    domain: str
    files: dict[str, str] = field(
        default_factory=lambda: {
            "users": "users.csv",
            "items": "items.csv",
            "interactions": "interactions.csv",
            "cases": "cases.csv",
        }
    )
    columns: dict[str, dict[str, str]] = field(default_factory=dict)
    delimiter: str = ","
    genre_separator: str = "|"
    ground_truth_variables: list[str] | None = None

    def column(self, record: str, name: str) -> str:
        return self.columns.get(record, {}).get(name, _DEFAULT_COLUMNS[record][name])

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetSchema":
        path = Path(path)
        if not path.exists():
            raise DatasetError(f"schema manifest not found: {path}")
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DatasetSchema":
        if "domain" not in raw:
            raise DatasetError("schema manifest must set 'domain'")
        schema = cls(domain=raw["domain"])
        if "files" in raw:
            schema.files = {**schema.files, **raw["files"]}
        schema.columns = {k: dict(v) for k, v in (raw.get("columns") or {}).items()}
        schema.delimiter = raw.get("delimiter", ",")
        schema.genre_separator = raw.get("genre_separator", "|")
        gt_vars = raw.get("ground_truth_variables")
        if gt_vars is not None and len(gt_vars) != 3:
            raise DatasetError("ground_truth_variables must name exactly 3 columns")
        schema.ground_truth_variables = list(gt_vars) if gt_vars else None
        return schema


def derive_movie_ground_truth(
    responses: Mapping[str, object], variable_names: Sequence[str]
) -> int:
    """Collapse three unexpectedness Likert answers into one rating.

    >>> derive_movie_ground_truth({"a": 1, "b": 2, "c": 2}, ["a", "b", "c"])
    2
    """
    if len(variable_names) != 3:
        raise DatasetError("exactly three variable names are required")
    values = []
    for name in variable_names:
        if name not in responses or responses[name] in (None, ""):
            raise DatasetError(f"missing survey variable {name!r}")
        v = float(responses[name])
        if v != int(v) or not 1 <= v <= 5:
            raise DatasetError(f"survey variable {name!r}={responses[name]!r} not in 1..5")
        values.append(int(v))
    return round_half_up(sum(values) / 3)


def visible_history(
    dataset: Dataset,
    case: EvaluationCase,
    k: int | None,
    kinds: Iterable[str] | None = None,
    exclude_item: str | None = None,
) -> list[Interaction]:
    """The ``k`` latest interactions strictly before the case cutoff, oldest first.

    ``k=None`` means no limit.  ``exclude_item`` drops every interaction with
    that item (callers pass the target so it never shows up as history).
    """
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    allowed = set(kinds) if kinds is not None else None
    out = [
        it
        for it in dataset.users[case.user_id].history
        if it.timestamp < case.cutoff_timestamp
        and (allowed is None or it.kind in allowed)
        and it.item_id != exclude_item
    ]
    return out if k is None else out[-k:]


def _read_rows(path: Path, delimiter: str) -> list[tuple[int, dict[str, str]]]:
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        rows = []
        for row in reader:
            if None in row:
                raise DatasetError(f"{path.name}:{reader.line_num}: too many fields")
            rows.append((reader.line_num, row))
    return rows


def _opt(row: Mapping[str, str], col: str) -> str | None:
    v = row.get(col)
    if v is None:
        return None
    v = v.strip()
    return v or None


def _req(row: Mapping[str, str], col: str, where: str) -> str:
    v = _opt(row, col)
    if v is None:
        raise DatasetError(f"{where}: missing value for column {col!r}")
    return v


def _number(text: str | None, where: str, kind=float):
    if text is None:
        return None
    try:
        v = kind(float(text)) if kind is int else kind(text)
    except ValueError:
        raise DatasetError(f"{where}: cannot parse {text!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(v):
        raise DatasetError(f"{where}: non-finite value {text!r}")
    return v


def load_dataset(path: str | Path, schema: DatasetSchema | None = None) -> Dataset:
    """Load and link a dataset directory.

    ``path`` is either the directory (then ``schema`` is required, or a
    ``manifest.yaml`` inside it is used) or the manifest file itself.
    """
    path = Path(path)
    if path.is_file():
        if schema is None:
            schema = DatasetSchema.from_file(path)
        root = path.parent
    elif path.is_dir():
        root = path
        if schema is None:
            schema = DatasetSchema.from_file(root / "manifest.yaml")
    else:
        raise DatasetError(f"dataset path not found: {path}")

    col = schema.column
    sha = hashlib.sha256()
    rows: dict[str, list[tuple[int, dict[str, str]]]] = {}
    for record in ("users", "items", "interactions", "cases"):
        file = root / schema.files[record]
        rows[record] = _read_rows(file, schema.delimiter)
        sha.update(record.encode())
        sha.update(file.read_bytes())

    items: dict[str, ItemRecord] = {}
    for line, row in rows["items"]:
        where = f"{schema.files['items']}:{line}"
        item_id = _req(row, col("items", "item_id"), where)
        if item_id in items:
            raise DatasetError(f"{where}: duplicate item id {item_id!r}")
        genres = _opt(row, col("items", "genres")) or ""
        items[item_id] = ItemRecord(
            item_id=item_id,
            title=_opt(row, col("items", "title")) or item_id,
            genres=frozenset(g.strip() for g in genres.split(schema.genre_separator) if g.strip()),
            description=_opt(row, col("items", "description")),
            popularity_raw=_number(_opt(row, col("items", "popularity_raw")), where),
        )

    histories: dict[str, list[Interaction]] = {}
    user_rows: dict[str, dict] = {}
    for line, row in rows["users"]:
        where = f"{schema.files['users']}:{line}"
        user_id = _req(row, col("users", "user_id"), where)
        if user_id in user_rows:
            raise DatasetError(f"{where}: duplicate user id {user_id!r}")
        traits = [_number(_opt(row, col("users", t)), where) for t in BIG_FIVE_TRAITS]
        if any(t is None for t in traits) and not all(t is None for t in traits):
            raise DatasetError(f"{where}: big-five traits must be all present or all absent")
        gender = _opt(row, col("users", "gender"))
        try:
            user_rows[user_id] = dict(
                age=_number(_opt(row, col("users", "age")), where, int),
                gender=gender.lower() if gender else None,
                curiosity=_number(_opt(row, col("users", "curiosity")), where),
                big_five=None if traits[0] is None else tuple(traits),
            )
        except DatasetError:
            raise
        histories[user_id] = []

    for line, row in rows["interactions"]:
        where = f"{schema.files['interactions']}:{line}"
        user_id = _req(row, col("interactions", "user_id"), where)
        item_id = _req(row, col("interactions", "item_id"), where)
        if user_id not in histories:
            raise DatasetError(f"{where}: dangling user reference {user_id!r}")
        if item_id not in items:
            raise DatasetError(f"{where}: dangling item reference {item_id!r}")
        try:
            histories[user_id].append(
                Interaction(
                    item_id=item_id,
                    timestamp=_number(_req(row, col("interactions", "timestamp"), where), where, int),
                    kind=_opt(row, col("interactions", "kind")) or "unspecified",
                    rating_value=_number(_opt(row, col("interactions", "rating_value")), where),
                )
            )
        except DatasetError as exc:
            if str(exc).startswith(where):
                raise
            raise DatasetError(f"{where}: {exc}") from None

    users: dict[str, UserRecord] = {}
    for user_id, attrs in user_rows.items():
        hist = sorted(histories[user_id], key=lambda it: it.timestamp)  # stable
        try:
            users[user_id] = UserRecord(user_id=user_id, history=tuple(hist), **attrs)
        except DatasetError as exc:
            raise DatasetError(f"{schema.files['users']}: {exc}") from None

    cases: list[EvaluationCase] = []
    seen_cases: set[str] = set()
    for line, row in rows["cases"]:
        where = f"{schema.files['cases']}:{line}"
        user_id = _req(row, col("cases", "user_id"), where)
        item_id = _req(row, col("cases", "target_item_id"), where)
        if user_id not in users:
            raise DatasetError(f"{where}: dangling user reference {user_id!r}")
        if item_id not in items:
            raise DatasetError(f"{where}: dangling item reference {item_id!r}")
        case_id = _opt(row, col("cases", "case_id")) or f"{user_id}:{item_id}"
        if case_id in seen_cases:
            raise DatasetError(f"{where}: duplicate case id {case_id!r}")
        seen_cases.add(case_id)
        if schema.ground_truth_variables:
            try:
                gt = derive_movie_ground_truth(row, schema.ground_truth_variables)
            except DatasetError as exc:
                raise DatasetError(f"{where}: {exc}") from None
        else:
            gt = _number(_req(row, col("cases", "ground_truth"), where), where)
            if gt != int(gt):
                raise DatasetError(f"{where}: ground truth {gt} is not an integer")
            gt = int(gt)
        cutoff = _number(_opt(row, col("cases", "cutoff_timestamp")), where, int)
        if cutoff is None:
            hist = users[user_id].history
            cutoff = (hist[-1].timestamp + 1) if hist else 0
        try:
            cases.append(EvaluationCase(case_id, user_id, item_id, gt, cutoff))
        except DatasetError as exc:
            raise DatasetError(f"{where}: {exc}") from None

    if not cases:
        raise DatasetError("no evaluation cases")

    return Dataset(
        domain=schema.domain,
        users=users,
        items=items,
        cases=tuple(cases),
        digest=sha.hexdigest(),
    )

"""Labeled text datasets: loading, label merging, near-duplicate removal, splits."""

from __future__ import annotations

import csv
import json
import math
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateError, FormatError, ValidationError


@dataclass(frozen=True)
class Instance:
    id: str
    text: str
    gold_label: str
    domain_tag: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError(f"instance {self.id!r} has empty text")


@dataclass(frozen=True)
class Dataset:
    """Ordered instances plus the class schema that fixes every class index."""

    schema: tuple[str, ...]
    instances: tuple[Instance, ...]

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "instances", tuple(self.instances))
        if len(set(self.schema)) != len(self.schema):
            raise ValidationError(f"schema has repeated labels: {list(self.schema)}")
        known = set(self.schema)
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise ValidationError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)
            if inst.gold_label not in known:
                raise ValidationError(
                    f"instance {inst.id!r} has label {inst.gold_label!r} outside schema {list(self.schema)}"
                )

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def ids(self) -> list[str]:
        return [inst.id for inst in self.instances]

    def by_id(self) -> dict[str, Instance]:
        return {inst.id: inst for inst in self.instances}

    def label_counts(self) -> dict[str, int]:
        counts = Counter(inst.gold_label for inst in self.instances)
        return {label: counts.get(label, 0) for label in self.schema}

    def subset(self, ids: Iterable[str]) -> "Dataset":
        lookup = self.by_id()
        return Dataset(self.schema, tuple(lookup[i] for i in ids))


@dataclass(frozen=True)
class ColumnFormat:
    """Which columns/keys hold the id, text and label of each row.

    ``kind`` is ``"csv"`` or ``"jsonl"``; when left as None it is taken from the
    file suffix. With ``auto_id`` the id column is ignored and ids are the
    zero-padded 1-based row number.
    """

    id: str = "id"
    text: str = "text"
    label: str = "label"
    domain_tag: str | None = None
    auto_id: bool = False
    kind: str | None = None
    schema: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ValidationError(f"train_ratio must lie strictly in (0, 1), got {self.train_ratio}")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass(frozen=True)
class DedupConfig:
    canonicalize: bool = True
    jaccard_threshold: float = 0.9
    shingle_size: int = 1

    def __post_init__(self):
        if not 0.0 < self.jaccard_threshold <= 1.0:
            raise ValidationError("jaccard_threshold must lie in (0, 1]")
        if self.shingle_size < 1:
            raise ValidationError("shingle_size must be >= 1")


def _file_kind(path: Path, fmt: ColumnFormat) -> str:
    if fmt.kind:
        kind = fmt.kind.lower()
    elif path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        kind = "jsonl"
    else:
        kind = "csv"
    if kind not in ("csv", "jsonl"):
        raise FormatError(f"unsupported dataset format {fmt.kind!r}")
    return kind


def _iter_rows(path: Path, kind: str):
    """Yield (line_number, mapping) pairs."""
    with open(path, encoding="utf-8", newline="") as fh:
        if kind == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise FormatError(f"{path}: CSV file has no header row")
            for row in reader:
                yield reader.line_num, row
        else:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict):
                    raise FormatError(f"{path}: line {lineno}: expected a JSON object")
                yield lineno, obj


def load_dataset(path: str | Path, fmt: ColumnFormat | None = None) -> Dataset:
    fmt = fmt or ColumnFormat()
    path = Path(path)
    kind = _file_kind(path, fmt)
    required = [fmt.text, fmt.label] + ([] if fmt.auto_id else [fmt.id])
    instances = []
    seen: set[str] = set()
    for n, (lineno, row) in enumerate(_iter_rows(path, kind), start=1):
        for col in required:
            if col not in row:
                raise FormatError(f"{path}: missing column {col!r} (row at line {lineno})")
        inst_id = f"{n:06d}" if fmt.auto_id else str(row[fmt.id])
        text = row[fmt.text]
        if text is None or not str(text).strip():
            raise ValidationError(f"{path}: empty text in row at line {lineno}")
        if inst_id in seen:
            raise ValidationError(f"{path}: duplicate id {inst_id!r} at line {lineno}")
        seen.add(inst_id)
        tag = row.get(fmt.domain_tag) if fmt.domain_tag else None
        instances.append(Instance(inst_id, str(text), str(row[fmt.label]), tag or None))
    schema = fmt.schema or tuple(sorted({inst.gold_label for inst in instances}))
    return Dataset(tuple(schema), tuple(instances))


def save_dataset(ds: Dataset, path: str | Path, fmt: ColumnFormat | None = None) -> None:
    fmt = fmt or ColumnFormat()
    path = Path(path)
    kind = _file_kind(path, fmt)
    cols = [fmt.id, fmt.text, fmt.label] + ([fmt.domain_tag] if fmt.domain_tag else [])

    def as_row(inst):
        row = {fmt.id: inst.id, fmt.text: inst.text, fmt.label: inst.gold_label}
        if fmt.domain_tag:
            row[fmt.domain_tag] = inst.domain_tag or ""
        return row

    with open(path, "w", encoding="utf-8", newline="") as fh:
        if kind == "csv":
            writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            writer.writeheader()
            for inst in ds:
                writer.writerow(as_row(inst))
        else:
            for inst in ds:
                fh.write(json.dumps(as_row(inst), ensure_ascii=False) + "\n")


def merge_labels(ds: Dataset, mapping: Mapping[str, str]) -> Dataset:
    """Relabel every instance; the new schema is the mapping's image in schema order."""
    missing = [label for label in ds.schema if label not in mapping]
    if missing:
        raise ValidationError(f"label mapping is incomplete; no target for {missing}")
    schema = tuple(dict.fromkeys(mapping[label] for label in ds.schema))
    instances = tuple(
        Instance(inst.id, inst.text, mapping[inst.gold_label], inst.domain_tag) for inst in ds
    )
    return Dataset(schema, instances)


def canonicalize_text(text: str) -> str:
    """Casefold, put spaces around punctuation, collapse whitespace."""
    out = []
    for ch in text.casefold():
        if unicodedata.category(ch).startswith("P"):
            out.append(f" {ch} ")
        else:
            out.append(ch)
    return " ".join("".join(out).split())


def _shingles(tokens: Sequence[str], size: int) -> frozenset:
    if len(tokens) <= size:
        return frozenset([tuple(tokens)])
    return frozenset(tuple(tokens[i:i + size]) for i in range(len(tokens) - size + 1))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def remove_near_duplicates(ds: Dataset, cfg: DedupConfig | None = None) -> Dataset:
    """Keep the first instance of every near-duplicate group, in dataset order.

    Each instance is compared against the instances already kept, so the result
    contains no near-duplicate pair and a second pass is a no-op.
    """
    cfg = cfg or DedupConfig()
    kept: list[Instance] = []
    kept_shingles: list[frozenset] = []
    exact: set[str] = set()
    index: dict[tuple, list[int]] = defaultdict(list)
    thr = cfg.jaccard_threshold
    for inst in ds:
        key = canonicalize_text(inst.text) if cfg.canonicalize else inst.text
        if key in exact:
            continue
        sh = _shingles(key.split(), cfg.shingle_size)
        lo, hi = thr * len(sh), len(sh) / thr
        candidates = {j for s in sh for j in index.get(s, ())}
        if any(
            lo <= len(kept_shingles[j]) <= hi and jaccard(sh, kept_shingles[j]) >= thr
            for j in sorted(candidates)
        ):
            continue
        exact.add(key)
        pos = len(kept)
        kept.append(inst)
        kept_shingles.append(sh)
        for s in sh:
            index[s].append(pos)
    return Dataset(ds.schema, tuple(kept))


def train_size(n: int, train_ratio: float) -> int:
    # exact decimal arithmetic so that 9310 * 0.8 floors to 7448, not 7447
    return math.floor(n * Fraction(str(train_ratio)))


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` with the split seed; return (train, test) positions."""
    if n <= 0:
        raise DegenerateError("cannot split an empty collection")
    n_train = train_size(n, spec.train_ratio)
    if n_train == 0 or n_train == n:
        raise DegenerateError(
            f"split of {n} items at ratio {spec.train_ratio} leaves an empty side ({n_train}/{n - n_train})"
        )
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:]


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(len(ds), spec)
    insts = ds.instances
    return (
        Dataset(ds.schema, tuple(insts[i] for i in train_idx)),
        Dataset(ds.schema, tuple(insts[i] for i in test_idx)),
    )


def write_split_manifest(path: str | Path, train_ids: Sequence[str], test_ids: Sequence[str], spec: SplitSpec) -> None:
    payload = {
        "seed": spec.seed,
        "train_ratio": spec.train_ratio,
        "train": list(train_ids),
        "test": list(test_ids),
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def read_split_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))

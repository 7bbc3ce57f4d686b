"""Run configuration: a single YAML (or JSON) file with nested sections.

Relative paths are resolved against the config file's directory. The
``AEC_OUT`` environment variable, when set, replaces ``paths.output_dir``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import yaml

from .corpus import ColumnFormat, DedupConfig, SplitSpec
from .errors import ConfigError, ValidationError
from .forest import DEFAULT_GRID, ForestParams

STAGES = ("prepare", "base", "errorset", "train", "rank", "evaluate", "report")

_SECTIONS = {
    "paths", "columns", "schema", "label_mapping", "dedup", "split", "features", "base",
    "forest", "ks", "explain", "seeds", "annotations",
}


@dataclass(frozen=True)
class Seeds:
    split: int = 0
    undersample: int = 0
    base: int = 0
    forest: int = 0


@dataclass(frozen=True)
class RunConfig:
    eval_dataset: Path
    annotations: Path
    lexicon: Path
    output_dir: Path
    markers: Path | None = None
    predictions: Path | None = None
    base_dataset: Path | None = None
    columns: ColumnFormat = ColumnFormat()
    schema: tuple[str, ...] | None = None
    label_mapping: dict[str, str] | None = None
    dedup: DedupConfig | None = None
    split: SplitSpec = SplitSpec()
    min_count: int = 1
    binary_conv: bool = False
    workers: int = 1
    strict_annotations: bool = True
    base_epochs: int = 30
    base_learning_rate: float = 0.5
    base_batch_size: int = 32
    renormalize: bool = False
    cv_folds: int = 5
    grid: tuple[ForestParams, ...] = DEFAULT_GRID
    ks: tuple[int, ...] = (10, 20, 30, 40, 50)
    explain_per_sample: int = 10
    top_features: int = 100
    seeds: Seeds = Seeds()

    def input_paths(self) -> dict[str, Path]:
        names = ("eval_dataset", "annotations", "lexicon", "markers", "predictions", "base_dataset")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def section(self, *names: str) -> dict:
        """Plain-data view of some fields, used to fingerprint stages."""
        out = {}
        for n in names:
            v = getattr(self, n)
            if hasattr(v, "__dataclass_fields__"):
                v = asdict(v)
            elif isinstance(v, tuple) and v and hasattr(v[0], "__dataclass_fields__"):
                v = [asdict(x) for x in v]
            elif isinstance(v, Path):
                v = str(v)
            out[n] = v
        return out


def _require_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"config section {where!r} must be a mapping")
    return dict(value)


def _int(value, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{where} must be an integer >= {minimum}, got {value!r}")
    return value


def load_config(path: str | Path, overrides: Mapping | None = None) -> RunConfig:
    """Parse and validate a run configuration; every referenced input must exist."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base_dir = path.parent
    overrides = dict(overrides or {})

    paths = _require_mapping(raw.get("paths"), "paths")

    def resolve(key: str, required: bool) -> Path | None:
        value = paths.get(key)
        if value is None:
            if required:
                raise ConfigError(f"paths.{key} is required")
            return None
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    inputs = {
        "eval_dataset": resolve("eval_dataset", True),
        "annotations": resolve("annotations", True),
        "lexicon": resolve("lexicon", True),
        "markers": resolve("markers", False),
        "predictions": resolve("predictions", False),
        "base_dataset": resolve("base_dataset", False),
    }
    for key, p in inputs.items():
        if p is not None and not p.is_file():
            raise ConfigError(f"paths.{key}: file not found: {p}")
    if inputs["predictions"] is None and inputs["base_dataset"] is None:
        raise ConfigError("either paths.predictions or paths.base_dataset must be given")

    out_env = os.environ.get("AEC_OUT")
    if out_env:
        output_dir = Path(out_env)
    else:
        output_dir = resolve("output_dir", False) or base_dir / "aec-out"

    cols = _require_mapping(raw.get("columns"), "columns")
    try:
        columns = ColumnFormat(**{k: cols[k] for k in cols if k in ("id", "text", "label", "domain_tag", "auto_id", "kind")})
    except TypeError as exc:
        raise ConfigError(f"columns: {exc}") from None

    schema = raw.get("schema")
    if schema is not None:
        if not isinstance(schema, list) or not schema or len(set(map(str, schema))) != len(schema):
            raise ConfigError("schema must be a non-empty list of distinct labels")
        schema = tuple(str(s) for s in schema)

    mapping = raw.get("label_mapping")
    if mapping is not None:
        mapping = {str(k): str(v) for k, v in _require_mapping(mapping, "label_mapping").items()}

    dd = _require_mapping(raw.get("dedup"), "dedup")
    dedup = None
    if dd.pop("enabled", bool(dd)):
        try:
            dedup = DedupConfig(**dd)
        except (TypeError, ValidationError) as exc:
            raise ConfigError(f"dedup: {exc}") from None

    seeds_raw = _require_mapping(raw.get("seeds"), "seeds")
    seeds = Seeds(**{k: _int(seeds_raw[k], f"seeds.{k}") for k in seeds_raw if k in Seeds.__dataclass_fields__})

    sp = _require_mapping(raw.get("split"), "split")
    try:
        split = SplitSpec(float(sp.get("train_ratio", 0.8)), seeds.split)
    except ValidationError as exc:
        raise ConfigError(f"split: {exc}") from None

    feats = _require_mapping(raw.get("features"), "features")
    base = _require_mapping(raw.get("base"), "base")
    ann = _require_mapping(raw.get("annotations"), "annotations")
    explain = _require_mapping(raw.get("explain"), "explain")

    forest = _require_mapping(raw.get("forest"), "forest")
    grid_raw = forest.get("grid")
    try:
        if grid_raw is None:
            grid = tuple(ForestParams(**{**asdict(p), "seed": seeds.forest}) for p in DEFAULT_GRID)
        else:
            if not isinstance(grid_raw, list) or not grid_raw:
                raise ConfigError("forest.grid must be a non-empty list")
            grid = tuple(ForestParams(**{**dict(g), "seed": seeds.forest}) for g in grid_raw)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"forest.grid: {exc}") from None

    ks = raw.get("ks", [10, 20, 30, 40, 50])
    if (not isinstance(ks, list) or not ks or any(isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in ks)
            or any(b <= a for a, b in zip(ks, ks[1:]))):
        raise ConfigError(f"ks must be strictly increasing positive integers, got {ks!r}")

    cfg = RunConfig(
        output_dir=output_dir,
        columns=columns,
        schema=schema,
        label_mapping=mapping,
        dedup=dedup,
        split=split,
        min_count=_int(feats.get("min_count", 1), "features.min_count", 1),
        binary_conv=bool(overrides.get("binary_conv") or feats.get("binary_conv", False)),
        workers=_int(overrides.get("workers") or feats.get("workers", 1), "features.workers", 1),
        strict_annotations=bool(ann.get("strict", True)),
        base_epochs=_int(base.get("epochs", 30), "base.epochs", 1),
        base_learning_rate=float(base.get("learning_rate", 0.5)),
        base_batch_size=_int(base.get("batch_size", 32), "base.batch_size", 1),
        renormalize=bool(overrides.get("renormalize") or base.get("renormalize", False)),
        cv_folds=_int(forest.get("k", 5), "forest.k", 2),
        grid=grid,
        ks=tuple(ks),
        explain_per_sample=_int(explain.get("per_sample", 10), "explain.per_sample", 1),
        top_features=_int(explain.get("top_features", 100), "explain.top_features", 1),
        seeds=seeds,
        **inputs,
    )
    return cfg

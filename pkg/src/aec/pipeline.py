"""The error-characterization workflow.

Base predictions are compared with gold labels to build an error dataset,
which is balanced, split, and used to train a random-forest error classifier
over interpretable features. Unlabeled instances are then ranked by their
predicted probability of being mispredicted, and the ranking is scored
against least-confidence uncertainty sampling with precision at K.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .base_model import Prediction
from .corpus import Dataset, SplitSpec, split_indices
from .errors import ConfigError, DegenerateError, JoinError, RangeError, ValidationError
from .features import FeatureSpace, FeatureVector, build_feature_space, build_matrix, split_name
from .forest import DEFAULT_GRID, CVReport, ForestModel, ForestParams, cross_validate, predict_error_probs, train_forest


@dataclass(frozen=True)
class ErrorRecord:
    instance_id: str
    features: FeatureVector
    prediction: Prediction
    gold_label: str
    is_error: bool


@dataclass(frozen=True)
class ErrorDataset:
    records: tuple[ErrorRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.instance_id in seen:
                raise ValidationError(f"duplicate record id {r.instance_id!r}")
            seen.add(r.instance_id)
            if r.is_error != (r.prediction.predicted_label != r.gold_label):
                raise ValidationError(f"record {r.instance_id!r}: is_error disagrees with its labels")

    def __len__(self):
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.instance_id for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(r.is_error) for r in self.records], dtype=int)

    def counts(self) -> tuple[int, int]:
        """(correct, error) record counts."""
        n_err = sum(r.is_error for r in self.records)
        return len(self.records) - n_err, n_err

    def truth(self) -> dict[str, bool]:
        return {r.instance_id: r.is_error for r in self.records}


def build_error_dataset(preds: Sequence[Prediction], gold: Dataset,
                        vectors: Mapping[str, FeatureVector]) -> ErrorDataset:
    lookup = gold.by_id()
    records = []
    for p in preds:
        if p.instance_id not in lookup:
            raise JoinError(f"prediction id {p.instance_id!r} has no gold instance")
        if p.instance_id not in vectors:
            raise JoinError(f"prediction id {p.instance_id!r} has no feature vector")
        label = lookup[p.instance_id].gold_label
        records.append(ErrorRecord(p.instance_id, vectors[p.instance_id], p, label, p.predicted_label != label))
    return ErrorDataset(tuple(records))


def base_accuracy(eds: ErrorDataset) -> float:
    if not len(eds):
        raise DegenerateError("accuracy of an empty error dataset is undefined")
    correct, _ = eds.counts()
    return correct / len(eds)


def error_rate(eds: ErrorDataset) -> float:
    if not len(eds):
        raise DegenerateError("error rate of an empty error dataset is undefined")
    _, errors = eds.counts()
    return errors / len(eds)


def balance_by_undersampling(eds: ErrorDataset, seed: int = 0) -> ErrorDataset:
    """Randomly drop majority-class records down to the minority count; output sorted by id."""
    errors = [r for r in eds.records if r.is_error]
    correct = [r for r in eds.records if not r.is_error]
    if not errors or not correct:
        raise DegenerateError("balancing needs both correct and erroneous predictions")
    minority, majority = (errors, correct) if len(errors) <= len(correct) else (correct, errors)
    keep = np.random.default_rng(seed).choice(len(majority), size=len(minority), replace=False)
    kept = minority + [majority[i] for i in keep]
    return ErrorDataset(tuple(sorted(kept, key=lambda r: r.instance_id)))


def split_error_dataset(eds: ErrorDataset, spec: SplitSpec) -> tuple[ErrorDataset, ErrorDataset]:
    train_idx, test_idx = split_indices(len(eds), spec)
    recs = eds.records
    return ErrorDataset(tuple(recs[i] for i in train_idx)), ErrorDataset(tuple(recs[i] for i in test_idx))


@dataclass
class AECModel:
    space: FeatureSpace
    forest: ForestModel
    cv: CVReport

    def to_dict(self) -> dict:
        return {"space": list(self.space.names), "min_count": self.space.min_count,
                "forest": self.forest.to_dict(), "cv": self.cv.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "AECModel":
        space = FeatureSpace(tuple(d["space"]), d.get("min_count", 1))
        forest = ForestModel.from_dict(d["forest"])
        return cls(space, forest, CVReport.from_dict(d["cv"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AECModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train_error_classifier(train: ErrorDataset, min_count: int = 1, grid: Sequence[ForestParams] = DEFAULT_GRID,
                           k: int = 5, cv_seed: int = 0) -> AECModel:
    labels = train.labels
    if len(labels) == 0 or labels.min() == labels.max():
        raise DegenerateError("error-classifier training data must contain both correct and erroneous records")
    space = build_feature_space([r.features for r in train.records], min_count)
    if not len(space):
        raise ConfigError(f"no feature occurs in at least min_count={min_count} training records")
    matrix = build_matrix(train.ids, {r.instance_id: r.features for r in train.records}, space)
    cv = cross_validate(matrix, labels, k=k, grid=grid, seed=cv_seed)
    forest = train_forest(matrix, labels, cv.chosen_params)
    return AECModel(space, forest, cv)


@dataclass(frozen=True)
class RankedSample:
    instance_id: str
    error_prob: float
    rank: int
    explanation: tuple[tuple[str, float, float], ...] = ()


def explain_sample(v: Mapping[str, float], importances: Mapping[str, float], m: int = 10) -> list[tuple[str, float, float]]:
    """Features present in ``v`` ordered by global importance (name breaks ties)."""
    if m < 1:
        raise RangeError("explanation size must be >= 1")
    present = [(name, value, importances.get(name, 0.0)) for name, value in v.items() if value > 0]
    present = [item for item in present if item[2] > 0]
    present.sort(key=lambda item: (-item[2], item[0]))
    return present[:m]


def rank_errors(model: AECModel, instances: Sequence[tuple[str, FeatureVector]], explain: int = 10) -> list[RankedSample]:
    """Score unlabeled instances and order them by error probability (id breaks ties)."""
    if not instances:
        return []
    ids = [i for i, _ in instances]
    vectors = dict(instances)
    if len(vectors) != len(ids):
        raise ValidationError("instance ids passed to rank_errors must be unique")
    matrix = build_matrix(ids, vectors, model.space)
    probs = predict_error_probs(model.forest, matrix.rows)
    order = sorted(range(len(ids)), key=lambda j: (-probs[j], ids[j]))
    imps = model.forest.importances
    return [
        RankedSample(ids[j], float(probs[j]), rank, tuple(explain_sample(vectors[ids[j]], imps, explain)))
        for rank, j in enumerate(order, start=1)
    ]


def _ranking_ids(ranking: Sequence) -> list[str]:
    return [r.instance_id if isinstance(r, RankedSample) else r for r in ranking]


def precision_at_k(ranked: Sequence[RankedSample | str], truth: Mapping[str, bool], k: int) -> float:
    """Fraction of true errors among the first ``k`` ranked ids."""
    ids = _ranking_ids(ranked)
    if not 1 <= k <= len(ids):
        raise RangeError(f"K={k} outside 1..{len(ids)}")
    hits = 0
    for i in ids[:k]:
        if i not in truth:
            raise JoinError(f"ranked id {i!r} has no ground truth")
        hits += bool(truth[i])
    return hits / k


@dataclass(frozen=True)
class EvaluationRow:
    k: int
    scores: dict[str, float]


@dataclass(frozen=True)
class EvaluationTable:
    rows: tuple[EvaluationRow, ...]
    samplers: tuple[str, ...] = ("uncertainty", "aec")

    def __post_init__(self):
        ks = [r.k for r in self.rows]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValidationError(f"K values must be strictly increasing: {ks}")
        for r in self.rows:
            if any(not 0.0 <= v <= 1.0 for v in r.scores.values()):
                raise ValidationError(f"P@{r.k} outside [0, 1]")

    def column(self, sampler: str) -> list[float]:
        return [r.scores[sampler] for r in self.rows]

    def to_dict(self) -> dict:
        return {"samplers": list(self.samplers),
                "rows": [{"k": r.k, **{s: r.scores[s] for s in self.samplers}} for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationTable":
        samplers = tuple(d["samplers"])
        return cls(tuple(EvaluationRow(r["k"], {s: float(r[s]) for s in samplers}) for r in d["rows"]), samplers)

    def to_markdown(self) -> str:
        header = "| TOP K | " + " | ".join(f"{s} P@K" for s in self.samplers) + " |"
        sep = "|---|" + "---|" * len(self.samplers)
        body = [f"| {r.k} | " + " | ".join(f"{r.scores[s]:.2f}" for s in self.samplers) + " |" for r in self.rows]
        return "\n".join([header, sep, *body]) + "\n"


def compare_samplers(aec_ranked: Sequence[RankedSample | str], uncertainty_ranked: Sequence[RankedSample | str],
                     truth: Mapping[str, bool], ks: Sequence[int]) -> EvaluationTable:
    aec_ids, unc_ids = _ranking_ids(aec_ranked), _ranking_ids(uncertainty_ranked)
    if set(aec_ids) != set(unc_ids) or len(aec_ids) != len(unc_ids):
        raise ValidationError("the two rankings must cover the same instance ids")
    rows = tuple(
        EvaluationRow(k, {"uncertainty": precision_at_k(unc_ids, truth, k), "aec": precision_at_k(aec_ids, truth, k)})
        for k in ks
    )
    return EvaluationTable(rows)


def select_informative(ranked: Sequence[RankedSample], k: int) -> list[str]:
    """The first ``k`` ids of the ranking: candidates for the next labeling round."""
    if not 0 <= k <= len(ranked):
        raise RangeError(f"K={k} outside 0..{len(ranked)}")
    return _ranking_ids(ranked[:k])


def write_candidates(path: str | Path, ids: Sequence[str]) -> None:
    Path(path).write_text(json.dumps({"k": len(ids), "ids": list(ids)}, indent=1) + "\n", encoding="utf-8")


def read_candidates(path: str | Path) -> list[str]:
    return list(json.loads(Path(path).read_text(encoding="utf-8"))["ids"])


def write_rankings_csv(ranked: Iterable[RankedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "id", "error_prob"])
        for r in ranked:
            writer.writerow([r.rank, r.instance_id, repr(r.error_prob)])


def write_rankings_jsonl(ranked: Iterable[RankedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in ranked:
            fh.write(json.dumps({
                "rank": r.rank, "id": r.instance_id, "error_prob": r.error_prob,
                "explanation": [{"feature": f, "value": v, "importance": imp} for f, v, imp in r.explanation],
            }, ensure_ascii=False) + "\n")


def read_rankings_jsonl(path: str | Path) -> list[RankedSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                o = json.loads(line)
                expl = tuple((e["feature"], e["value"], e["importance"]) for e in o["explanation"])
                out.append(RankedSample(o["id"], o["error_prob"], o["rank"], expl))
    return out


NAMESPACE_GROUPS = (("conv", "Lexical"), ("emo", "NRC"), ("ent", "Entities"), ("dep", "Dependency"))


def group_top_features(importances: Mapping[str, float], top: int = 100) -> dict[str, list[tuple[str, float]]]:
    """Top features by importance, grouped by family in report order."""
    ranked = sorted(((n, v) for n, v in importances.items() if v > 0), key=lambda kv: (-kv[1], kv[0]))[:top]
    groups: dict[str, list[tuple[str, float]]] = {ns: [] for ns, _ in NAMESPACE_GROUPS}
    for name, value in ranked:
        ns, _ = split_name(name)
        groups.setdefault(ns, []).append((name, value))
    return groups

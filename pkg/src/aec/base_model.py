"""The black-box base classifier seam.

A small class-weighted multinomial logistic regression over bag-of-words
counts stands in for the base model. Predictions produced by any other model
can be imported from JSON-Lines instead; the rest of the workflow only ever
sees :class:`Prediction` objects.
"""

from __future__ import annotations

import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy import sparse

from .corpus import Dataset, Instance
from .errors import DegenerateError, ParseError, RangeError, ValidationError

SIMPLEX_TOL = 1e-9
IMPORT_TOL = 1e-6

_TOKEN = re.compile(r"[@#]\w+|[^\W_]+")


def featurize_text(text: str) -> dict[str, int]:
    """Lowercased word and @/# handle counts."""
    return dict(Counter(m.group(0).lower() for m in _TOKEN.finditer(text)))


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    probs: tuple[float, ...]
    predicted_label: str

    @classmethod
    def from_probs(cls, instance_id: str, probs: Sequence[float], schema: Sequence[str]) -> "Prediction":
        probs = tuple(float(p) for p in probs)
        if len(probs) != len(schema):
            raise ValidationError(
                f"prediction {instance_id!r}: {len(probs)} probabilities for a {len(schema)}-class schema"
            )
        if any(not np.isfinite(p) or p < 0 for p in probs):
            raise ValidationError(f"prediction {instance_id!r}: probabilities must be finite and >= 0")
        if abs(sum(probs) - 1.0) > SIMPLEX_TOL:
            raise ValidationError(f"prediction {instance_id!r}: probabilities sum to {sum(probs)!r}")
        # first maximum wins, so ties go to the lowest schema index
        best = max(range(len(probs)), key=lambda i: (probs[i], -i))
        return cls(instance_id, probs, schema[best])


def uncertainty_score(p: Prediction) -> float:
    """Least-confidence uncertainty, ``1 - max(probs)``."""
    return 1.0 - max(p.probs)


def rank_by_uncertainty(preds: Sequence[Prediction], k: int) -> list[str]:
    if not 0 <= k <= len(preds):
        raise RangeError(f"K={k} outside 0..{len(preds)}")
    order = sorted(preds, key=lambda p: (-uncertainty_score(p), p.instance_id))
    return [p.instance_id for p in order[:k]]


@dataclass
class BaseModel:
    schema: tuple[str, ...]
    vocabulary: dict[str, int]
    weights: np.ndarray  # classes x features
    bias: np.ndarray
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        self.weights = np.asarray(self.weights, dtype=float).reshape(len(self.schema), len(self.vocabulary))
        self.bias = np.asarray(self.bias, dtype=float).reshape(len(self.schema))
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValidationError("base model weights must be finite")

    def to_dict(self) -> dict:
        return {
            "schema": list(self.schema),
            "vocabulary": sorted(self.vocabulary, key=self.vocabulary.__getitem__),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaseModel":
        vocab = {tok: i for i, tok in enumerate(d["vocabulary"])}
        return cls(tuple(d["schema"]), vocab, np.array(d["weights"], dtype=float),
                   np.array(d["bias"], dtype=float), dict(d.get("training_meta", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BaseModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _design(texts: Iterable[str], vocab: dict[str, int]) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    n = 0
    for r, text in enumerate(texts):
        n = r + 1
        for tok, c in featurize_text(text).items():
            j = vocab.get(tok)
            if j is not None:
                rows.append(r)
                cols.append(j)
                vals.append(float(c))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, len(vocab)))


def class_weights(train: Dataset) -> np.ndarray:
    counts = train.label_counts()
    absent = [c for c, n in counts.items() if n == 0]
    if absent:
        raise DegenerateError(f"classes absent from training data: {absent}")
    n, k = len(train), len(train.schema)
    return np.array([n / (k * counts[c]) for c in train.schema])


def train_base(train: Dataset, epochs: int = 30, learning_rate: float = 0.5, seed: int = 0,
               batch_size: int = 32) -> BaseModel:
    """Fit weights by mini-batch gradient descent on class-weighted cross-entropy.

    Weights start at zero; the seed only drives the per-epoch batch order.
    """
    if len(train) == 0:
        raise DegenerateError("training set is empty")
    if len(train.schema) < 2:
        raise DegenerateError("need at least two classes to train a classifier")
    cw = class_weights(train)
    vocab_tokens = sorted({tok for inst in train for tok in featurize_text(inst.text)})
    vocab = {tok: i for i, tok in enumerate(vocab_tokens)}
    X = _design((inst.text for inst in train), vocab)
    label_index = {c: i for i, c in enumerate(train.schema)}
    y = np.array([label_index[inst.gold_label] for inst in train])
    Y = np.eye(len(train.schema))[y]
    sample_w = cw[y]

    W = np.zeros((len(train.schema), len(vocab)))
    b = np.zeros(len(train.schema))
    rng = np.random.default_rng(seed)
    n = len(train)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb = X[idx]
            P = _softmax(Xb @ W.T + b)
            G = (P - Y[idx]) * sample_w[idx, None] / sample_w[idx].sum()
            W -= learning_rate * np.asarray((Xb.T @ G).T)
            b -= learning_rate * G.sum(axis=0)
    meta = {
        "epochs": epochs,
        "learning_rate": learning_rate,
        "batch_size": batch_size,
        "seed": seed,
        "class_weights": dict(zip(train.schema, cw.tolist())),
    }
    return BaseModel(train.schema, vocab, W, b, meta)


def predict_proba(model: BaseModel, texts: Sequence[str]) -> np.ndarray:
    X = _design(texts, model.vocabulary)
    return _softmax(np.asarray(X @ model.weights.T) + model.bias)


def predict_base(model: BaseModel, instance: Instance) -> Prediction:
    return predict_many(model, [instance])[0]


def predict_many(model: BaseModel, instances: Sequence[Instance]) -> list[Prediction]:
    if not instances:
        return []
    P = predict_proba(model, [inst.text for inst in instances])
    return [Prediction.from_probs(inst.id, row, model.schema) for inst, row in zip(instances, P)]


def import_predictions(stream: TextIO | str, schema: Sequence[str], renormalize: bool = False) -> list[Prediction]:
    """Read ``{"id": ..., "probs": [...]}`` lines aligned with ``schema``."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    out: list[Prediction] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(stream, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict) or "id" not in obj or "probs" not in obj:
            raise ParseError('expected an object with "id" and "probs"', lineno)
        pid, probs = str(obj["id"]), obj["probs"]
        if not isinstance(probs, list) or not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in probs):
            raise ParseError(f"prediction {pid!r}: probs must be a list of numbers", lineno)
        if len(probs) != len(schema):
            raise ValidationError(f"line {lineno}: prediction {pid!r}: {len(probs)} probabilities for a {len(schema)}-class schema")
        if any(p < 0 for p in probs):
            raise ValidationError(f"line {lineno}: prediction {pid!r}: negative probability")
        total = float(sum(probs))
        if abs(total - 1.0) > IMPORT_TOL:
            if not renormalize or total <= 0:
                raise ValidationError(f"line {lineno}: prediction {pid!r}: probabilities sum to {total:.6g}, not 1")
        # always rescale so the stored vector sits on the simplex to 1e-9
        probs = [p / total for p in probs]
        if pid in seen:
            raise ValidationError(f"line {lineno}: duplicate prediction id {pid!r}")
        seen.add(pid)
        out.append(Prediction.from_probs(pid, probs, schema))
    return out


def export_predictions(preds: Iterable[Prediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps({"id": p.instance_id, "probs": list(p.probs)}) + "\n")

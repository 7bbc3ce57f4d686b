"""Interpretable per-sentence features and the global feature index.

Four families are extracted from an annotated sentence, each under its own
namespace so keys never collide:

``dep``   generalized dependency triples ``<deprel>-<HEADPOS>-<DEPPOS>``
``emo``   emotion-lexicon affect counts
``ent``   named-entity mention counts per type
``conv``  conversation markers (greetings, thanks, questions, ...)

Raw counts are divided by the sentence's token count.
"""

from __future__ import annotations

import csv
import json
import logging
import unicodedata
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotations import AnnotatedSentence, ConversationMarkers, EmotionLexicon
from .errors import DegenerateError, ShapeError, ValidationError

log = logging.getLogger(__name__)

NAMESPACES = ("dep", "emo", "ent", "conv")

FeatureVector = dict[str, float]


def feature_name(namespace: str, key: str) -> str:
    if namespace not in NAMESPACES:
        raise ValidationError(f"unknown feature namespace {namespace!r}")
    if not key or any(c.isspace() for c in key):
        raise ValidationError(f"feature key {key!r} must be non-empty without whitespace")
    return f"{namespace}:{key}"


def split_name(name: str) -> tuple[str, str]:
    namespace, _, key = name.partition(":")
    return namespace, key


def extract_dependency_features(s: AnnotatedSentence) -> Counter:
    counts: Counter = Counter()
    by_index = {t.index: t for t in s.tokens}
    for tok in s.tokens:
        if tok.head == 0:
            key = f"ROOT-{tok.pos}-{tok.pos}"
        else:
            key = f"{tok.deprel}-{by_index[tok.head].pos}-{tok.pos}"
        counts[feature_name("dep", key.replace(" ", "_"))] += 1
    return counts


def extract_emotion_features(s: AnnotatedSentence, lex: EmotionLexicon) -> Counter:
    counts: Counter = Counter()
    for tok in s.tokens:
        for affect in lex.affects(tok.form):
            counts[feature_name("emo", affect)] += 1
    return counts


def _entity_runs(s: AnnotatedSentence):
    prev = None
    for tok in s.tokens:
        ent = tok.entity
        if ent is None:
            prev = None
            continue
        begins = ent.startswith("B-")
        kind = ent[2:] if ent[:2] in ("B-", "I-") else ent
        if kind != prev or begins:
            yield kind
        prev = kind


def extract_entity_features(s: AnnotatedSentence) -> Counter:
    """One count per maximal run of tokens sharing an entity type."""
    return Counter(feature_name("ent", kind) for kind in _entity_runs(s))


def is_punct(form: str) -> bool:
    return bool(form) and all(unicodedata.category(c)[0] in "PS" for c in form)


def _first_content_token(s: AnnotatedSentence) -> str | None:
    for tok in s.tokens:
        if tok.form.startswith("@") or is_punct(tok.form):
            continue
        return tok.form.lower()
    return None


def extract_conversation_features(s: AnnotatedSentence, m: ConversationMarkers) -> Counter:
    categories = {
        "greeting": set(m.greetings),
        "thanks": set(m.thanks),
        "apology": set(m.apology),
        "second_person": set(m.second_person),
    }
    standalone = set(m.standalone)
    counts: Counter = Counter()
    for tok in s.tokens:
        form = tok.form.lower()
        # a set, so a token hitting both a category and a same-named standalone marker counts once
        hits = {name for name, words in categories.items() if form in words}
        if form in standalone:
            hits.add(form)
        for key in hits:
            counts[feature_name("conv", key)] += 1
    first = _first_content_token(s)
    if first in m.yesno_starters:
        counts[feature_name("conv", "question_yesno")] += 1
    if first in m.wh_starters:
        counts[feature_name("conv", "question_wh")] += 1
    return counts


def normalize_by_length(counts: Mapping[str, float], n: int) -> FeatureVector:
    if n < 1:
        raise DegenerateError("cannot normalize features of an empty sentence")
    out = {}
    for name, c in counts.items():
        if c > n:
            raise ValidationError(f"count {c} for {name!r} exceeds sentence length {n}")
        if c > 0:
            out[name] = c / n
    return out


def extract_all(s: AnnotatedSentence, lex: EmotionLexicon, m: ConversationMarkers,
                binary_conv: bool = False) -> FeatureVector:
    """All four families, normalized by sentence length.

    With ``binary_conv`` the conversation markers are reported as presence
    indicators (1.0) instead of normalized counts.
    """
    counts: Counter = Counter()
    counts.update(extract_dependency_features(s))
    counts.update(extract_emotion_features(s, lex))
    counts.update(extract_entity_features(s))
    conv = extract_conversation_features(s, m)
    if not binary_conv:
        counts.update(conv)
    vec = normalize_by_length(counts, len(s))
    if binary_conv:
        vec.update({name: 1.0 for name, c in conv.items() if c > 0})
    return dict(sorted(vec.items()))


def _extract_chunk(args):
    sentences, lex, m, binary_conv = args
    return [extract_all(s, lex, m, binary_conv) for s in sentences]


def extract_corpus(sentences: Sequence[AnnotatedSentence], lex: EmotionLexicon, m: ConversationMarkers,
                   binary_conv: bool = False, workers: int = 1) -> dict[str, FeatureVector]:
    """Extract every sentence; results are keyed by instance id and independent of ``workers``."""
    ids = [s.instance_id for s in sentences]
    if len(set(ids)) != len(ids):
        dup = next(i for i, c in Counter(ids).items() if c > 1)
        raise ValidationError(f"duplicate sentence id {dup!r}")
    if workers <= 1 or len(sentences) < 2:
        vectors = [extract_all(s, lex, m, binary_conv) for s in sentences]
    else:
        size = -(-len(sentences) // workers)
        chunks = [(sentences[i:i + size], lex, m, binary_conv) for i in range(0, len(sentences), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            vectors = [v for part in pool.map(_extract_chunk, chunks) for v in part]
    return dict(zip(ids, vectors))


@dataclass(frozen=True)
class FeatureSpace:
    names: tuple[str, ...]
    min_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if list(self.names) != sorted(set(self.names)):
            raise ValidationError("feature space names must be sorted and distinct")

    def __len__(self):
        return len(self.names)

    @property
    def index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}


def build_feature_space(vectors: Iterable[Mapping[str, float]], min_count: int = 1) -> FeatureSpace:
    if min_count < 1:
        raise ValidationError("min_count must be >= 1")
    doc_freq: Counter = Counter()
    for v in vectors:
        doc_freq.update(name for name, value in v.items() if value > 0)
    names = sorted(name for name, c in doc_freq.items() if c >= min_count)
    if not names:
        log.warning("feature space is empty (min_count=%d)", min_count)
    return FeatureSpace(tuple(names), min_count)


def vectorize(v: Mapping[str, float], space: FeatureSpace, index: Mapping[str, int] | None = None) -> np.ndarray:
    if not len(space):
        raise ShapeError("cannot vectorize against an empty feature space")
    index = index if index is not None else space.index
    row = np.zeros(len(space))
    for name, value in v.items():
        j = index.get(name)
        if j is not None:
            row[j] = value
    return row


@dataclass(frozen=True)
class FeatureMatrix:
    row_ids: tuple[str, ...]
    rows: np.ndarray
    space: FeatureSpace

    def __post_init__(self):
        if self.rows.shape != (len(self.row_ids), len(self.space)):
            raise ShapeError(f"matrix shape {self.rows.shape} does not match {len(self.row_ids)} ids x {len(self.space)} features")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise ValidationError("matrix row ids must be unique")


def build_matrix(ids: Sequence[str], vectors: Mapping[str, Mapping[str, float]], space: FeatureSpace) -> FeatureMatrix:
    index = space.index
    rows = np.zeros((len(ids), len(space)))
    for r, i in enumerate(ids):
        if len(space):
            rows[r] = vectorize(vectors[i], space, index)
    return FeatureMatrix(tuple(ids), rows, space)


def write_matrix_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", *matrix.space.names])
        for rid, row in zip(matrix.row_ids, matrix.rows):
            writer.writerow([rid, *(repr(float(x)) for x in row)])


def write_vectors_jsonl(vectors: Mapping[str, Mapping[str, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, vec in vectors.items():
            fh.write(json.dumps({"id": rid, "features": dict(sorted(vec.items()))}, ensure_ascii=False) + "\n")


def read_vectors_jsonl(path: str | Path) -> dict[str, FeatureVector]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["id"]] = {k: float(v) for k, v in obj["features"].items()}
    return out

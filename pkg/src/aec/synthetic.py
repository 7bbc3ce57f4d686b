"""Synthetic annotated corpora with a planted error signal.

Every instance gets a small dependency-parsed sentence, a base-model
probability vector and a gold label. Whether the base model is wrong is a coin
flip; erroneous instances carry an apology marker ("sorry") with probability
``marker_rate_error`` and correct ones with probability ``marker_rate_correct``.
The base model's confidence is drawn independently of both the marker and the
error flag, so least-confidence sampling has no signal to find.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .annotations import AFFECTS, AnnotatedSentence, ConversationMarkers, EmotionLexicon, Token, serialize_conllu
from .base_model import Prediction, export_predictions
from .corpus import Dataset, Instance, save_dataset

SCHEMA = ("negative", "neutral", "positive")
PLANTED_MARKER = "sorry"
PLANTED_FEATURE = "conv:apology"

_WORDS = {
    "NN": ["flight", "plane", "seat", "bag", "crew", "service", "gate", "delay", "ticket", "day", "food", "agent", "today", "tomorrow"],
    "NNS": ["flights", "bags", "seats", "people", "passengers", "miles", "minutes", "hours"],
    "JJ": ["great", "awful", "late", "nice", "rude", "happy", "terrible", "long", "new", "best"],
    "RB": ["really", "very", "never", "still", "again", "just"],
    "PRP": ["i", "we", "they", "you", "it"],
    "UH": ["oh", "wow", "lol", "well", "please", "thanks"],
    "CD": ["2", "90", "two", "three", "5"],
    "DT": ["the", "a", "this", "no"],
    ".": [".", "!", "?"],
}
_VERBS = {
    "VB": ["fly", "wait", "love", "hate", "board", "help"],
    "VBD": ["lost", "cancelled", "missed", "loved", "waited", "delayed"],
    "VBZ": ["is", "sucks", "rocks", "needs"],
    "VBN": ["delayed", "stuck", "cancelled"],
}
_HANDLES = ["@united", "@delta", "@jetblue", "@southwest", "@virgin"]
_STARTERS = {"WRB": ["where", "when"], "WP": ["what", "who"], "MD": ["can", "could"], "VBP": ["do"]}
_POS_WEIGHTS = {"NN": 5, "NNS": 2, "JJ": 3, "RB": 2, "PRP": 2, "UH": 1.5, "CD": 1, "DT": 3, ".": 1.5}
_UPOS = {
    "NN": "NOUN", "NNS": "NOUN", "NNP": "PROPN", "JJ": "ADJ", "RB": "ADV", "PRP": "PRON", "UH": "INTJ",
    "CD": "NUM", "DT": "DET", ".": "PUNCT", "VB": "VERB", "VBD": "VERB", "VBZ": "VERB", "VBN": "VERB",
    "VBP": "VERB", "WRB": "ADV", "WP": "PRON", "MD": "AUX",
}

LEXICON = {
    "great": {"joy", "positive"}, "awful": {"disgust", "negative"}, "hate": {"anger", "negative"},
    "love": {"joy", "positive", "trust"}, "loved": {"joy", "positive"}, "late": {"negative"},
    "happy": {"joy", "positive", "trust"}, "terrible": {"fear", "negative", "sadness"}, "wow": {"surprise"},
    "rude": {"anger", "negative"}, "delay": {"negative", "anticipation"}, "help": {"trust", "positive"},
    "lost": {"sadness", "negative"}, "missed": {"sadness"}, "best": {"positive"}, "wait": {"anticipation"},
}


@dataclass
class SyntheticCorpus:
    dataset: Dataset
    sentences: list[AnnotatedSentence]
    predictions: list[Prediction]
    lexicon: EmotionLexicon
    markers: ConversationMarkers
    planted_feature: str = PLANTED_FEATURE


def _attach(pos_tags: list[str], root: int, rng: np.random.Generator) -> list[tuple[int, str]]:
    """Head index (1-based, 0 for root) and relation for each position."""
    nouns = [i for i, p in enumerate(pos_tags) if p in ("NN", "NNS", "NNP")]
    out = []
    for i, pos in enumerate(pos_tags):
        if i == root:
            out.append((0, "root"))
            continue
        near = min(nouns, key=lambda j: (abs(j - i), j), default=None) if nouns else None
        if pos == "JJ" and near is not None and near != i:
            out.append((near + 1, "amod"))
        elif pos == "DT" and near is not None and near != i:
            out.append((near + 1, "det"))
        elif pos == "CD" and near is not None and near != i:
            out.append((near + 1, "nummod"))
        elif pos in ("NN", "NNS", "NNP", "PRP"):
            out.append((root + 1, "nsubj" if i < root else "obj"))
        elif pos in ("RB", "WRB"):
            out.append((root + 1, "advmod"))
        elif pos == "UH":
            out.append((root + 1, "discourse"))
        elif pos == ".":
            out.append((root + 1, "punct"))
        elif pos == "MD":
            out.append((root + 1, "aux"))
        else:
            out.append((root + 1, "dep"))
    return out


def _sentence(rng: np.random.Generator, inst_id: str, with_marker: bool) -> AnnotatedSentence:
    pos_names = list(_POS_WEIGHTS)
    weights = np.array([_POS_WEIGHTS[p] for p in pos_names])
    length = int(rng.integers(4, 13))
    tags = list(rng.choice(pos_names, size=length, p=weights / weights.sum()))
    words = [str(rng.choice(_WORDS[t])) for t in tags]
    vtag = str(rng.choice(list(_VERBS)))
    vpos = int(rng.integers(0, length + 1))
    tags.insert(vpos, vtag)
    words.insert(vpos, str(rng.choice(_VERBS[vtag])))
    if rng.random() < 0.25:
        stag = str(rng.choice(list(_STARTERS)))
        tags.insert(0, stag)
        words.insert(0, str(rng.choice(_STARTERS[stag])))
    if rng.random() < 0.6:
        tags.insert(0, "NNP")
        words.insert(0, str(rng.choice(_HANDLES)))
    if with_marker:
        at = int(rng.integers(0, len(tags) + 1))
        tags.insert(at, "UH")
        words.insert(at, PLANTED_MARKER)
    root = tags.index(vtag) if vtag in tags else 0
    heads = _attach(tags, root, rng)
    entities: list[str | None] = [None] * len(tags)
    for i, (w, t) in enumerate(zip(words, tags)):
        if w.startswith("@"):
            entities[i] = "ORG"
        elif t == "CD":
            nxt = words[i + 1] if i + 1 < len(words) else ""
            entities[i] = "TIME" if nxt in ("minutes", "hours") else "CARDINAL"
            if entities[i] == "TIME":
                entities[i + 1] = "TIME"
        elif w in ("today", "tomorrow", "yesterday"):
            entities[i] = "DATE"
    tokens = tuple(
        Token(index=i + 1, form=w, upos=_UPOS[t], xpos=t, head=h, deprel=rel, lemma=w,
              misc=f"NER={e}" if e else None, entity=e)
        for i, (w, t, (h, rel), e) in enumerate(zip(words, tags, heads, entities))
    )
    return AnnotatedSentence(inst_id, tokens)


def generate_planted_corpus(n: int = 2000, seed: int = 0, error_rate: float = 0.5,
                            marker_rate_error: float = 0.9, marker_rate_correct: float = 0.05) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    width = len(str(n))
    instances, sentences, preds = [], [], []
    for i in range(n):
        inst_id = f"syn{i:0{width}d}"
        is_error = bool(rng.random() < error_rate)
        marker = bool(rng.random() < (marker_rate_error if is_error else marker_rate_correct))
        sent = _sentence(rng, inst_id, marker)
        # confidence is drawn independently of the error flag and the marker
        probs = rng.dirichlet(np.ones(len(SCHEMA)))
        pred = Prediction.from_probs(inst_id, probs / probs.sum(), SCHEMA)
        if is_error:
            others = [c for c in SCHEMA if c != pred.predicted_label]
            gold = str(rng.choice(others))
        else:
            gold = pred.predicted_label
        instances.append(Instance(inst_id, " ".join(t.form for t in sent.tokens), gold))
        sentences.append(sent)
        preds.append(pred)
    lexicon = EmotionLexicon({w: frozenset(a) for w, a in sorted(LEXICON.items())})
    return SyntheticCorpus(Dataset(SCHEMA, tuple(instances)), sentences, preds, lexicon, ConversationMarkers())


def generate_base_training_set(n: int = 300, seed: int = 1) -> Dataset:
    """Short labeled texts whose sentiment words track the label, for the built-in base model."""
    rng = np.random.default_rng(seed)
    cue = {
        "negative": ["awful", "terrible", "rude", "late", "hate", "lost"],
        "neutral": ["flight", "gate", "ticket", "seat", "today", "board"],
        "positive": ["great", "love", "happy", "best", "nice", "thanks"],
    }
    filler = ["the", "a", "plane", "crew", "was", "is", "my", "our", "and", "it"]
    instances = []
    for i in range(n):
        label = SCHEMA[i % len(SCHEMA)]
        words = list(rng.choice(filler, size=int(rng.integers(2, 6))))
        words += list(rng.choice(cue[label], size=int(rng.integers(1, 3))))
        rng.shuffle(words)
        instances.append(Instance(f"b{i:04d}", " ".join(str(w) for w in words), label))
    return Dataset(SCHEMA, tuple(instances))


def write_lexicon(lexicon: EmotionLexicon, path: str | Path) -> None:
    lines = []
    for word, affects in sorted(lexicon.entries.items()):
        lines += [f"{word}\t{a}\t{int(a in affects)}" for a in AFFECTS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_markers(markers: ConversationMarkers, path: str | Path) -> None:
    lines = []
    for section, items in asdict(markers).items():
        lines.append(f"{section}:")
        lines.extend(items)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_fixture(out_dir: str | Path, n: int = 2000, seed: int = 0, builtin_base: bool = False,
                  config_overrides: dict | None = None) -> Path:
    """Write a complete runnable fixture and return the path of its config file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_planted_corpus(n=n, seed=seed)
    save_dataset(corpus.dataset, out / "eval.csv")
    (out / "eval.conllu").write_text(serialize_conllu(corpus.sentences), encoding="utf-8")
    write_lexicon(corpus.lexicon, out / "lexicon.txt")
    write_markers(corpus.markers, out / "markers.txt")
    paths = {
        "eval_dataset": "eval.csv",
        "annotations": "eval.conllu",
        "lexicon": "lexicon.txt",
        "markers": "markers.txt",
        "output_dir": "out",
    }
    if builtin_base:
        save_dataset(generate_base_training_set(seed=seed + 1), out / "base_train.csv")
        paths["base_dataset"] = "base_train.csv"
    else:
        export_predictions(corpus.predictions, out / "predictions.jsonl")
        paths["predictions"] = "predictions.jsonl"
    config = {
        "paths": paths,
        "schema": list(SCHEMA),
        "split": {"train_ratio": 0.8},
        "features": {"min_count": 1, "binary_conv": False},
        "forest": {"k": 5},
        "ks": [10, 20, 30, 40, 50],
        "seeds": {"split": seed, "undersample": seed, "base": seed, "forest": seed},
    }
    for key, value in (config_overrides or {}).items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key] = {**config[key], **value}
        else:
            config[key] = value
    path = out / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return path

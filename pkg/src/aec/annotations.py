"""Readers for linguistic annotation inputs.

Three formats are supported:

* CoNLL-U (10 tab-separated columns per token, ``#`` comments, blank-line
  sentence separators). Named-entity types ride along in the MISC column as
  ``NER=<TYPE>``.
* The NRC emotion lexicon word-level file: ``word<TAB>affect<TAB>{0,1}``.
* Conversation marker lists: a ``section:`` header followed by one marker per
  line (comma-separated markers on one line are also accepted).
"""

from __future__ import annotations

import io
import logging
import re
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping, TextIO

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

AFFECTS = (
    "anger", "anticipation", "disgust", "fear", "joy",
    "negative", "positive", "sadness", "surprise", "trust",
)

_EMPTY = "_"


def _opt(value: str) -> str | None:
    return None if value == _EMPTY else value


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    upos: str
    head: int
    deprel: str
    xpos: str | None = None
    lemma: str | None = None
    feats: str | None = None
    deps: str | None = None
    misc: str | None = None
    entity: str | None = None

    @property
    def pos(self) -> str:
        """Penn-style tag when available, universal tag otherwise."""
        return self.xpos or self.upos


@dataclass(frozen=True)
class AnnotatedSentence:
    instance_id: str
    tokens: tuple[Token, ...]
    comments: tuple[str, ...] = ()

    def __len__(self):
        return len(self.tokens)

    @property
    def root(self) -> Token:
        return next(t for t in self.tokens if t.head == 0)


def entity_from_misc(misc: str | None) -> str | None:
    if not misc:
        return None
    for item in misc.split("|"):
        key, sep, value = item.partition("=")
        if sep and key == "NER" and value and value != "O":
            return value
    return None


def _check_structure(tokens: list[Token], sent: str) -> None:
    n = len(tokens)
    for pos, tok in enumerate(tokens, start=1):
        if tok.index != pos:
            raise ValidationError(f"{sent}: token indices are not contiguous 1..{n} (found {tok.index} at position {pos})")
        if not 0 <= tok.head <= n:
            raise ValidationError(f"{sent}: token {tok.index} has head {tok.head} outside 0..{n}")
        if tok.head == tok.index:
            raise ValidationError(f"{sent}: token {tok.index} is its own head")
        if not tok.deprel or tok.deprel == _EMPTY:
            raise ValidationError(f"{sent}: token {tok.index} has an empty dependency relation")


def _fix_roots(tokens: list[Token], sent: str, strict: bool) -> list[Token]:
    roots = [t for t in tokens if t.head == 0]
    if len(roots) == 1:
        return tokens
    problem = "no root" if not roots else f"{len(roots)} roots"
    if strict:
        raise ValidationError(f"{sent}: sentence has {problem}; exactly one token must have head 0")
    log.warning("%s: sentence has %s; synthesizing a single root", sent, problem)
    if not roots:
        first = tokens[0]
        return [replace(first, head=0, deprel="root")] + tokens[1:]
    keep = roots[0].index
    return [t if t.head != 0 or t.index == keep else replace(t, head=keep) for t in tokens]


def parse_conllu(stream: TextIO | str, strict: bool = True) -> list[AnnotatedSentence]:
    """Parse CoNLL-U text into sentences.

    ``sent_id`` comments become the sentence's ``instance_id``; sentences
    without one are numbered from 1 in file order. Multiword-token ranges
    (``3-4``) and empty nodes (``5.1``) are skipped. In lenient mode a sentence
    with zero or several roots is repaired with a warning instead of rejected.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    sentences: list[AnnotatedSentence] = []
    tokens: list[Token] = []
    comments: list[str] = []
    sent_id: str | None = None
    start = 0

    def flush():
        nonlocal tokens, comments, sent_id
        if tokens:
            inst = sent_id if sent_id is not None else str(len(sentences) + 1)
            label = f"sentence {inst!r} (line {start})"
            _check_structure(tokens, label)
            fixed = _fix_roots(tokens, label, strict)
            sentences.append(AnnotatedSentence(inst, tuple(fixed), tuple(comments)))
        elif comments or sent_id is not None:
            log.warning("line %d: comment block without tokens ignored", start)
        tokens, comments, sent_id = [], [], None

    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if not tokens and not comments and sent_id is None:
            start = lineno
        if line.startswith("#"):
            body = line[1:].strip()
            key, sep, value = body.partition("=")
            if sep and key.strip() == "sent_id":
                sent_id = value.strip()
            else:
                comments.append(body)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"expected 10 tab-separated columns, found {len(cols)}", lineno)
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        try:
            index = int(tid)
        except ValueError:
            raise ParseError(f"token id {tid!r} is not an integer", lineno) from None
        try:
            head = int(cols[6])
        except ValueError:
            raise ParseError(f"head {cols[6]!r} is not an integer", lineno) from None
        misc = _opt(cols[9])
        tokens.append(Token(
            index=index, form=cols[1], lemma=_opt(cols[2]), upos=cols[3], xpos=_opt(cols[4]),
            feats=_opt(cols[5]), head=head, deprel=cols[7], deps=_opt(cols[8]), misc=misc,
            entity=entity_from_misc(misc),
        ))
    flush()
    return sentences


def _misc_with_entity(tok: Token) -> str | None:
    if tok.entity is None or entity_from_misc(tok.misc) == tok.entity:
        return tok.misc
    items = [i for i in (tok.misc or "").split("|") if i and not i.startswith("NER=")]
    return "|".join(items + [f"NER={tok.entity}"])


def serialize_conllu(sentences: Iterable[AnnotatedSentence]) -> str:
    out = []
    for sent in sentences:
        out.append(f"# sent_id = {sent.instance_id}")
        out.extend(f"# {c}" if c else "#" for c in sent.comments)
        for t in sent.tokens:
            cols = [
                str(t.index), t.form, t.lemma, t.upos, t.xpos, t.feats,
                str(t.head), t.deprel, t.deps, _misc_with_entity(t),
            ]
            out.append("\t".join(_EMPTY if c is None else c for c in cols))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


@dataclass(frozen=True)
class EmotionLexicon:
    entries: Mapping[str, frozenset] = field(default_factory=dict)

    def affects(self, word: str) -> frozenset:
        return self.entries.get(word.lower(), frozenset())

    def __len__(self):
        return len(self.entries)


def load_emotion_lexicon(stream: TextIO | str) -> EmotionLexicon:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    entries: dict[str, set] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 3:
            raise ParseError(f"expected word<TAB>affect<TAB>flag, found {len(parts)} fields", lineno)
        word, affect, flag = (p.strip() for p in parts)
        if affect not in AFFECTS:
            raise ParseError(f"unknown affect label {affect!r}", lineno)
        if flag not in ("0", "1"):
            raise ParseError(f"flag must be 0 or 1, found {flag!r}", lineno)
        if flag == "1":
            entries.setdefault(word.lower(), set()).add(affect)
    return EmotionLexicon({w: frozenset(a) for w, a in sorted(entries.items())})


@dataclass(frozen=True)
class ConversationMarkers:
    greetings: tuple[str, ...] = ("hi", "hello", "hey", "greetings", "morning", "evening")
    thanks: tuple[str, ...] = ("thanks", "thank", "thx", "ty", "grateful")
    apology: tuple[str, ...] = ("sorry", "apologies", "apologize", "apologise", "apology")
    second_person: tuple[str, ...] = ("you", "your", "yours", "u")
    yesno_starters: tuple[str, ...] = ("do", "did", "can", "could")
    wh_starters: tuple[str, ...] = ("who", "what", "where")
    standalone: tuple[str, ...] = ("!", "?", "no", "thanks")

    def __post_init__(self):
        for f in fields(self):
            values = getattr(self, f.name)
            if not values:
                raise ValidationError(f"marker list {f.name!r} is empty")
            if any(v != v.lower() or not v or any(c.isspace() for c in v) for v in values):
                raise ValidationError(f"marker list {f.name!r} must hold lowercase tokens without spaces")


MARKER_SECTIONS = tuple(f.name for f in fields(ConversationMarkers))
_SECTION = re.compile(r"^([A-Za-z_]+)\s*:\s*(.*)$")


def load_markers(stream: TextIO | str | None = None) -> ConversationMarkers:
    """Read marker lists; ``None`` returns the built-in defaults.

    Sections missing from the file keep their built-in lists.
    """
    if stream is None:
        return ConversationMarkers()
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lists: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            if current not in MARKER_SECTIONS:
                raise ParseError(f"unknown marker section {current!r}", lineno)
            lists.setdefault(current, [])
            line = m.group(2)
        elif current is None:
            raise ParseError("marker listed before any section header", lineno)
        for item in line.split(","):
            item = item.strip().lower()
            if item and item not in lists[current]:
                lists[current].append(item)
    return ConversationMarkers(**{k: tuple(v) for k, v in lists.items()})

"""BIO-labeled corpora: data model, CoNLL-style I/O, BIO repair and splitting."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

ENTITY_TYPES = ("JOB_TITLE", "JOB_TITLE_GROUP", "SKILL", "SUBJECT", "ACTIVITY")

OUTSIDE = "O"
DOCSTART = "-DOCSTART-"

_TYPE_RE = re.compile(r"^[A-Z_]+$")
_LABEL_RE = re.compile(r"^(?:O|[BI]-[A-Z_]+)$")


class CorpusFormatError(ValueError):
    """Malformed CoNLL input; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class BioError(ValueError):
    pass


class StructureMismatch(ValueError):
    """Two corpora that should be token-parallel are not."""


def is_entity_type(name: str) -> bool:
    return bool(_TYPE_RE.match(name))


def is_label(label: str) -> bool:
    return bool(_LABEL_RE.match(label))


def label_prefix(label: str) -> str:
    """'O', 'B' or 'I'."""
    return label[0]


def label_type(label: str) -> str | None:
    if label == OUTSIDE:
        return None
    return label[2:]


def entity_types_in_order(types: Iterable[str]) -> list[str]:
    """Canonical five first, extra types after them in sorted order."""
    extra = sorted(set(types) - set(ENTITY_TYPES))
    return list(ENTITY_TYPES) + extra


@dataclass(frozen=True, slots=True)
class Token:
    text: str
    label: str = OUTSIDE

    def __post_init__(self):
        if not self.text or any(ch.isspace() for ch in self.text):
            raise ValueError(f"invalid token text {self.text!r}")
        if not is_label(self.label):
            raise ValueError(f"invalid label {self.label!r}")


@dataclass(frozen=True, slots=True)
class Segment:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("segment must contain at least one token")

    @classmethod
    def from_lists(cls, texts: Sequence[str], labels: Sequence[str] | None = None) -> "Segment":
        if labels is None:
            labels = [OUTSIDE] * len(texts)
        if len(texts) != len(labels):
            raise ValueError("texts and labels differ in length")
        return cls(tuple(Token(t, l) for t, l in zip(texts, labels)))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.tokens]

    def with_labels(self, labels: Sequence[str]) -> "Segment":
        return Segment.from_lists(self.texts, labels)

    def with_texts(self, texts: Sequence[str]) -> "Segment":
        return Segment.from_lists(texts, self.labels)


@dataclass(frozen=True)
class Document:
    id: str
    segments: tuple[Segment, ...]
    metadata: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if any(ch.isspace() for ch in self.id):
            raise ValueError(f"document id must not contain whitespace: {self.id!r}")
        if not self.segments:
            raise ValueError(f"document {self.id!r} has no segments")


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...] = ()

    def __post_init__(self):
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            raise ValueError("document ids must be unique")
        if any(d.id == "" for d in self.documents[1:]):
            raise ValueError("only the first document may have an empty id")

    @classmethod
    def from_segments(cls, segments: Iterable[Segment], doc_id: str = "") -> "Corpus":
        segments = tuple(segments)
        if not segments:
            return cls()
        return cls((Document(doc_id, segments),))

    def segments(self) -> Iterator[Segment]:
        for doc in self.documents:
            yield from doc.segments

    def tokens(self) -> Iterator[Token]:
        for seg in self.segments():
            yield from seg.tokens

    @property
    def n_segments(self) -> int:
        return sum(len(d.segments) for d in self.documents)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.segments())

    def map_segments(self, fn) -> "Corpus":
        """Apply ``fn(doc, index, segment) -> Segment`` to every segment."""
        return Corpus(
            tuple(
                Document(d.id, tuple(fn(d, i, s) for i, s in enumerate(d.segments)), d.metadata)
                for d in self.documents
            )
        )


class EntitySpan(NamedTuple):
    entity_type: str
    start: int
    end: int
    surface: str = ""

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.entity_type, self.start, self.end)


class Violation(NamedTuple):
    index: int
    reason: str  # "I-without-B" | "I-type-mismatch"


# -- CoNLL I/O ---------------------------------------------------------------


def parse_conll(text: str) -> Corpus:
    documents: list[Document] = []
    doc_id: str | None = None
    segments: list[Segment] = []
    tokens: list[Token] = []
    after_marker = False
    seen_ids: set[str] = set()

    def close_doc(lineno: int):
        nonlocal segments
        if doc_id is None:
            return
        if not segments:
            raise CorpusFormatError(lineno, f"document {doc_id!r} has no segments")
        documents.append(Document(doc_id, tuple(segments)))
        segments = []

    lines = text.split("\n")
    # trailing blank lines carry no structure
    while lines and not lines[-1].strip():
        lines.pop()

    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r")
        if not line.strip():
            if tokens:
                segments.append(Segment(tuple(tokens)))
                tokens = []
            elif not after_marker:
                raise CorpusFormatError(lineno, "empty segment")
            after_marker = False
            continue
        if line.startswith(DOCSTART):
            if tokens:
                segments.append(Segment(tuple(tokens)))
                tokens = []
            parts = line.split()
            if parts[0] != DOCSTART or len(parts) != 2:
                raise CorpusFormatError(lineno, f"expected '{DOCSTART} <id>', got {line!r}")
            close_doc(lineno)
            if parts[1] in seen_ids:
                raise CorpusFormatError(lineno, f"duplicate document id {parts[1]!r}")
            doc_id = parts[1]
            seen_ids.add(doc_id)
            after_marker = True
            continue
        after_marker = False
        cols = line.split("\t")
        if len(cols) != 2:
            raise CorpusFormatError(lineno, f"expected 2 tab-separated columns, got {len(cols)}")
        word, label = cols
        if not word or any(ch.isspace() for ch in word):
            raise CorpusFormatError(lineno, f"invalid token {word!r}")
        if not is_label(label):
            raise CorpusFormatError(lineno, f"unknown label syntax {label!r}")
        if doc_id is None:
            doc_id = ""
            seen_ids.add("")
        tokens.append(Token(word, label))

    if tokens:
        segments.append(Segment(tuple(tokens)))
    close_doc(len(lines))
    return Corpus(tuple(documents))


def write_conll(corpus: Corpus) -> str:
    blocks = []
    for doc in corpus.documents:
        segs = ["".join(f"{t.text}\t{t.label}\n" for t in s.tokens) for s in doc.segments]
        body = "\n".join(segs)
        if doc.id:
            body = f"{DOCSTART} {doc.id}\n" + body
        blocks.append(body)
    return "\n".join(blocks)


def read_conll(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh.read())


# -- BIO ---------------------------------------------------------------------


def validate_bio(labels: Segment | Sequence[str]) -> list[Violation]:
    if isinstance(labels, Segment):
        labels = labels.labels
    out = []
    prev = OUTSIDE
    for i, lab in enumerate(labels):
        if lab[0] == "I":
            if prev == OUTSIDE:
                out.append(Violation(i, "I-without-B"))
            elif prev[2:] != lab[2:]:
                out.append(Violation(i, "I-type-mismatch"))
        prev = lab
    return out


def repair_labels(labels: Sequence[str]) -> list[str]:
    out = list(labels)
    prev = OUTSIDE
    for i, lab in enumerate(out):
        if lab[0] == "I" and (prev == OUTSIDE or prev[2:] != lab[2:]):
            out[i] = "B" + lab[1:]
        prev = out[i]
    return out


def repair_bio(segment: Segment) -> Segment:
    labels = segment.labels
    fixed = repair_labels(labels)
    if fixed == labels:
        return segment
    return segment.with_labels(fixed)


def spans_from_labels(labels: Sequence[str], texts: Sequence[str] | None = None) -> list[EntitySpan]:
    bad = validate_bio(labels)
    if bad:
        raise BioError(f"invalid BIO at token {bad[0].index}: {bad[0].reason}")
    spans = []
    start = None
    for i, lab in enumerate(list(labels) + [OUTSIDE]):
        if lab[0] != "I" and start is not None:
            surface = " ".join(texts[start:i]) if texts is not None else ""
            spans.append(EntitySpan(labels[start][2:], start, i, surface))
            start = None
        if lab[0] == "B":
            start = i
    return spans


def spans_from_bio(segment: Segment) -> list[EntitySpan]:
    return spans_from_labels(segment.labels, segment.texts)


def bio_from_spans(tokens: Sequence[str], spans: Iterable[EntitySpan]) -> Segment:
    labels = [OUTSIDE] * len(tokens)
    for span in sorted(spans, key=lambda s: (s.start, s.end)):
        if not 0 <= span.start < span.end <= len(tokens):
            raise BioError(f"span {span.key} out of range for {len(tokens)} tokens")
        if any(lab != OUTSIDE for lab in labels[span.start : span.end]):
            raise BioError(f"span {span.key} overlaps another span")
        labels[span.start] = "B-" + span.entity_type
        for i in range(span.start + 1, span.end):
            labels[i] = "I-" + span.entity_type
    return Segment.from_lists(tokens, labels)


# -- statistics --------------------------------------------------------------


def segment_type_counts(segment: Segment) -> Counter:
    return Counter(s.entity_type for s in spans_from_bio(segment))


def entity_counts(corpus: Corpus) -> dict[str, int]:
    counts = Counter()
    for seg in corpus.segments():
        counts.update(segment_type_counts(seg))
    return {t: counts.get(t, 0) for t in entity_types_in_order(counts)}


def entity_counts_csv(counts: Mapping[str, int]) -> str:
    rows = ["entity,count"]
    rows += [f"{t},{n}" for t, n in counts.items()]
    rows.append(f"TOTAL,{sum(counts.values())}")
    return "\n".join(rows) + "\n"


# -- splitting ---------------------------------------------------------------


def largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [n * r for r in ratios]
    sizes = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def _check_ratios(ratios: Sequence[float]):
    if len(ratios) < 1 or any(not r > 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")


def split_assignment(corpus: Corpus, ratios: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 0) -> list[int]:
    """Part index for every segment, in corpus order.

    Greedy quota filling: segments are visited by descending entity count
    (seeded shuffle breaks ties) and each goes to the open part whose
    per-type quota is least satisfied, relative to the type's total.
    """
    _check_ratios(ratios)
    segs = list(corpus.segments())
    n, k = len(segs), len(ratios)
    if n < k:
        raise ValueError(f"cannot split {n} segments into {k} parts")
    sizes = largest_remainder(n, ratios)

    types = entity_types_in_order(t for s in segs for t in segment_type_counts(s))
    tindex = {t: i for i, t in enumerate(types)}
    counts = np.zeros((n, len(types)))
    for i, s in enumerate(segs):
        for t, c in segment_type_counts(s).items():
            counts[i, tindex[t]] = c
    totals = counts.sum(axis=0)
    totals[totals == 0] = 1.0
    targets = np.outer(ratios, totals)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    order = sorted(perm, key=lambda i: -counts[i].sum())  # stable: keeps shuffle among ties

    assigned = np.zeros((k, len(types)))
    filled = [0] * k
    parts = [-1] * n
    for i in order:
        best, best_key = None, None
        for p in range(k):
            if filled[p] >= sizes[p]:
                continue
            deficit = float(np.dot(counts[i], (targets[p] - assigned[p]) / totals))
            room = (sizes[p] - filled[p]) / sizes[p]
            key = (deficit, room)
            if best_key is None or key > best_key:
                best, best_key = p, key
        parts[i] = best
        filled[best] += 1
        assigned[best] += counts[i]
    return parts


def apply_assignment(corpus: Corpus, assignment: Sequence[int], n_parts: int) -> tuple[Corpus, ...]:
    if len(assignment) != corpus.n_segments:
        raise ValueError("assignment length does not match segment count")
    buckets: list[list[Document]] = [[] for _ in range(n_parts)]
    it = iter(assignment)
    for doc in corpus.documents:
        per_part: list[list[Segment]] = [[] for _ in range(n_parts)]
        for seg in doc.segments:
            per_part[next(it)].append(seg)
        for p, segs in enumerate(per_part):
            if segs:
                buckets[p].append(Document(doc.id, tuple(segs), doc.metadata))
    out = []
    for docs in buckets:
        # an implicit (empty-id) document may only lead the corpus; it always does here
        out.append(Corpus(tuple(docs)))
    return tuple(out)


def stratified_split(
    corpus: Corpus, ratios: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 0
) -> tuple[Corpus, ...]:
    """Split at segment level into parts (train, test, val by default ratios)."""
    assignment = split_assignment(corpus, ratios, seed)
    return apply_assignment(corpus, assignment, len(ratios))


def concat(*corpora: Corpus) -> Corpus:
    """Join corpora; documents sharing an id are merged in order."""
    merged: dict[str, list[Segment]] = {}
    meta: dict[str, Mapping[str, str]] = {}
    for c in corpora:
        for d in c.documents:
            merged.setdefault(d.id, []).extend(d.segments)
            meta.setdefault(d.id, d.metadata)
    docs = sorted(merged, key=lambda i: i != "")  # empty id must lead
    return Corpus(tuple(Document(i, tuple(merged[i]), meta[i]) for i in docs))

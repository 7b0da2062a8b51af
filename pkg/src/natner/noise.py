"""OCR error modeling: character alignment, error tables and noise injection."""

from __future__ import annotations

import csv
import io
import zlib
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from itertools import zip_longest
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import Corpus, Document, Segment, StructureMismatch

DEFAULT_LAMBDA = 0.8
TABLE_HEADER = ("recognized", "correct", "type", "frequency")

LOWER = "abcdefghijklmnopqrstuvwxyzäöüß"
UPPER = "ABCDEFGHIJKLMNOPQRSTUVWXYZÄÖÜ"
DIGITS = "0123456789"


class EditType(str, Enum):
    SUBSTITUTION = "substitution"
    DELETION = "deletion"
    INSERTION = "insertion"


class ErrorTableFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorEntry:
    """One observed OCR confusion; ``recognized`` is what the OCR produced."""

    recognized: str
    correct: str
    edit_type: EditType
    frequency: int = 1

    def __post_init__(self):
        t = EditType(self.edit_type)
        object.__setattr__(self, "edit_type", t)
        if self.frequency < 1:
            raise ValueError(f"frequency must be >= 1, got {self.frequency}")
        if t is EditType.SUBSTITUTION:
            ok = self.recognized and self.correct and self.recognized != self.correct
        elif t is EditType.DELETION:
            ok = not self.recognized and self.correct
        else:
            ok = self.recognized and not self.correct
        if not ok:
            raise ValueError(f"inconsistent {t.value} entry {self.recognized!r}/{self.correct!r}")

    @property
    def key(self) -> tuple[str, str, EditType]:
        return (self.recognized, self.correct, self.edit_type)


class ErrorTable:
    """Frequency-weighted inventory of OCR errors, merged on identical triples."""

    def __init__(self, entries: Iterable[ErrorEntry] = ()):
        merged: dict[tuple, int] = {}
        for e in entries:
            merged[e.key] = merged.get(e.key, 0) + e.frequency
        self.entries: tuple[ErrorEntry, ...] = tuple(
            ErrorEntry(r, c, t, f) for (r, c, t), f in merged.items()
        )

    @property
    def total(self) -> int:
        return sum(e.frequency for e in self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, ErrorTable) and self.entries == other.entries

    def __repr__(self):
        return f"ErrorTable({len(self.entries)} entries, total={self.total})"

    def sorted(self) -> "ErrorTable":
        return ErrorTable(
            sorted(self.entries, key=lambda e: (-e.frequency, e.edit_type.value, e.correct, e.recognized))
        )

    def frequencies(self) -> dict[tuple, int]:
        return {e.key: e.frequency for e in self.entries}


def load_error_table(text: str) -> ErrorTable:
    reader = csv.reader(io.StringIO(text), delimiter=";")
    rows = list(reader)
    if not rows:
        raise ErrorTableFormatError("missing header")
    if tuple(h.strip() for h in rows[0]) != TABLE_HEADER:
        raise ErrorTableFormatError(f"bad header {rows[0]!r}, expected {';'.join(TABLE_HEADER)}")
    entries = []
    for rowno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != 4:
            raise ErrorTableFormatError(f"row {rowno}: expected 4 fields, got {len(row)}")
        rec, cor, typ, freq = row
        try:
            etype = EditType(typ.strip().lower())
        except ValueError:
            raise ErrorTableFormatError(f"row {rowno}: unknown type {typ!r}") from None
        try:
            n = int(freq)
        except ValueError:
            raise ErrorTableFormatError(f"row {rowno}: bad frequency {freq!r}") from None
        if n < 0:
            raise ErrorTableFormatError(f"row {rowno}: negative frequency {n}")
        if n == 0:
            continue
        try:
            entries.append(ErrorEntry(rec, cor, etype, n))
        except ValueError as exc:
            raise ErrorTableFormatError(f"row {rowno}: {exc}") from None
    return ErrorTable(entries)


def save_error_table(table: ErrorTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=";", lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for e in table.entries:
        w.writerow([e.recognized, e.correct, e.edit_type.value, e.frequency])
    return buf.getvalue()


def default_error_table() -> ErrorTable:
    """Bundled table covering the common OCR error classes (placeholder counts)."""
    text = resources.files("natner.data").joinpath("ocr_errors.csv").read_text(encoding="utf-8")
    return load_error_table(text)


# -- alignment ---------------------------------------------------------------


class EditOp(NamedTuple):
    position: int  # index into the clean string
    edit_type: EditType
    recognized: str
    correct: str


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def align_chars(noisy: str, clean: str) -> list[EditOp]:
    """Minimal unit-cost edit script turning ``clean`` into ``noisy``.

    Traceback runs from the end and prefers match, substitution, deletion,
    insertion in that order.
    """
    if noisy == clean:
        return []
    n, m = len(clean), len(noisy)
    d = [list(range(m + 1))]
    for i in range(1, n + 1):
        ci = clean[i - 1]
        up = d[-1]
        row = [i]
        for j in range(1, m + 1):
            row.append(min(up[j] + 1, row[j - 1] + 1, up[j - 1] + (ci != noisy[j - 1])))
        d.append(row)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        cur = d[i][j]
        if i > 0 and j > 0 and clean[i - 1] == noisy[j - 1] and d[i - 1][j - 1] == cur:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i - 1][j - 1] + 1 == cur:
            ops.append(EditOp(i - 1, EditType.SUBSTITUTION, noisy[j - 1], clean[i - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and d[i - 1][j] + 1 == cur:
            ops.append(EditOp(i - 1, EditType.DELETION, "", clean[i - 1]))
            i -= 1
        else:
            ops.append(EditOp(i, EditType.INSERTION, noisy[j - 1], ""))
            j -= 1
    ops.reverse()
    return ops


def apply_script(clean: str, script: Sequence[EditOp]) -> str:
    out = []
    pos = 0
    for op in script:
        out.append(clean[pos : op.position])
        pos = op.position
        out.append(op.recognized)
        pos += len(op.correct)
    out.append(clean[pos:])
    return "".join(out)


def merge_runs(script: Sequence[EditOp]) -> list[EditOp]:
    """Fuse adjacent deletions and same-position insertions into one op each."""
    out: list[EditOp] = []
    for op in script:
        if out:
            last = out[-1]
            if (
                op.edit_type is EditType.DELETION
                and last.edit_type is EditType.DELETION
                and last.position + len(last.correct) == op.position
            ):
                out[-1] = last._replace(correct=last.correct + op.correct)
                continue
            if (
                op.edit_type is EditType.INSERTION
                and last.edit_type is EditType.INSERTION
                and last.position == op.position
            ):
                out[-1] = last._replace(recognized=last.recognized + op.recognized)
                continue
        out.append(op)
    return out


def _check_parallel(noisy: Corpus, clean: Corpus):
    """Raise StructureMismatch naming the first segment where the corpora diverge."""
    for dn, dc in zip_longest(noisy.documents, clean.documents):
        if dn is None or dc is None:
            side = "noisy" if dc is None else "clean"
            raise StructureMismatch(f"document {(dn or dc).id!r}, segment 0: only in the {side} corpus")
        if dn.id != dc.id:
            raise StructureMismatch(f"document {dc.id!r}, segment 0: noisy corpus has document {dn.id!r} here")
        for k, (sn, sc) in enumerate(zip_longest(dn.segments, dc.segments)):
            if sn is None or sc is None:
                side = "noisy" if sc is None else "clean"
                raise StructureMismatch(f"document {dc.id!r}, segment {k}: only in the {side} corpus")
            if len(sn) != len(sc):
                raise StructureMismatch(
                    f"document {dc.id!r}, segment {k}: token count differs ({len(sn)} vs {len(sc)})"
                )


def analyze_errors(noisy: Corpus, clean: Corpus) -> ErrorTable:
    _check_parallel(noisy, clean)
    counts: Counter = Counter()
    for sn, sc in zip(noisy.segments(), clean.segments()):
        for tn, tc in zip(sn.tokens, sc.tokens):
            if tn.text == tc.text:
                continue
            for op in merge_runs(align_chars(tn.text, tc.text)):
                counts[(op.recognized, op.correct, op.edit_type)] += 1
    entries = [ErrorEntry(r, c, t, f) for (r, c, t), f in counts.items()]
    return ErrorTable(entries).sorted()


# -- injection ---------------------------------------------------------------


def is_perturbable(word: str) -> bool:
    return len(word) >= 2 and any(ch.isalnum() for ch in word)


def _char_pool(word: str) -> str:
    pool = ""
    if any(ch.islower() for ch in word):
        pool += LOWER
    if any(ch.isupper() for ch in word):
        pool += UPPER
    if any(ch.isdigit() for ch in word):
        pool += DIGITS
    return pool or LOWER


def _occurrences(word: str, sub: str) -> list[int]:
    out, i = [], word.find(sub)
    while i >= 0:
        out.append(i)
        i = word.find(sub, i + 1)
    return out


def _applicable(table: ErrorTable, word: str) -> list[ErrorEntry]:
    return [e for e in table.entries if e.edit_type is EditType.INSERTION or e.correct in word]


def _table_edit(word: str, entry: ErrorEntry, rng: np.random.Generator) -> str:
    if entry.edit_type is EditType.INSERTION:
        pos = int(rng.integers(len(word) + 1))
        return word[:pos] + entry.recognized + word[pos:]
    where = _occurrences(word, entry.correct)
    pos = where[int(rng.integers(len(where)))]
    return word[:pos] + entry.recognized + word[pos + len(entry.correct) :]


def _fallback_edit(word: str, rng: np.random.Generator) -> str:
    kind = int(rng.integers(3))
    pool = _char_pool(word)
    if kind == 0:
        pos = int(rng.integers(len(word)))
        choices = pool.replace(word[pos], "")
        ch = choices[int(rng.integers(len(choices)))]
        return word[:pos] + ch + word[pos + 1 :]
    if kind == 1:
        pos = int(rng.integers(len(word)))
        return word[:pos] + word[pos + 1 :]
    pos = int(rng.integers(len(word) + 1))
    ch = pool[int(rng.integers(len(pool)))]
    return word[:pos] + ch + word[pos:]


def perturb_word(
    word: str, table: ErrorTable, rng: np.random.Generator, table_bias: float = DEFAULT_LAMBDA
) -> str:
    """Apply exactly one edit to ``word``.

    With probability ``table_bias`` the edit is drawn from the table entries
    applicable to the word, proportionally to frequency; otherwise (or when no
    entry applies) a random substitution, deletion or insertion is made.
    """
    if not is_perturbable(word):
        raise ValueError(f"word {word!r} is not perturbable")
    if not 0.0 <= table_bias <= 1.0:
        raise ValueError(f"table_bias must lie in [0, 1], got {table_bias}")
    if rng.random() < table_bias:
        entries = _applicable(table, word)
        if entries:
            freqs = np.array([e.frequency for e in entries], dtype=float)
            k = int(rng.choice(len(entries), p=freqs / freqs.sum()))
            return _table_edit(word, entries[k], rng)
    return _fallback_edit(word, rng)


def segment_rng(seed: int, doc_id: str, index: int) -> np.random.Generator:
    """Independent stream per segment, so serial and parallel runs agree."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(doc_id.encode("utf-8")), index])


def inject_segment(
    segment: Segment, table: ErrorTable, rng: np.random.Generator, table_bias: float = DEFAULT_LAMBDA
) -> Segment:
    texts = [perturb_word(w, table, rng, table_bias) if is_perturbable(w) else w for w in segment.texts]
    return segment.with_texts(texts)


def inject_noise(corpus: Corpus, table: ErrorTable, seed: int = 0, table_bias: float = DEFAULT_LAMBDA) -> Corpus:
    return corpus.map_segments(
        lambda doc, i, seg: inject_segment(seg, table, segment_rng(seed, doc.id, i), table_bias)
    )


def make_artificial(clean: Corpus, table: ErrorTable, seed: int = 0, table_bias: float = DEFAULT_LAMBDA) -> Corpus:
    """Clean data followed by its noised copy, document by document."""
    noised = inject_noise(clean, table, seed, table_bias)
    docs = tuple(
        Document(dc.id, dc.segments + dn.segments, dc.metadata)
        for dc, dn in zip(clean.documents, noised.documents)
    )
    return Corpus(docs)


__all__ = [
    "DEFAULT_LAMBDA",
    "EditOp",
    "EditType",
    "ErrorEntry",
    "ErrorTable",
    "ErrorTableFormatError",
    "StructureMismatch",
    "align_chars",
    "analyze_errors",
    "apply_script",
    "default_error_table",
    "inject_noise",
    "is_perturbable",
    "levenshtein",
    "load_error_table",
    "make_artificial",
    "merge_runs",
    "perturb_word",
    "save_error_table",
]

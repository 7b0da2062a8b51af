"""Strict entity-level scoring, token-level type confusion and curve export."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import Corpus, StructureMismatch, entity_types_in_order, label_type, repair_labels, spans_from_labels


class Counts(NamedTuple):
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return harmonic_f1(self.precision, self.recall)


def harmonic_f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class Confusion:
    """Gold type x predicted type token counts; O is kept out of the matrix."""

    types: list[str]
    matrix: np.ndarray
    missed: int = 0  # gold entity token predicted O
    spurious: int = 0  # gold O token predicted as an entity

    def to_csv(self) -> str:
        rows = ["gold\\pred," + ",".join(self.types)]
        for t, row in zip(self.types, self.matrix):
            rows.append(t + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(rows) + "\n"


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_entity: dict[str, Counts]
    confusion: Confusion = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_entity": {
                t: {"tp": c.tp, "fp": c.fp, "fn": c.fn, "precision": c.precision, "recall": c.recall, "f1": c.f1}
                for t, c in self.per_entity.items()
            },
            "confusion": {
                "types": self.confusion.types,
                "matrix": self.confusion.matrix.astype(int).tolist(),
                "missed": self.confusion.missed,
                "spurious": self.confusion.spurious,
            },
        }


def _label_pairs(gold: Corpus, pred: Corpus) -> list[tuple[list[str], list[str]]]:
    if len(gold.documents) != len(pred.documents):
        raise StructureMismatch("gold and predicted corpora have different document counts")
    pairs = []
    for dg, dp in zip(gold.documents, pred.documents):
        if len(dg.segments) != len(dp.segments):
            raise StructureMismatch(f"document {dg.id!r}: segment counts differ")
        for k, (sg, sp) in enumerate(zip(dg.segments, dp.segments)):
            if len(sg) != len(sp):
                raise StructureMismatch(f"document {dg.id!r}, segment {k}: token counts differ")
            pairs.append((sg.labels, sp.labels))
    return pairs


def score_label_sequences(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> EvalReport:
    """Score (gold, predicted) label sequences; both sides are BIO-repaired first."""
    pairs = [(repair_labels(g), repair_labels(p)) for g, p in pairs]
    tp, fp, fn = Counter(), Counter(), Counter()
    for g, p in pairs:
        gs = {s.key for s in spans_from_labels(g)}
        ps = {s.key for s in spans_from_labels(p)}
        for t, *_ in gs & ps:
            tp[t] += 1
        for t, *_ in ps - gs:
            fp[t] += 1
        for t, *_ in gs - ps:
            fn[t] += 1
    types = sorted(set(tp) | set(fp) | set(fn))
    per_entity = {t: Counts(tp[t], fp[t], fn[t]) for t in entity_types_in_order(types) if t in types}
    micro = Counts(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    return EvalReport(
        micro.tp,
        micro.fp,
        micro.fn,
        micro.precision,
        micro.recall,
        micro.f1,
        per_entity,
        confusion_from_pairs(pairs),
    )


def entity_prf(gold: Corpus, pred: Corpus) -> EvalReport:
    return score_label_sequences(_label_pairs(gold, pred))


def confusion_from_pairs(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> Confusion:
    cells = Counter()
    missed = spurious = 0
    seen = set()
    for g, p in pairs:
        for lg, lp in zip(g, p):
            tg, tp_ = label_type(lg), label_type(lp)
            if tg is None and tp_ is None:
                continue
            if tp_ is None:
                missed += 1
                seen.add(tg)
            elif tg is None:
                spurious += 1
                seen.add(tp_)
            else:
                cells[(tg, tp_)] += 1
                seen.update((tg, tp_))
    types = entity_types_in_order(seen)
    index = {t: i for i, t in enumerate(types)}
    matrix = np.zeros((len(types), len(types)), dtype=np.int64)
    for (a, b), n in cells.items():
        matrix[index[a], index[b]] = n
    return Confusion(types, matrix, missed, spurious)


def token_confusion(gold: Corpus, pred: Corpus) -> Confusion:
    return confusion_from_pairs(_label_pairs(gold, pred))


def epoch_curve_csv(records: Sequence) -> str:
    """``epoch,train_loss,precision,recall,f1`` with six decimals."""
    if not records:
        raise ValueError("no epoch records")
    epochs = [r.epoch for r in records]
    if any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise ValueError(f"epoch ids must be strictly increasing, got {epochs}")
    rows = ["epoch,train_loss,precision,recall,f1"]
    for r in records:
        rows.append(f"{r.epoch},{r.train_loss:.6f},{r.val_precision:.6f},{r.val_recall:.6f},{r.val_f1:.6f}")
    return "\n".join(rows) + "\n"


__all__ = [
    "Confusion",
    "Counts",
    "EvalReport",
    "entity_prf",
    "epoch_curve_csv",
    "harmonic_f1",
    "score_label_sequences",
    "token_confusion",
]

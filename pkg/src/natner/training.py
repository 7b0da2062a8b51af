"""CRF training: class weighting, oversampling, LR schedule and early stopping."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import OUTSIDE, Corpus, Document, entity_counts
from .crf import WEIGHTINGS, CrfModel, encode, label_alphabet, segment_loss_terms, token_weights, viterbi
from .evaluation import score_label_sequences
from .features import DEFAULT_TEMPLATES, segment_features

log = logging.getLogger(__name__)

# The original schedule targets transformer fine-tuning at 2e-5; a CRF trained
# with plain SGD needs a much larger step.
TRANSFORMER_TARGET_LR = 2e-5


@dataclass(frozen=True)
class TrainConfig:
    target_lr: float = 0.1
    warmup_fraction: float = 0.10
    max_epochs: int = 25
    patience: int = 5
    l2: float = 1e-4
    clamp_min: float = 0.1
    clamp_max: float = 10.0
    oversample: bool = True
    oversample_factor: int = 3
    class_weighting: bool = True
    weighting: str = "segment"  # how class weights enter the CRF loss: "segment" or "token"
    seed: int = 0
    batch_size: int = 8
    schedule: str = "warmup_invsqrt"  # "constant" is a diagnostic mode

    def __post_init__(self):
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must be positive and smaller than max_epochs")
        if self.batch_size < 1 or self.oversample_factor < 1:
            raise ValueError("batch_size and oversample_factor must be >= 1")
        if not 0 < self.clamp_min <= self.clamp_max:
            raise ValueError("need 0 < clamp_min <= clamp_max")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.schedule not in ("warmup_invsqrt", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_precision: float
    val_recall: float
    val_f1: float


def warmup_steps(total_steps: int, config: TrainConfig) -> int:
    return max(1, math.ceil(config.warmup_fraction * total_steps))


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warm-up to ``target_lr``, then decay with the inverse square root of the step."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if config.schedule == "constant":
        return config.target_lr
    w = warmup_steps(total_steps, config)
    if step < w:
        return config.target_lr * (step + 1) / w
    return config.target_lr * math.sqrt(w / (step + 1))


def class_weights(
    corpus: Corpus,
    clamp_min: float = 0.1,
    clamp_max: float = 10.0,
    labels: Iterable[str] | None = None,
) -> dict[str, float]:
    """Balanced inverse-frequency label weights, normalized to mean 1, then clamped.

    Labels listed in ``labels`` but absent from the corpus get ``clamp_max``.
    """
    counts = Counter(t.label for t in corpus.tokens())
    if not counts:
        raise ValueError("cannot compute class weights of an empty corpus")
    n, k = sum(counts.values()), len(counts)
    raw = {lab: n / (k * c) for lab, c in counts.items()}
    mean = sum(raw.values()) / k
    weights = {lab: min(max(w / mean, clamp_min), clamp_max) for lab, w in raw.items()}
    for lab in labels or ():
        weights.setdefault(lab, clamp_max)
    return weights


def oversample(corpus: Corpus, factor: int = 3) -> Corpus:
    """Repeat every segment holding a non-O label ``factor`` times, replicas adjacent."""
    if factor < 1:
        raise ValueError(f"oversampling factor must be >= 1, got {factor}")
    docs = []
    for d in corpus.documents:
        segs = []
        for s in d.segments:
            reps = factor if any(lab != OUTSIDE for lab in s.labels) else 1
            segs.extend([s] * reps)
        docs.append(Document(d.id, tuple(segs), d.metadata))
    return Corpus(tuple(docs))


class EarlyStopping:
    """Tracks the best score; ``update`` returns True once ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.stale = score, epoch, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def predict(model: CrfModel, corpus: Corpus) -> Corpus:
    return corpus.map_segments(lambda d, i, s: s.with_labels(viterbi(model, s)))


def corpus_features(corpus: Corpus, templates: Sequence[str] = DEFAULT_TEMPLATES) -> list[str]:
    """Feature strings in order of first occurrence."""
    seen: dict[str, None] = {}
    for seg in corpus.segments():
        for feats in segment_features(seg, templates):
            for f in feats:
                seen.setdefault(f, None)
    return list(seen)


def _corpus_types(*corpora: Corpus) -> set[str]:
    types = set()
    for c in corpora:
        for tok in c.tokens():
            if tok.label != OUTSIDE:
                types.add(tok.label[2:])
    return types


def train(
    train_corpus: Corpus,
    val: Corpus,
    config: TrainConfig = TrainConfig(),
    init: CrfModel | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[CrfModel, list[EpochRecord]]:
    """Mini-batch SGD on the class-weighted CRF likelihood.

    The model is scored on ``val`` after every epoch and the snapshot with the
    best entity-level micro F1 is returned (earliest epoch on ties). With
    ``init`` the run warm-starts: its vocabulary and labels are extended,
    never rebuilt.
    """
    if train_corpus.n_segments == 0:
        raise ValueError("training corpus is empty")
    if sum(entity_counts(val).values()) == 0:
        raise ValueError("validation corpus has no entities; F1 would be undefined")

    data = oversample(train_corpus, config.oversample_factor) if config.oversample else train_corpus
    labels = label_alphabet(_corpus_types(train_corpus, val))
    templates = init.templates if init is not None else DEFAULT_TEMPLATES
    features = corpus_features(data, templates)
    if init is None:
        model = CrfModel.zeros(labels, features, templates)
    else:
        model = init.extended(features, labels)
    cw = class_weights(data, config.clamp_min, config.clamp_max, model.labels) if config.class_weighting else None

    encoded = [encode(model, s, with_gold=True) for s in data.segments()]
    weights = [token_weights(model, e.gold, cw) for e in encoded]
    val_segments = list(val.segments())
    val_encoded = [encode(model, s) for s in val_segments]
    val_gold = [s.labels for s in val_segments]

    n = len(encoded)
    bs = config.batch_size
    n_batches = math.ceil(n / bs)
    total_steps = config.max_epochs * n_batches
    step = 0
    log.info("training on %d segments (%d tokens), %d features", n, data.n_tokens, len(model.feature_vocab))

    stopper = EarlyStopping(config.patience)
    best = model.copy()
    records: list[EpochRecord] = []
    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, epoch]).permutation(n)
        epoch_loss = 0.0
        for b in range(n_batches):
            batch = order[b * bs : (b + 1) * bs]
            g_emit = np.zeros_like(model.emission)
            g_trans = np.zeros_like(model.transitions)
            g_start = np.zeros_like(model.start)
            g_end = np.zeros_like(model.end)
            nll = 0.0
            for i in batch:
                enc = encoded[i]
                loss, d_emit, d_trans, d_start, d_end = segment_loss_terms(model, enc, weights[i], config.weighting)
                nll += loss
                np.add.at(g_emit, enc.ids, d_emit[enc.pos])
                g_trans += d_trans
                g_start += d_start
                g_end += d_end
            m = len(batch)
            sq = sum(float(np.vdot(a, a)) for a in (model.emission, model.transitions, model.start, model.end))
            epoch_loss += (nll / m + 0.5 * config.l2 * sq) * m
            lr = lr_at(min(step, total_steps), total_steps, config)
            for param, grad in (
                (model.emission, g_emit),
                (model.transitions, g_trans),
                (model.start, g_start),
                (model.end, g_end),
            ):
                param -= lr * (grad / m + config.l2 * param)
            step += 1

        pred = [viterbi(model, e) for e in val_encoded]
        report = score_label_sequences(zip(val_gold, pred))
        rec = EpochRecord(epoch, epoch_loss / n, report.precision, report.recall, report.f1)
        records.append(rec)
        log.info(
            "epoch %d loss %.4f val P %.4f R %.4f F1 %.4f", epoch, rec.train_loss, rec.val_precision, rec.val_recall, rec.val_f1
        )
        if on_epoch is not None:
            on_epoch(rec)
        improved = report.f1 > stopper.best
        stop = stopper.update(epoch, report.f1)
        if improved:
            best = model.copy()
        if stop:
            break
    return best, records


def objective(
    model: CrfModel,
    corpus: Corpus,
    weights: Mapping[str, float] | None = None,
    l2: float = 0.0,
    weighting: str = "segment",
) -> float:
    """Mean weighted NLL over the corpus plus ``0.5 * l2 * ||theta||^2``."""
    total = 0.0
    segs = list(corpus.segments())
    for s in segs:
        enc = encode(model, s, with_gold=True)
        total += segment_loss_terms(model, enc, token_weights(model, enc.gold, weights), weighting)[0]
    theta = model.parameters()
    return total / len(segs) + 0.5 * l2 * float(np.dot(theta, theta))

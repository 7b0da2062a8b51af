"""Linear-chain CRF: parameters, exact inference, loss/gradient and model files.

Potentials for a label path ``y`` over a segment of length T::

    score(y) = start[y0] + sum_t emit[t, y_t] + sum_{t>0} trans[y_{t-1}, y_t] + end[y_{T-1}]

where ``emit[t]`` sums the emission rows of the features active at t.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import OUTSIDE, Segment, entity_types_in_order, repair_labels
from .features import DEFAULT_TEMPLATES, segment_features

MAGIC = b"NATCRF"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


def label_alphabet(entity_types: Iterable[str] = ()) -> tuple[str, ...]:
    """``O`` first, then ``B-``/``I-`` pairs; the five standard types are always included."""
    labels = [OUTSIDE]
    for t in entity_types_in_order(entity_types):
        labels += ["B-" + t, "I-" + t]
    return tuple(labels)


# -- inference core on raw potentials ----------------------------------------


def logsumexp(x: np.ndarray, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


def forward(emit, trans, start, end):
    """Log-space forward pass; returns (alpha, log_partition)."""
    T = emit.shape[0]
    alpha = np.empty_like(emit)
    alpha[0] = start + emit[0]
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + trans, axis=0) + emit[t]
    return alpha, float(logsumexp(alpha[-1] + end))


def backward(emit, trans, end):
    T = emit.shape[0]
    beta = np.empty_like(emit)
    beta[-1] = end
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(trans + (emit[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def path_score(emit, trans, start, end, path: Sequence[int]) -> float:
    path = list(path)
    s = start[path[0]] + end[path[-1]]
    s += sum(emit[t, y] for t, y in enumerate(path))
    s += sum(trans[a, b] for a, b in zip(path, path[1:]))
    return float(s)


def viterbi_path(emit, trans, start, end) -> tuple[list[int], float]:
    """Best path; ties go to the lowest label index."""
    T, K = emit.shape
    delta = start + emit[0]
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(K)] + emit[t]
    final = delta + end
    y = int(np.argmax(final))
    best = float(final[y])
    path = [y]
    for t in range(T - 1, 0, -1):
        y = int(back[t, y])
        path.append(y)
    path.reverse()
    return path, best


# -- model -------------------------------------------------------------------


@dataclass
class CrfModel:
    labels: tuple[str, ...]
    feature_vocab: dict[str, int]
    emission: np.ndarray  # (n_features, K)
    transitions: np.ndarray  # (K, K), from-label x to-label
    start: np.ndarray
    end: np.ndarray
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    version: int = FORMAT_VERSION

    def __post_init__(self):
        K = len(self.labels)
        if OUTSIDE not in self.labels:
            raise ValueError("label alphabet must contain O")
        for lab in self.labels:
            if lab != OUTSIDE and ("B" + lab[1:] not in self.labels or "I" + lab[1:] not in self.labels):
                raise ValueError(f"label alphabet lacks the B/I partner of {lab}")
        if self.emission.shape != (len(self.feature_vocab), K):
            raise ValueError("emission shape does not match vocabulary and labels")
        if self.transitions.shape != (K, K) or self.start.shape != (K,) or self.end.shape != (K,):
            raise ValueError("transition/start/end shapes do not match labels")

    @classmethod
    def zeros(cls, labels: Sequence[str], features: Iterable[str] = (), templates=DEFAULT_TEMPLATES) -> "CrfModel":
        vocab: dict[str, int] = {}
        for f in features:
            vocab.setdefault(f, len(vocab))
        K = len(labels)
        return cls(
            tuple(labels),
            vocab,
            np.zeros((len(vocab), K)),
            np.zeros((K, K)),
            np.zeros(K),
            np.zeros(K),
            tuple(templates),
        )

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def copy(self) -> "CrfModel":
        return CrfModel(
            self.labels,
            dict(self.feature_vocab),
            self.emission.copy(),
            self.transitions.copy(),
            self.start.copy(),
            self.end.copy(),
            self.templates,
            self.version,
        )

    def extended(self, features: Iterable[str] = (), labels: Iterable[str] = ()) -> "CrfModel":
        """Copy with new features/labels appended (zero weights); existing ids keep their meaning."""
        vocab = dict(self.feature_vocab)
        for f in features:
            vocab.setdefault(f, len(vocab))
        new_labels = list(self.labels) + [l for l in dict.fromkeys(labels) if l not in self.labels]
        K0, K = self.n_labels, len(new_labels)
        em = np.zeros((len(vocab), K))
        em[: self.emission.shape[0], :K0] = self.emission
        tr = np.zeros((K, K))
        tr[:K0, :K0] = self.transitions
        st, en = np.zeros(K), np.zeros(K)
        st[:K0], en[:K0] = self.start, self.end
        return CrfModel(tuple(new_labels), vocab, em, tr, st, en, self.templates, self.version)

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.emission.ravel(), self.transitions.ravel(), self.start, self.end])

    def with_parameters(self, theta: np.ndarray) -> "CrfModel":
        F, K = self.emission.shape
        a, b = F * K, F * K + K * K
        return CrfModel(
            self.labels,
            dict(self.feature_vocab),
            theta[:a].reshape(F, K).copy(),
            theta[a:b].reshape(K, K).copy(),
            theta[b : b + K].copy(),
            theta[b + K :].copy(),
            self.templates,
            self.version,
        )

    def same_as(self, other: "CrfModel") -> bool:
        """Bitwise equality of every field."""
        return (
            self.labels == other.labels
            and self.feature_vocab == other.feature_vocab
            and self.templates == other.templates
            and self.version == other.version
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in [
                    (self.emission, other.emission),
                    (self.transitions, other.transitions),
                    (self.start, other.start),
                    (self.end, other.end),
                ]
            )
        )


@dataclass
class Encoded:
    """Feature ids of a segment, flattened: ``ids[k]`` fires at position ``pos[k]``."""

    length: int
    ids: np.ndarray
    pos: np.ndarray
    gold: np.ndarray | None = field(default=None)


def encode(model: CrfModel, segment: Segment, with_gold: bool = False) -> Encoded:
    vocab = model.feature_vocab
    ids, pos = [], []
    for t, feats in enumerate(segment_features(segment, model.templates)):
        for f in feats:
            i = vocab.get(f)
            if i is not None:
                ids.append(i)
                pos.append(t)
    gold = None
    if with_gold:
        index = model.label_index()
        gold = np.array([index[lab] for lab in segment.labels], dtype=np.int64)
    return Encoded(len(segment), np.array(ids, dtype=np.int64), np.array(pos, dtype=np.int64), gold)


def emissions(model: CrfModel, enc: Encoded) -> np.ndarray:
    emit = np.zeros((enc.length, model.n_labels))
    np.add.at(emit, enc.pos, model.emission[enc.ids])
    return emit


def viterbi_indices(model: CrfModel, segment: Segment | Encoded) -> tuple[list[int], float]:
    enc = segment if isinstance(segment, Encoded) else encode(model, segment)
    return viterbi_path(emissions(model, enc), model.transitions, model.start, model.end)


def viterbi(model: CrfModel, segment: Segment | Encoded) -> list[str]:
    path, _ = viterbi_indices(model, segment)
    return repair_labels([model.labels[y] for y in path])


def log_partition(model: CrfModel, segment: Segment) -> float:
    enc = encode(model, segment)
    return forward(emissions(model, enc), model.transitions, model.start, model.end)[1]


# -- loss and gradient -------------------------------------------------------


@dataclass
class Gradient:
    emission: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.emission.ravel(), self.transitions.ravel(), self.start, self.end])


def token_weights(model: CrfModel, gold: np.ndarray, class_weights: Mapping[str, float] | None) -> np.ndarray:
    if class_weights is None:
        return np.ones(len(gold))
    per_label = np.array([class_weights.get(lab, 1.0) for lab in model.labels])
    return per_label[gold]


WEIGHTINGS = ("token", "segment")


def segment_loss_terms(model: CrfModel, enc: Encoded, weights: np.ndarray, weighting: str = "token"):
    """Weighted NLL of one encoded segment plus its sparse gradient pieces.

    ``weighting="token"`` scales each gold token's share of the path score;
    ``"segment"`` scales the whole unweighted NLL by the mean token weight,
    which keeps the objective bounded below.

    Returns ``(loss, d_emit, d_trans, d_start, d_end)`` where ``d_emit`` has
    shape (T, K): row t is added to every feature active at position t.
    """
    if weighting == "segment":
        scale = float(np.mean(weights))
        terms = segment_loss_terms(model, enc, np.ones_like(weights))
        return tuple(x * scale for x in terms)
    if weighting != "token":
        raise ValueError(f"unknown weighting {weighting!r}")
    emit = emissions(model, enc)
    trans, start, end = model.transitions, model.start, model.end
    gold = enc.gold
    T, K = emit.shape

    alpha, logz = forward(emit, trans, start, end)
    beta = backward(emit, trans, end)
    node = np.exp(alpha + beta - logz)

    # gold-path contributions, each token scaled by its class weight
    contrib = emit[np.arange(T), gold].copy()
    contrib[0] += start[gold[0]]
    contrib[1:] += trans[gold[:-1], gold[1:]]
    contrib[-1] += end[gold[-1]]
    loss = logz - float(np.dot(weights, contrib))

    d_emit = node.copy()
    d_emit[np.arange(T), gold] -= weights
    d_start = node[0].copy()
    d_start[gold[0]] -= weights[0]
    d_end = node[-1].copy()
    d_end[gold[-1]] -= weights[-1]
    if T > 1:
        pair = alpha[:-1, :, None] + trans[None] + (emit[1:] + beta[1:])[:, None, :] - logz
        d_trans = np.exp(pair).sum(axis=0)
    else:
        d_trans = np.zeros((K, K))
    np.add.at(d_trans, (gold[:-1], gold[1:]), -weights[1:])
    return loss, d_emit, d_trans, d_start, d_end


def nll_and_gradient(
    model: CrfModel,
    segment: Segment,
    class_weights: Mapping[str, float] | None = None,
    l2: float = 0.0,
    weighting: str = "token",
) -> tuple[float, Gradient]:
    """Class-weighted negative log-likelihood of the segment's gold labels.

    With token weighting the partition function stays the ordinary unweighted
    one. The L2 term is ``0.5 * l2 * ||theta||^2``.
    """
    enc = encode(model, segment, with_gold=True)
    w = token_weights(model, enc.gold, class_weights)
    loss, d_emit, d_trans, d_start, d_end = segment_loss_terms(model, enc, w, weighting)
    g_emit = np.zeros_like(model.emission)
    np.add.at(g_emit, enc.ids, d_emit[enc.pos])
    grad = Gradient(g_emit, d_trans, d_start, d_end)
    if l2:
        loss += 0.5 * l2 * float(np.dot(model.parameters(), model.parameters()))
        grad = Gradient(
            grad.emission + l2 * model.emission,
            grad.transitions + l2 * model.transitions,
            grad.start + l2 * model.start,
            grad.end + l2 * model.end,
        )
    return loss, grad


# -- persistence -------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_strs(items: Sequence[str]) -> bytes:
    return struct.pack("<I", len(items)) + b"".join(_pack_str(s) for s in items)


def model_to_bytes(model: CrfModel) -> bytes:
    features = sorted(model.feature_vocab, key=model.feature_vocab.__getitem__)
    body = [
        MAGIC,
        struct.pack("<I", model.version),
        _pack_strs(model.templates),
        _pack_strs(model.labels),
        _pack_strs(features),
    ]
    for arr in (model.transitions, model.start, model.end, model.emission):
        body.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(body)
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.off = data, 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ModelFormatError("truncated model file")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def strs(self) -> list[str]:
        out = []
        for _ in range(self.u32()):
            try:
                out.append(self.take(self.u32()).decode("utf-8"))
            except UnicodeDecodeError:
                raise ModelFormatError("corrupt string table") from None
        return out

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def model_from_bytes(data: bytes) -> CrfModel:
    if not data.startswith(MAGIC):
        raise ModelFormatError("not a model file (bad magic bytes)")
    r = _Reader(data)
    r.take(len(MAGIC))
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model file version {version}, this library reads version {FORMAT_VERSION}")
    if len(data) < len(MAGIC) + 8 or zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise ModelFormatError("checksum mismatch (truncated or corrupt model file)")
    r.data = data[:-4]
    templates = tuple(r.strs())
    labels = tuple(r.strs())
    features = r.strs()
    K, F = len(labels), len(features)
    trans = r.floats(K * K).reshape(K, K)
    start, end = r.floats(K), r.floats(K)
    emission = r.floats(F * K).reshape(F, K)
    if r.off != len(r.data):
        raise ModelFormatError("trailing bytes in model file")
    vocab = {f: i for i, f in enumerate(features)}
    if len(vocab) != F:
        raise ModelFormatError("duplicate feature names")
    return CrfModel(labels, vocab, emission, trans, start, end, templates, version)


def save_model(model: CrfModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> CrfModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())

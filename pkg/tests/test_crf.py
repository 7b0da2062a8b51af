import math
import struct
import zlib

import numpy as np
import pytest

from natner.corpus import Corpus, Segment
from natner.crf import (
    FORMAT_VERSION,
    MAGIC,
    CrfModel,
    ModelFormatError,
    VersionMismatchError,
    backward,
    emissions,
    encode,
    forward,
    label_alphabet,
    load_model,
    log_partition,
    model_from_bytes,
    model_to_bytes,
    nll_and_gradient,
    save_model,
    viterbi,
    viterbi_indices,
)
from natner.features import extract_features, segment_features, word_shape
from natner.training import corpus_features

LABELS = label_alphabet(["SKILL"])


def seg(words, labels=None):
    return Segment.from_lists(words, labels)


def model_for(words, labels=LABELS, rng=None):
    feats = sorted({f for fs in segment_features(words) for f in fs})
    m = CrfModel.zeros(labels, feats)
    if rng is not None:
        m = m.with_parameters(rng.normal(size=m.parameters().size))
    return m


# -- features ----------------------------------------------------------------


def test_feature_templates():
    f = extract_features(["Werkstoffe", "prüfen"], 0)
    assert "lower=werkstoffe" in f
    assert "shape=Xxxxxxxxxx" in f
    assert "BOS" in f and "EOS" not in f
    assert extract_features(["Werkstoffe", "prüfen"], 0) == f
    assert word_shape("Nr.3") == "Xx.d"
    with pytest.raises(IndexError):
        extract_features(["a"], 1)


def test_label_alphabet_order():
    # the five standard types are always present, extra types follow sorted
    labels = label_alphabet(["ZZZ", "SUBJECT"])
    assert labels[:3] == ("O", "B-JOB_TITLE", "I-JOB_TITLE")
    assert labels[-2:] == ("B-ZZZ", "I-ZZZ")
    assert len(labels) == 13


# -- inference ---------------------------------------------------------------


def test_zero_model_loss_is_uniform():
    words = ["Holz", "und", "Metall", "bearbeiten"]
    m = model_for(words)
    loss, _ = nll_and_gradient(m, seg(words, ["O"] * 4))
    assert loss == pytest.approx(4 * math.log(m.n_labels), abs=1e-12)


def test_zero_model_decodes_all_o():
    words = ["Holz", "und", "Metall"]
    assert viterbi(model_for(words), seg(words)) == ["O", "O", "O"]


def test_single_token_viterbi_picks_max_node_score():
    rng = np.random.default_rng(0)
    m = model_for(["Koch"], rng=rng)
    path, score = viterbi_indices(m, seg(["Koch"]))
    node = emissions(m, encode(m, seg(["Koch"])))[0] + m.start + m.end
    assert path == [int(np.argmax(node))]
    assert score == pytest.approx(node.max())


def test_forward_backward_agree():
    rng = np.random.default_rng(1)
    emit = rng.normal(size=(5, 3))
    trans, start, end = rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=3)
    alpha, logz = forward(emit, trans, start, end)
    beta = backward(emit, trans, end)
    for t in range(5):
        col = alpha[t] + beta[t]
        assert np.log(np.exp(col - col.max()).sum()) + col.max() == pytest.approx(logz)


def test_viterbi_output_is_valid_bio():
    rng = np.random.default_rng(2)
    words = ["a", "b", "c", "d", "e"]
    for _ in range(20):
        m = model_for(words, label_alphabet(["SKILL", "SUBJECT"]), rng)
        labels = viterbi(m, seg(words))
        for prev, cur in zip(["O"] + labels, labels):
            if cur.startswith("I-"):
                assert prev != "O" and prev[2:] == cur[2:]


def test_log_partition_large_scores_stable():
    m = model_for(["x", "y"])
    m.transitions[:] = 800.0
    assert np.isfinite(log_partition(m, seg(["x", "y"])))


# -- gradient ----------------------------------------------------------------


@pytest.mark.parametrize("weighting", ["token", "segment"])
def test_gradient_small_instance(weighting):
    rng = np.random.default_rng(4)
    words = ["Holz", "und", "Metall", "bearbeiten"]
    m = model_for(words, rng=rng)
    s = seg(words, ["B-SKILL", "I-SKILL", "O", "B-SKILL"])
    cw = {lab: 0.4 + 0.3 * i for i, lab in enumerate(m.labels)}
    _, g = nll_and_gradient(m, s, cw, l2=0.01, weighting=weighting)
    theta = m.parameters()
    h = 1e-5
    num = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        num[j] = (
            nll_and_gradient(m.with_parameters(theta + e), s, cw, 0.01, weighting)[0]
            - nll_and_gradient(m.with_parameters(theta - e), s, cw, 0.01, weighting)[0]
        ) / (2 * h)
    diff = np.abs(num - g.flat())
    rel = diff / np.maximum(np.maximum(np.abs(num), np.abs(g.flat())), 1e-6)
    assert rel[diff >= 1e-6].max(initial=0.0) < 1e-4


def test_unit_weights_match_between_weightings():
    rng = np.random.default_rng(5)
    words = ["a", "b", "c"]
    m = model_for(words, rng=rng)
    s = seg(words, ["O", "B-SKILL", "I-SKILL"])
    lt, gt = nll_and_gradient(m, s, None, weighting="token")
    ls, gs = nll_and_gradient(m, s, None, weighting="segment")
    assert lt == pytest.approx(ls)
    assert np.allclose(gt.flat(), gs.flat())


def test_unknown_weighting():
    with pytest.raises(ValueError):
        nll_and_gradient(model_for(["a"]), seg(["a"], ["O"]), weighting="sentence")


# -- model structure and persistence -------------------------------------------


def test_extended_keeps_ids():
    m = model_for(["a", "b"], rng=np.random.default_rng(0))
    ext = m.extended(["new=1"], label_alphabet(["SKILL", "SUBJECT"]))
    for f, i in m.feature_vocab.items():
        assert ext.feature_vocab[f] == i
        assert np.array_equal(ext.emission[i, : m.n_labels], m.emission[i])
    assert ext.labels[: m.n_labels] == m.labels
    assert ext.feature_vocab["new=1"] == len(m.feature_vocab)


def test_alphabet_needs_o_and_pairs():
    with pytest.raises(ValueError):
        CrfModel.zeros(("B-SKILL", "I-SKILL"))
    with pytest.raises(ValueError):
        CrfModel.zeros(("O", "B-SKILL"))


def test_save_load_same_predictions(tmp_path):
    rng = np.random.default_rng(7)
    corpus = Corpus.from_segments([seg(["Koch", "und", "Bäcker"]), seg(["Maurer"])])
    m = CrfModel.zeros(LABELS, corpus_features(corpus))
    m = m.with_parameters(rng.normal(size=m.parameters().size))
    path = tmp_path / "m.bin"
    save_model(m, path)
    back = load_model(path)
    assert back.same_as(m)
    for s in corpus.segments():
        assert viterbi(back, s) == viterbi(m, s)


def test_bad_magic():
    with pytest.raises(ModelFormatError, match="magic"):
        model_from_bytes(b"NOTCRF" + bytes(20))


def test_version_mismatch_names_both_versions():
    data = bytearray(model_to_bytes(model_for(["a"])))
    data[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", 999)
    with pytest.raises(VersionMismatchError) as exc:
        model_from_bytes(bytes(data))
    assert "999" in str(exc.value) and str(FORMAT_VERSION) in str(exc.value)


def test_checksum_and_truncation():
    data = model_to_bytes(model_for(["a", "b"]))
    flipped = bytearray(data)
    flipped[-20] ^= 0xFF
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_bytes(bytes(flipped))
    with pytest.raises(ModelFormatError):
        model_from_bytes(data[:-9])
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])

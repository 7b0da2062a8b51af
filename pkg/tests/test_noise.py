from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natner.corpus import Corpus, Document, Segment, StructureMismatch, entity_counts
from natner.noise import (
    EditOp,
    EditType,
    ErrorEntry,
    ErrorTable,
    ErrorTableFormatError,
    align_chars,
    analyze_errors,
    apply_script,
    default_error_table,
    inject_noise,
    levenshtein,
    load_error_table,
    make_artificial,
    merge_runs,
    perturb_word,
    save_error_table,
)

HEADER = "recognized;correct;type;frequency\n"


def corpus(*segments, doc_id="d"):
    return Corpus((Document(doc_id, tuple(Segment.from_lists(s) for s in segments)),))


# -- error table -------------------------------------------------------------


def test_load_row():
    t = load_error_table(HEADER + "i;l;substitution;12\n")
    assert t.entries == (ErrorEntry("i", "l", EditType.SUBSTITUTION, 12),)


def test_header_only_is_empty():
    assert load_error_table(HEADER).total == 0


def test_duplicates_merge():
    t = load_error_table(HEADER + "i;l;substitution;3\ni;l;substitution;4\n")
    assert len(t) == 1 and t.total == 7


@pytest.mark.parametrize(
    "body",
    [
        "i;l;substitution\n",
        "i;l;swap;3\n",
        "i;l;substitution;x\n",
        "i;l;substitution;-1\n",
        ";l;substitution;3\n",
        "a;b;deletion;3\n",
    ],
)
def test_bad_rows(body):
    with pytest.raises(ErrorTableFormatError):
        load_error_table(HEADER + body)


def test_bad_header():
    with pytest.raises(ErrorTableFormatError):
        load_error_table("a;b;c;d\n")


def test_default_table_covers_error_classes():
    keys = set(default_error_table().frequencies())
    assert ("", ",", EditType.DELETION) in keys
    assert ("", ".", EditType.DELETION) in keys
    assert ("i", "l", EditType.SUBSTITUTION) in keys
    assert ("o", "0", EditType.SUBSTITUTION) in keys
    assert (",", "", EditType.INSERTION) in keys
    assert ("'", "", EditType.INSERTION) in keys
    assert (",", ".", EditType.SUBSTITUTION) in keys
    assert (".", ",", EditType.SUBSTITUTION) in keys


def test_save_round_trip_with_separator_chars():
    t = ErrorTable([ErrorEntry(";", "", EditType.INSERTION, 2), ErrorEntry('"', "'", EditType.SUBSTITUTION, 1)])
    assert load_error_table(save_error_table(t)) == t


# -- alignment ---------------------------------------------------------------


def test_align_examples():
    assert align_chars("Damennaßschneider", "Damenmaßschneider") == [
        EditOp(5, EditType.SUBSTITUTION, "n", "m")
    ]
    assert align_chars("Werkstoffe", "Werkstoffe") == []
    assert align_chars("Werkstoffe", "Werkstoffe,") == [EditOp(10, EditType.DELETION, "", ",")]


def test_merge_runs():
    ops = align_chars("ab", "abcd")
    assert merge_runs(ops) == [EditOp(2, EditType.DELETION, "", "cd")]
    ops = align_chars("a,,b", "ab")
    assert merge_runs(ops) == [EditOp(1, EditType.INSERTION, ",,", "")]


short = st.text(alphabet="abl0,.'", max_size=8)


@given(short, short)
@settings(max_examples=300)
def test_alignment_is_minimal_and_reproduces_noisy(noisy, clean):
    ops = align_chars(noisy, clean)
    assert apply_script(clean, ops) == noisy
    assert apply_script(clean, merge_runs(ops)) == noisy
    assert len(ops) == levenshtein(noisy, clean) == _dp_oracle(noisy, clean)


def _dp_oracle(a, b):
    # recursive edit distance, memoized; independent of the library's loops
    @lru_cache(None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def test_analyze_examples():
    assert analyze_errors(corpus(["a", "b"]), corpus(["a", "b"])).total == 0
    t = analyze_errors(corpus(["Metali"]), corpus(["Metall"]))
    assert t.entries == (ErrorEntry("i", "l", EditType.SUBSTITUTION, 1),)


def test_analyze_sorted_by_frequency():
    noisy = corpus(["Metali", "Stahi", "Kupfer"], ["Holz"])
    clean = corpus(["Metall", "Stahl", "Kupfer,"], ["Holz"])
    t = analyze_errors(noisy, clean)
    assert t.entries[0] == ErrorEntry("i", "l", EditType.SUBSTITUTION, 2)


def test_analyze_structure_mismatch():
    with pytest.raises(StructureMismatch, match="segment 0"):
        analyze_errors(corpus(["a", "b"]), corpus(["a"]))
    with pytest.raises(StructureMismatch, match="segment 1"):
        analyze_errors(corpus(["a"]), corpus(["a"], ["b"]))


def test_inject_then_analyze_recovers_three_entries():
    table = ErrorTable(
        [
            ErrorEntry(",", "", EditType.INSERTION, 5),
            ErrorEntry("'", "", EditType.INSERTION, 3),
            ErrorEntry("~", "", EditType.INSERTION, 2),
        ]
    )
    rng = np.random.default_rng(0)
    words = ["".join("abcdefgh"[i] for i in rng.integers(8, size=5)) for _ in range(100_000)]
    clean = Corpus((Document("d", tuple(Segment.from_lists(words[i : i + 25]) for i in range(0, len(words), 25))),))
    noisy = inject_noise(clean, table, seed=1, table_bias=1.0)
    rec = analyze_errors(noisy, clean).frequencies()
    for e in table.entries:
        share = rec[e.key] / sum(rec.values())
        assert abs(share - e.frequency / table.total) <= 0.05 * e.frequency / table.total


# -- injection ---------------------------------------------------------------


def test_table_substitution_only_hits_applicable_positions():
    table = ErrorTable([ErrorEntry("i", "l", EditType.SUBSTITUTION, 1)])
    rng = np.random.default_rng(0)
    outs = {perturb_word("Metall", table, rng, table_bias=1.0) for _ in range(200)}
    assert outs == {"Metail", "Metali"}


class ScriptedRng:
    """Stands in for a Generator: returns queued values in order."""

    def __init__(self, randoms, integers):
        self.randoms, self.ints = list(randoms), list(integers)

    def random(self):
        return self.randoms.pop(0)

    def integers(self, n):
        value = self.ints.pop(0)
        assert 0 <= value < n
        return value


def test_forced_fallback_deletion():
    rng = ScriptedRng([0.5], [1, 0])  # kind 1 = deletion, position 0
    assert perturb_word("ab", default_error_table(), rng, table_bias=0.0) == "b"


@given(st.text(alphabet="abcXYZ019,.'", min_size=2, max_size=10), st.integers(0, 2**32))
@settings(max_examples=300)
def test_perturb_is_one_edit(word, seed):
    if not any(ch.isalnum() for ch in word):
        return
    out = perturb_word(word, default_error_table(), np.random.default_rng(seed))
    assert levenshtein(out, word) == 1


def test_fallback_never_adds_punctuation():
    rng = np.random.default_rng(3)
    for _ in range(500):
        out = perturb_word("Lehrling", ErrorTable(), rng, table_bias=0.0)
        assert out.isalpha()


def test_punctuation_tokens_unchanged():
    c = corpus([",", ".", "-", "a"])
    out = inject_noise(c, default_error_table(), seed=0)
    assert out == c


def test_injection_is_per_segment_deterministic():
    table = default_error_table()
    c = corpus(["Metall", "Werkstoffe"], ["Holz", "Stahl"])
    a = inject_noise(c, table, seed=9)
    assert a == inject_noise(c, table, seed=9)
    # each segment draws from its own stream: editing one leaves the others alone
    other = corpus(["Metall", "Werkstoffe"], ["Eisen", "Kupfer", "Zinn"])
    b = inject_noise(other, table, seed=9)
    assert a.documents[0].segments[0] == b.documents[0].segments[0]


def test_injection_preserves_labels():
    c = Corpus.from_segments([Segment.from_lists(["Maurer", "arbeitet"], ["B-JOB_TITLE", "O"])])
    out = inject_noise(c, default_error_table(), seed=1)
    assert out.documents[0].segments[0].labels == ["B-JOB_TITLE", "O"]


def test_make_artificial_doubles():
    segs = [Segment.from_lists(["Koch", "kocht"], ["B-JOB_TITLE", "O"]) for _ in range(34)]
    c = Corpus.from_segments(segs)
    art = make_artificial(c, default_error_table(), seed=0)
    assert art.n_segments == 68
    assert entity_counts(art)["JOB_TITLE"] == 68

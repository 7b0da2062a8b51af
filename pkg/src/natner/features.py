"""Hand-engineered token features for the CRF."""

from __future__ import annotations

from typing import Sequence

from .corpus import Segment

DEFAULT_TEMPLATES = (
    "bias",
    "lower",
    "shape",
    "prefix",
    "suffix",
    "trigram",
    "prev",
    "next",
    "boundary",
)


def word_shape(word: str) -> str:
    out = []
    for ch in word:
        if ch.isupper():
            out.append("X")
        elif ch.islower():
            out.append("x")
        elif ch.isdigit():
            out.append("d")
        else:
            out.append(ch)
    return "".join(out)


def _token_features(word: str, templates: Sequence[str]) -> list[str]:
    feats = []
    low = word.lower()
    if "lower" in templates:
        feats.append("lower=" + low)
    if "shape" in templates:
        feats.append("shape=" + word_shape(word))
    if "prefix" in templates:
        feats.extend(f"pre{n}={low[:n]}" for n in range(1, 5) if n <= len(low))
    if "suffix" in templates:
        feats.extend(f"suf{n}={low[-n:]}" for n in range(1, 5) if n <= len(low))
    if "trigram" in templates:
        padded = f"<{low}>"
        feats.extend(sorted({"tri=" + padded[i : i + 3] for i in range(len(padded) - 2)}))
    return feats


def extract_features(
    segment: Segment | Sequence[str], position: int, templates: Sequence[str] = DEFAULT_TEMPLATES
) -> list[str]:
    texts = segment.texts if isinstance(segment, Segment) else list(segment)
    if not 0 <= position < len(texts):
        raise IndexError(f"position {position} out of range for length {len(texts)}")
    feats = ["bias"] if "bias" in templates else []
    feats += _token_features(texts[position], templates)
    if "prev" in templates:
        feats.append("prev=" + (texts[position - 1].lower() if position > 0 else "<s>"))
    if "next" in templates:
        feats.append("next=" + (texts[position + 1].lower() if position + 1 < len(texts) else "</s>"))
    if "boundary" in templates:
        if position == 0:
            feats.append("BOS")
        if position == len(texts) - 1:
            feats.append("EOS")
    return feats


def segment_features(segment: Segment | Sequence[str], templates: Sequence[str] = DEFAULT_TEMPLATES) -> list[list[str]]:
    texts = segment.texts if isinstance(segment, Segment) else list(segment)
    return [extract_features(texts, i, templates) for i in range(len(texts))]

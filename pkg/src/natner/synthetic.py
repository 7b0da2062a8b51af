"""Templated German training-regulation sentences for desk-scale experiments."""

from __future__ import annotations

import re
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .corpus import ENTITY_TYPES, Corpus, Document, Segment

TEMPLATES = (
    "Der Ausbildungsberuf {JOB_TITLE} gehört zu den {JOB_TITLE_GROUP} .",
    "Vom {JOB_TITLE} werden {SKILL} und {SKILL} erwartet .",
    "Im Fach {SUBJECT} lernen die Lehrlinge , {ACTIVITY} .",
    "Zu den Aufgaben gehört es , {ACTIVITY} und {ACTIVITY} .",
    "Der Lehrplan umfasst {SUBJECT} , {SUBJECT} und {SUBJECT} .",
    "Voraussetzung für den Beruf {JOB_TITLE} ist {SKILL} .",
    "Die Ausbildung zum {JOB_TITLE} dauert drei Jahre .",
    "{JOB_TITLE_GROUP} umfassen unter anderem den {JOB_TITLE} .",
    "Der {JOB_TITLE} muss {ACTIVITY} können .",
    "Stundentafel : {SUBJECT} 120 Stunden , {SUBJECT} 80 Stunden .",
    "Die Ausbildung erfolgt in Betrieben der {JOB_TITLE_GROUP} .",
    "Gefordert sind {SKILL} sowie {SKILL} .",
    "Diese Verordnung tritt am 1. August 1976 in Kraft .",
    "Die Prüfung wird vor dem Prüfungsausschuss abgelegt .",
    "Ausbildungsbetriebe haben die Lehrlinge planmäßig auszubilden .",
)

_SLOT = re.compile(r"^\{([A-Z_]+)\}$")


def load_bundled_gazetteers() -> dict[str, list[str]]:
    root = resources.files("natner.data").joinpath("gazetteers")
    out = {}
    for t in ENTITY_TYPES:
        lines = root.joinpath(f"{t}.txt").read_text(encoding="utf-8").splitlines()
        out[t] = [ln.strip() for ln in lines if ln.strip()]
    return out


def fill_template(template: str, phrases: Mapping[str, Sequence[str]], rng: np.random.Generator) -> Segment:
    texts, labels = [], []
    for piece in template.split():
        m = _SLOT.match(piece)
        if m is None:
            texts.append(piece)
            labels.append("O")
            continue
        etype = m.group(1)
        options = phrases[etype]
        words = options[int(rng.integers(len(options)))].split()
        texts += words
        labels += ["B-" + etype] + ["I-" + etype] * (len(words) - 1)
    return Segment.from_lists(texts, labels)


def generate_corpus(
    n_segments: int = 320,
    seed: int = 0,
    phrases: Mapping[str, Sequence[str]] | None = None,
    segments_per_document: int = 20,
    templates: Sequence[str] = TEMPLATES,
) -> Corpus:
    """Clean BIO corpus built by filling sentence templates with gazetteer phrases."""
    phrases = phrases if phrases is not None else load_bundled_gazetteers()
    rng = np.random.default_rng(seed)
    segs = [fill_template(templates[int(rng.integers(len(templates)))], phrases, rng) for _ in range(n_segments)]
    docs = []
    for k in range(0, n_segments, segments_per_document):
        docs.append(Document(f"page{k // segments_per_document + 1:03d}", tuple(segs[k : k + segments_per_document])))
    return Corpus(tuple(docs))

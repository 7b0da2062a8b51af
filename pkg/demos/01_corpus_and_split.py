"""
BIO corpora and the stratified split
====================================

Load the bundled synthetic corpus, look at one segment and its spans, then
split it 70:20:10 while keeping every entity type's share balanced.
"""

from importlib import resources

from natner.corpus import entity_counts, parse_conll, spans_from_bio, stratified_split

# the corpus ships as CoNLL text: token<TAB>label, blank line between segments
text = resources.files("natner.data").joinpath("synthetic_clean.conll").read_text(encoding="utf-8")
corpus = parse_conll(text)
print(f"{len(corpus.documents)} documents, {corpus.n_segments} segments, {corpus.n_tokens} tokens")

seg = next(s for s in corpus.segments() if spans_from_bio(s))
print(" ".join(seg.texts))
for span in spans_from_bio(seg):
    print(f"  {span.entity_type:<16} [{span.start}:{span.end}] {span.surface}")

# segment-level split; the greedy assigner fills per-type quotas
train, test, val = stratified_split(corpus, (0.7, 0.2, 0.1), seed=0)
totals = entity_counts(corpus)
print("part  segs" + "".join(f"{t:>17}" for t in totals))
for name, part in [("train", train), ("test", test), ("val", val)]:
    counts = entity_counts(part)
    shares = "".join(f"{counts[t] / totals[t]:>17.2f}" for t in totals)
    print(f"{name:<5} {part.n_segments:>4}{shares}")

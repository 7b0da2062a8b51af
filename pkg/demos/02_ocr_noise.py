"""
OCR-style noise: analysis and injection
=======================================

Inject one error per word using the bundled error table, then recover the
table from the parallel corpora by character alignment.
"""

import numpy as np

from natner.noise import align_chars, analyze_errors, default_error_table, inject_noise, perturb_word
from natner.synthetic import generate_corpus

table = default_error_table()
for e in table.sorted().entries:
    print(f"{e.edit_type.value:<13} {e.recognized!r:>5} <- {e.correct!r:<5} {e.frequency}")

# a single word: with probability 0.8 the edit comes from the table
rng = np.random.default_rng(1)
print([perturb_word("Metall,", table, rng) for _ in range(6)])

# alignment explains a misspelling as one substitution
print(align_chars("Damennaßschneider", "Damenmaßschneider"))

clean = generate_corpus(2000, seed=0)
noisy = inject_noise(clean, table, seed=1)
print(" ".join(next(clean.segments()).texts))
print(" ".join(next(noisy.segments()).texts))

# what comes back: table entries dominate, fallback edits form a long tail
recovered = analyze_errors(noisy, clean)
print(f"{len(recovered)} distinct edits, {recovered.total} in total; most frequent:")
for e in recovered.entries[:8]:
    print(f"  {e.edit_type.value:<13} {e.recognized!r:>5} <- {e.correct!r:<5} {e.frequency}")

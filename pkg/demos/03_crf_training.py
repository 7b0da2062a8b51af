"""
Training the CRF labeler
========================

Pretrain on gazetteer phrases (no O labels), then fine-tune on the clean
training split and tag a sentence.
"""

from importlib import resources

from natner.corpus import Segment, stratified_split
from natner.crf import viterbi
from natner.evaluation import entity_prf
from natner.pipeline import load_gazetteers, pretrain
from natner.synthetic import generate_corpus
from natner.training import TrainConfig, predict, train

gaz_dir = resources.files("natner.data").joinpath("gazetteers")
gazetteers = load_gazetteers({t: gaz_dir.joinpath(f"{t}.txt") for t in ("JOB_TITLE", "JOB_TITLE_GROUP", "SKILL")})
print(f"pretraining on {gazetteers.n_segments} phrases")
init, curve = pretrain(gazetteers, TrainConfig(seed=0))
print(f"  {len(curve)} epochs, best val F1 {max(r.val_f1 for r in curve):.3f}")

corpus = generate_corpus(320, seed=0)
train_part, test_part, val_part = stratified_split(corpus, seed=0)
model, curve = train(train_part, val_part, TrainConfig(seed=0), init=init)
for r in curve:
    print(f"  epoch {r.epoch:>2}  loss {r.train_loss:7.3f}  val F1 {r.val_f1:.3f}")

report = entity_prf(test_part, predict(model, test_part))
print(f"test P {report.precision:.3f} R {report.recall:.3f} F1 {report.f1:.3f}")
for t, c in report.per_entity.items():
    print(f"  {t:<16} F1 {c.f1:.3f}")

words = "Vom Tischler werden Sorgfalt und Geschicklichkeit erwartet .".split()
print(list(zip(words, viterbi(model, Segment.from_lists(words)))))

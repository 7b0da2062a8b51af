"""Multi-stage fine-tuning: gazetteer pretraining and the noisy/clean/artificial comparison."""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    ENTITY_TYPES,
    OUTSIDE,
    Corpus,
    Document,
    Segment,
    StructureMismatch,
    apply_assignment,
    entity_counts,
    is_entity_type,
    read_conll,
    split_assignment,
)
from .crf import CrfModel
from .evaluation import EvalReport, entity_prf, epoch_curve_csv
from .noise import DEFAULT_LAMBDA, ErrorTable, default_error_table, inject_noise, load_error_table, make_artificial
from .training import EpochRecord, TrainConfig, predict, train

log = logging.getLogger(__name__)

VARIANTS = ("noisy", "clean", "artificial")

# scores of the transformer-based original on the full annotated corpus
REFERENCE_SCORES = {"artificial_f1": 0.779, "artificial_JOB_TITLE_f1": 0.879}

PRETRAIN_VAL_TOKENS = 10_000


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class Gazetteer:
    entity_type: str
    phrases: tuple[str, ...]

    def __post_init__(self):
        if not is_entity_type(self.entity_type):
            raise ValueError(f"unknown entity type key {self.entity_type!r}")
        if not self.phrases:
            raise ValueError(f"gazetteer {self.entity_type} is empty")

    @classmethod
    def from_text(cls, entity_type: str, text: str) -> tuple["Gazetteer", int]:
        """Parse one phrase per line; returns the gazetteer and the number of blank lines skipped."""
        lines = text.splitlines()
        phrases = [ln.strip() for ln in lines if ln.strip()]
        return cls(entity_type, tuple(dict.fromkeys(phrases))), len(lines) - len(phrases)

    def segments(self) -> list[Segment]:
        out = []
        for phrase in self.phrases:
            words = phrase.split()
            out.append(Segment.from_lists(words, ["B-" + self.entity_type] + ["I-" + self.entity_type] * (len(words) - 1)))
        return out


def load_gazetteers(files: Mapping[str, str | Path]) -> Corpus:
    """One O-free segment per phrase, one document per entity type."""
    docs = []
    for etype, path in files.items():
        gaz, skipped = Gazetteer.from_text(etype, Path(path).read_text(encoding="utf-8"))
        if skipped:
            log.warning("%s: skipped %d empty line(s)", path, skipped)
        docs.append(Document(etype, tuple(gaz.segments()), {"source": str(path)}))
    return Corpus(tuple(docs))


def _holdout(corpus: Corpus, seed: int, max_tokens: int) -> tuple[Corpus, Corpus]:
    """Seeded validation holdout: about 10% of segments, capped at ``max_tokens`` tokens."""
    segs = [(d.id, s) for d in corpus.documents for s in d.segments]
    n = len(segs)
    if n < 2:
        raise ValueError("pretraining corpus needs at least two segments")
    order = np.random.default_rng(seed).permutation(n)
    want = max(1, n // 10)
    val_idx, used = set(), 0
    for i in order:
        size = len(segs[i][1])
        if len(val_idx) >= want or (val_idx and used + size > max_tokens):
            break
        val_idx.add(int(i))
        used += size
    return apply_assignment(corpus, [1 if i in val_idx else 0 for i in range(n)], 2)


def pretrain(
    gazetteer_corpus: Corpus, config: TrainConfig = TrainConfig(), val_tokens: int = PRETRAIN_VAL_TOKENS
) -> tuple[CrfModel, list[EpochRecord]]:
    """Train the intermediate model on O-free data, without oversampling or class weights."""
    if any(t.label == OUTSIDE for t in gazetteer_corpus.tokens()):
        raise ValueError("pretraining data must not contain O labels")
    train_part, val_part = _holdout(gazetteer_corpus, config.seed, val_tokens)
    cfg = config.with_(oversample=False, class_weighting=False)
    return train(train_part, val_part, cfg)


def finetune_variant(
    variant: str,
    clean_train: Corpus,
    noisy_train: Corpus,
    table: ErrorTable,
    val: Corpus,
    init: CrfModel | None,
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    table_bias: float = DEFAULT_LAMBDA,
) -> tuple[CrfModel, list[EpochRecord], Corpus]:
    """Fine-tune one variant; returns the model, its curve and the corpus it was trained on."""
    _check_parallel(clean_train, noisy_train)
    if variant == "noisy":
        data = noisy_train
    elif variant == "clean":
        data = clean_train
    elif variant == "artificial":
        data = make_artificial(clean_train, table, seed, table_bias)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    log.info("variant %s: %d segments, %d tokens", variant, data.n_segments, data.n_tokens)
    model, records = train(data, val, config, init=init)
    return model, records, data


def _check_parallel(a: Corpus, b: Corpus):
    sa = [len(s) for s in a.segments()]
    sb = [len(s) for s in b.segments()]
    if sa != sb:
        raise StructureMismatch("clean and noisy corpora are not token-parallel")
    if [s.labels for s in a.segments()] != [s.labels for s in b.segments()]:
        raise StructureMismatch("clean and noisy corpora carry different labels")


# -- configuration -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    clean_corpus: Path
    error_table: Path | None = None
    gazetteers: dict[str, Path] = field(default_factory=dict)
    noisy_corpus: Path | None = None
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0
    table_bias: float = DEFAULT_LAMBDA
    clean_validation: str = "clean"  # "clean" or "noisy": val set used by the clean variant
    pretrain_val_tokens: int = PRETRAIN_VAL_TOKENS
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_text(cls, text: str, base_dir: str | Path = ".", overrides: Mapping[str, str] | None = None):
        """Flat ``key = value`` file; ``#`` starts a comment; relative paths resolve against ``base_dir``."""
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        values.update(overrides or {})
        return cls.from_mapping(values, Path(base_dir))

    @classmethod
    def from_file(cls, path: str | Path, overrides: Mapping[str, str] | None = None):
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), path.parent, overrides)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base_dir: Path = Path(".")):
        def p(v: str) -> Path:
            q = Path(v)
            return q if q.is_absolute() else base_dir / q

        train_fields = {f.name for f in fields(TrainConfig)}
        kw: dict = {}
        tkw: dict = {}
        gaz: dict[str, Path] = {}
        for key, value in values.items():
            if key == "clean_corpus":
                kw["clean_corpus"] = p(value)
            elif key == "noisy_corpus":
                kw["noisy_corpus"] = p(value) if value else None
            elif key == "error_table":
                kw["error_table"] = p(value) if value else None
            elif key.startswith("gazetteer."):
                etype = key.split(".", 1)[1]
                if not is_entity_type(etype):
                    raise ValueError(f"unknown entity type key {etype!r}")
                gaz[etype] = p(value)
            elif key == "ratios":
                kw["ratios"] = tuple(float(x) for x in value.split(","))
            elif key == "seed":
                kw["seed"] = int(value)
            elif key == "lambda":
                kw["table_bias"] = float(value)
            elif key == "clean_validation":
                if value not in ("clean", "noisy"):
                    raise ValueError("clean_validation must be 'clean' or 'noisy'")
                kw["clean_validation"] = value
            elif key == "pretrain_val_tokens":
                kw["pretrain_val_tokens"] = int(value)
            elif key.startswith("train.") and key[6:] in train_fields:
                tkw[key[6:]] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        if "clean_corpus" not in kw:
            raise ValueError("config lacks clean_corpus")
        kw["gazetteers"] = gaz
        tkw.setdefault("seed", str(kw.get("seed", 0)))
        kw["train"] = train_config_from_mapping(tkw)
        return cls(**kw)


def train_config_from_mapping(values: Mapping[str, str], base: TrainConfig = TrainConfig()) -> TrainConfig:
    """TrainConfig with fields overridden from string values."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    changes = {}
    for key, value in values.items():
        if key not in types:
            raise ValueError(f"unknown training option {key!r}")
        changes[key] = _coerce(types[key], value)
    return base.with_(**changes)


def _coerce(type_name, value: str):
    t = str(type_name)
    if t == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if t == "int":
        return int(value)
    if t == "float":
        return float(value)
    return value


# -- experiment ---------------------------------------------------------------


@dataclass
class VariantResult:
    evaluation: EvalReport
    curve: list[EpochRecord]
    entities: int
    tokens: int


@dataclass
class ExperimentReport:
    variants: dict[str, VariantResult]
    seed: int
    test_segments: int
    test_tokens: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "test_set": {"segments": self.test_segments, "tokens": self.test_tokens, "noise": "injected"},
            "variants": {
                name: {
                    "evaluation": r.evaluation.to_dict(),
                    "training_data": {"entities": r.entities, "tokens": r.tokens},
                    "curve": [
                        {
                            "epoch": e.epoch,
                            "train_loss": e.train_loss,
                            "precision": e.val_precision,
                            "recall": e.val_recall,
                            "f1": e.val_f1,
                        }
                        for e in r.curve
                    ],
                }
                for name, r in self.variants.items()
            },
            "reference_scores": REFERENCE_SCORES,
        }

    def accuracy_csv(self) -> str:
        rows = ["model,precision,recall,f1"]
        for name, r in self.variants.items():
            e = r.evaluation
            rows.append(f"{name},{e.precision:.6f},{e.recall:.6f},{e.f1:.6f}")
        return "\n".join(rows) + "\n"

    def accuracy_entities_csv(self, variant: str = "artificial") -> str:
        per = self.variants[variant].evaluation.per_entity
        types = list(ENTITY_TYPES) + sorted(set(per) - set(ENTITY_TYPES))
        rows = ["entity,f1"] + [f"{t},{per[t].f1 if t in per else 0.0:.6f}" for t in types]
        return "\n".join(rows) + "\n"

    def confusion_csv(self, variant: str = "noisy") -> str:
        return self.variants[variant].evaluation.confusion.to_csv()

    def data_amount_csv(self) -> str:
        rows = ["model,entities,tokens"]
        rows += [f"{name},{r.entities},{r.tokens}" for name, r in self.variants.items()]
        return "\n".join(rows) + "\n"

    def files(self) -> dict[str, str]:
        return {
            "report.json": json.dumps(self.to_dict(), indent=2) + "\n",
            "accuracy.csv": self.accuracy_csv(),
            "accuracy_entities.csv": self.accuracy_entities_csv(),
            "confusion.csv": self.confusion_csv(),
            "data_amount.csv": self.data_amount_csv(),
        }

    def curve_csv(self, variant: str) -> str:
        return epoch_curve_csv(self.variants[variant].curve)


@contextmanager
def _stage(name: str):
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name attached
        raise ExperimentError(name, exc) from exc


@dataclass
class Splits:
    clean: tuple[Corpus, Corpus, Corpus]  # train, test, val
    noisy: tuple[Corpus, Corpus, Corpus]


def prepare_splits(
    clean: Corpus,
    table: ErrorTable,
    ratios: Sequence[float] = (0.7, 0.2, 0.1),
    seed: int = 0,
    table_bias: float = DEFAULT_LAMBDA,
    noisy: Corpus | None = None,
) -> Splits:
    """Segment-level split of the clean corpus plus its token-parallel noisy counterpart.

    Without a real noisy corpus the noisy parts are produced by injection with
    seeds ``seed + 1`` (train), ``seed + 2`` (val) and ``seed + 3`` (test).
    """
    assignment = split_assignment(clean, ratios, seed)
    c_train, c_test, c_val = apply_assignment(clean, assignment, 3)
    if noisy is not None:
        _check_parallel(clean, noisy)
        n_train, n_test, n_val = apply_assignment(noisy, assignment, 3)
    else:
        n_train = inject_noise(c_train, table, seed + 1, table_bias)
        n_val = inject_noise(c_val, table, seed + 2, table_bias)
        n_test = inject_noise(c_test, table, seed + 3, table_bias)
    return Splits((c_train, c_test, c_val), (n_train, n_test, n_val))


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    seed = config.seed
    with _stage("load"):
        clean = read_conll(config.clean_corpus)
        noisy = read_conll(config.noisy_corpus) if config.noisy_corpus else None
        if config.error_table is not None:
            table = load_error_table(Path(config.error_table).read_text(encoding="utf-8"))
        else:
            table = default_error_table()
    with _stage("split"):
        splits = prepare_splits(clean, table, config.ratios, seed, config.table_bias, noisy)
    c_train, _, c_val = splits.clean
    n_train, n_test, n_val = splits.noisy

    init = None
    if config.gazetteers:
        with _stage("pretrain"):
            init, _ = pretrain(load_gazetteers(config.gazetteers), config.train, config.pretrain_val_tokens)

    results = {}
    for variant in VARIANTS:
        with _stage(f"finetune:{variant}"):
            val = c_val if variant == "clean" and config.clean_validation == "clean" else n_val
            model, curve, data = finetune_variant(
                variant, c_train, n_train, table, val, init, config.train, seed + 4, config.table_bias
            )
        with _stage(f"evaluate:{variant}"):
            evaluation = entity_prf(n_test, predict(model, n_test))
        results[variant] = VariantResult(evaluation, curve, sum(entity_counts(data).values()), data.n_tokens)
    return ExperimentReport(results, seed, n_test.n_segments, n_test.n_tokens)

"""natner command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage or input error, 1 internal defect.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Mapping

from . import __version__
from .corpus import (
    BioError,
    CorpusFormatError,
    StructureMismatch,
    entity_counts,
    entity_counts_csv,
    read_conll,
    stratified_split,
    write_conll,
)
from .crf import ModelFormatError, load_model, model_to_bytes
from .evaluation import entity_prf, epoch_curve_csv
from .noise import (
    DEFAULT_LAMBDA,
    ErrorTableFormatError,
    analyze_errors,
    inject_noise,
    load_error_table,
    make_artificial,
    save_error_table,
)
from .pipeline import ExperimentConfig, ExperimentError, load_gazetteers, pretrain, run_experiment, train_config_from_mapping
from .training import TrainConfig, predict, train

log = logging.getLogger("natner")

INPUT_ERRORS = (
    OSError,
    CorpusFormatError,
    BioError,
    StructureMismatch,
    ErrorTableFormatError,
    ModelFormatError,
    ExperimentError,
    ValueError,
)

# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "lr": "target_lr",
    "warmup": "warmup_fraction",
    "epochs": "max_epochs",
    "patience": "patience",
    "l2": "l2",
    "batch_size": "batch_size",
    "clamp_min": "clamp_min",
    "clamp_max": "clamp_max",
    "oversample_factor": "oversample_factor",
}


class InputError(Exception):
    pass


def write_files_atomic(files: Mapping[Path, str | bytes]) -> None:
    """Write every file to a temp sibling first, then rename them all into place."""
    staged = []
    try:
        for path, data in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data.encode("utf-8") if isinstance(data, str) else data)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def _ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid ratios {text!r}") from None


def _add_train_flags(p: argparse.ArgumentParser):
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--config", type=Path, help="key = value file; train.* keys set training options")
    g.add_argument("--lr", type=float, help=f"target learning rate after warm-up (default: {d.target_lr})")
    g.add_argument("--warmup", type=float, help=f"warm-up fraction of all steps (default: {d.warmup_fraction:.2f})")
    g.add_argument("--epochs", type=int, help=f"maximum number of epochs (default: {d.max_epochs})")
    g.add_argument("--patience", type=int, help=f"early-stopping patience in epochs (default: {d.patience})")
    g.add_argument("--l2", type=float, help=f"L2 strength (default: {d.l2:g})")
    g.add_argument("--batch-size", type=int, help=f"mini-batch size in segments (default: {d.batch_size})")
    g.add_argument("--clamp-min", type=float, help=f"lower class-weight clamp (default: {d.clamp_min})")
    g.add_argument("--clamp-max", type=float, help=f"upper class-weight clamp (default: {d.clamp_max})")
    g.add_argument("--oversample-factor", type=int, help=f"copies of segments with entities (default: {d.oversample_factor})")
    g.add_argument("--seed", type=int, help="master seed (default: 0)")


def _train_config(args) -> TrainConfig:
    base = TrainConfig()
    if args.config is not None:
        cfg = _read_config_keys(args.config)
        values = {k[6:]: v for k, v in cfg.items() if k.startswith("train.")}
        if "seed" in cfg:
            values.setdefault("seed", cfg["seed"])
        base = train_config_from_mapping(values)
    changes = {field: getattr(args, flag) for flag, field in TRAIN_FLAGS.items() if getattr(args, flag) is not None}
    if args.seed is not None:
        changes["seed"] = args.seed
    return base.with_(**changes)


def _read_config_keys(path: Path) -> dict[str, str]:
    out = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line and "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


# -- subcommands -------------------------------------------------------------


def cmd_analyze_errors(args) -> int:
    noisy, clean = read_conll(args.noisy), read_conll(args.clean)
    table = analyze_errors(noisy, clean)
    write_files_atomic({args.out: save_error_table(table)})
    print(f"{len(table)} distinct errors, {table.total} occurrences -> {args.out}")
    return 0


def cmd_inject(args) -> int:
    clean = read_conll(args.clean)
    table = load_error_table(args.table.read_text(encoding="utf-8"))
    if args.double:
        out = make_artificial(clean, table, args.seed, args.table_bias)
    else:
        out = inject_noise(clean, table, args.seed, args.table_bias)
    write_files_atomic({args.out: write_conll(out)})
    print(f"{out.n_segments} segments, {out.n_tokens} tokens -> {args.out}")
    return 0


def cmd_split(args) -> int:
    if len(args.ratios) != 3:
        raise InputError("exactly three ratios (train, test, val) are required")
    corpus = read_conll(args.corpus)
    parts = stratified_split(corpus, args.ratios, args.seed)
    names = ("train", "test", "val")
    write_files_atomic({args.out / f"{n}.conll": write_conll(p) for n, p in zip(names, parts)})
    print("part\tsegments\t" + "\t".join(entity_counts(corpus)))
    for name, part in zip(names, parts):
        counts = entity_counts(part)
        total = sum(counts.values()) or 1
        shares = "\t".join(f"{100 * counts.get(t, 0) / total:.1f}%" for t in entity_counts(corpus))
        print(f"{name}\t{part.n_segments}\t{shares}")
    return 0


def cmd_counts(args) -> int:
    counts = entity_counts(read_conll(args.corpus))
    if args.out:
        write_files_atomic({args.out: entity_counts_csv(counts)})
    for t, n in counts.items():
        print(f"{t:<16} {n:>7}")
    print(f"{'TOTAL':<16} {sum(counts.values()):>7}")
    return 0


def _parse_gazetteer_args(items) -> dict[str, Path]:
    out = {}
    for item in items:
        if "=" not in item:
            raise InputError(f"--gazetteer expects TYPE=PATH, got {item!r}")
        t, p = item.split("=", 1)
        out[t] = Path(p)
    return out


def cmd_pretrain(args) -> int:
    cfg = _train_config(args)
    gaz = _parse_gazetteer_args(args.gazetteer)
    if not gaz:
        raise InputError("at least one --gazetteer TYPE=PATH is required")
    corpus = load_gazetteers(gaz)
    model, records = pretrain(corpus, cfg, args.val_tokens)
    files = {args.out: model_to_bytes(model)}
    if args.curve:
        files[args.curve] = epoch_curve_csv(records)
    write_files_atomic(files)
    print(f"pretrained on {corpus.n_tokens} tokens; best val F1 {max(r.val_f1 for r in records):.4f} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    data = read_conll(args.train)
    val = read_conll(args.val)
    if args.variant == "artificial":
        if args.table is None:
            raise InputError("--variant artificial requires --table")
        table = load_error_table(args.table.read_text(encoding="utf-8"))
        clean_size = data.n_segments
        data = make_artificial(data, table, cfg.seed, args.table_bias)
        log.info("artificial training set: %d segments (clean input: %d)", data.n_segments, clean_size)
    init = load_model(args.init) if args.init else None
    print(f"training set size: {data.n_segments} segments, {data.n_tokens} tokens")
    model, records = train(data, val, cfg, init=init)
    files = {args.out: model_to_bytes(model)}
    if args.curve:
        files[args.curve] = epoch_curve_csv(records)
    write_files_atomic(files)
    best = max(r.val_f1 for r in records)
    print(f"{args.variant}: {len(records)} epochs, best val F1 {best:.4f} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    gold = read_conll(args.gold)
    if args.model is not None:
        pred = predict(load_model(args.model), gold)
    elif args.pred is not None:
        pred = read_conll(args.pred)
    else:
        raise InputError("give a predictions file or --model")
    report = entity_prf(gold, pred)
    print(f"precision {report.precision:.4f}  recall {report.recall:.4f}  F1 {report.f1:.4f}")
    for t, c in report.per_entity.items():
        print(f"  {t:<16} tp {c.tp:>5} fp {c.fp:>5} fn {c.fn:>5}  F1 {c.f1:.4f}")
    if args.out_dir is not None:
        files = {
            args.out_dir / "report.json": json.dumps(report.to_dict(), indent=2) + "\n",
            args.out_dir / "confusion.csv": report.confusion.to_csv(),
        }
        if args.model is not None:
            files[args.out_dir / "predictions.conll"] = write_conll(pred)
        write_files_atomic(files)
    return 0


def cmd_experiment(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
        overrides["train.seed"] = str(args.seed)
    config = ExperimentConfig.from_file(args.config, overrides)
    report = run_experiment(config)
    write_files_atomic({args.out / name: text for name, text in report.files().items()})
    print("model\tprecision\trecall\tf1")
    for name, r in report.variants.items():
        e = r.evaluation
        print(f"{name}\t{e.precision:.4f}\t{e.recall:.4f}\t{e.f1:.4f}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="natner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log epoch lines to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-errors", help="build an OCR error table from parallel noisy/clean corpora")
    p.add_argument("noisy", type=Path)
    p.add_argument("clean", type=Path)
    p.add_argument("--out", type=Path, required=True, help="error table CSV")
    p.set_defaults(func=cmd_analyze_errors)

    p = sub.add_parser("inject", help="inject one OCR-like error into every word")
    p.add_argument("clean", type=Path)
    p.add_argument("table", type=Path)
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--lambda", dest="table_bias", type=float, default=DEFAULT_LAMBDA,
                   help=f"probability of drawing the edit from the table (default: {DEFAULT_LAMBDA})")
    p.add_argument("--double", action="store_true", help="emit clean data followed by its noised copy")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("split", help="stratified segment-level split into train/test/val")
    p.add_argument("corpus", type=Path)
    p.add_argument("--ratios", type=_ratios, default=(0.7, 0.2, 0.1), help="train,test,val (default: 0.7,0.2,0.1)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("counts", help="entity counts per type")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, help="also write the counts as CSV")
    p.set_defaults(func=cmd_counts)

    p = sub.add_parser("pretrain", help="train the intermediate model on O-free gazetteer data")
    p.add_argument("--gazetteer", action="append", default=[], metavar="TYPE=PATH",
                   help="one phrase per line; repeat per entity type")
    p.add_argument("--val-tokens", type=int, default=10_000, help="validation cap in tokens (default: 10000)")
    p.add_argument("--out", type=Path, required=True, help="model file")
    p.add_argument("--curve", type=Path, help="epoch curve CSV")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="fine-tune one variant")
    p.add_argument("train", type=Path)
    p.add_argument("val", type=Path)
    p.add_argument("--variant", choices=("noisy", "clean", "artificial"), required=True)
    p.add_argument("--table", type=Path, help="error table (artificial variant)")
    p.add_argument("--lambda", dest="table_bias", type=float, default=DEFAULT_LAMBDA,
                   help=f"table bias for the artificial variant (default: {DEFAULT_LAMBDA})")
    p.add_argument("--init", type=Path, help="warm-start model")
    p.add_argument("--out", type=Path, required=True, help="model file")
    p.add_argument("--curve", type=Path, help="epoch curve CSV")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="strict entity-level P/R/F1")
    p.add_argument("gold", type=Path)
    p.add_argument("pred", type=Path, nargs="?")
    p.add_argument("--model", type=Path, help="tag the gold tokens with this model instead of reading predictions")
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run pretraining plus all three variants and write the report bundle")
    p.add_argument("config", type=Path)
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"natner {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"natner {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

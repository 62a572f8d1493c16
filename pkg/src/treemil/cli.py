"""treemil command line: synth, train, eval, score.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import DataError, SynthSpec, read_dataset, segment, split, synthesize, write_dataset
from .evaluation import evaluate, format_report, score_map
from .model import TreeMIL
from .train import NumericError, Trainer

log = logging.getLogger("treemil")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def loss_log_path(out):
    return Path(out).with_suffix(".loss.csv")


def _windows(data_path, cfg: RunConfig):
    series = read_dataset(data_path)
    return series, segment(series, cfg.T)


def cmd_synth(args):
    if not args.config:
        raise UsageError("synth needs --config <spec file>")
    spec = SynthSpec.from_text(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec.seed = args.seed
    series = synthesize(spec)
    write_dataset(series, args.out)
    log.info("wrote %s: D=%d L=%d anomalous steps=%d", args.out, series.D, series.L, int(series.point_labels.sum()))


def cmd_train(args):
    if args.checkpoint:
        trainer = checkpoint.load(args.checkpoint)
        cfg = trainer.model.cfg
        if args.config:
            new = load_config(args.config, seed=args.seed)
            if new.replace(epochs=cfg.epochs) != cfg:
                raise UsageError("--config differs from the checkpoint's config in more than 'epochs'")
            cfg = new
        if args.epochs is not None:
            cfg = cfg.replace(epochs=args.epochs)
        trainer.model.cfg = cfg
    else:
        cfg = load_config(args.config, seed=args.seed, epochs=args.epochs) if args.config else RunConfig(
            **{k: v for k, v in (("seed", args.seed), ("epochs", args.epochs)) if v is not None}
        )
        trainer = None

    series, windows = _windows(args.data, cfg)
    train_set, _ = split(windows, cfg.train_fraction, cfg.seed)

    if trainer is None:
        trainer = Trainer(TreeMIL(series.D, cfg))
    elif trainer.model.D != series.D:
        raise DataError(f"checkpoint expects D={trainer.model.D}, dataset has D={series.D}")

    out = Path(args.out)
    log_path = Path(args.log) if args.log else loss_log_path(out)
    if trainer.epoch == 0:
        log_path.write_text("", encoding="utf-8")
    if cfg.epochs == 0 or trainer.epoch >= cfg.epochs:
        checkpoint.save(out, trainer)

    def on_epoch(tr, loss):
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(f"{tr.epoch},{loss!r}\n")
        checkpoint.save(out, tr)

    trainer.fit(train_set, on_epoch=on_epoch)


def _load_for_data(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    trainer = checkpoint.load(args.checkpoint)
    model = trainer.model
    series, windows = _windows(args.data, model.cfg)
    if series.D != model.D:
        raise DataError(f"dimension mismatch: checkpoint expects D={model.D}, dataset has D={series.D}")
    return model, windows


def select_split(windows, cfg, which):
    if which == "all":
        return windows
    train_set, test_set = split(windows, cfg.train_fraction, cfg.seed)
    return train_set if which == "train" else test_set


def cmd_eval(args):
    model, windows = _load_for_data(args)
    report = evaluate(model, select_split(windows, model.cfg, args.split))
    text = format_report(report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")


def cmd_score(args):
    model, windows = _load_for_data(args)
    if args.window is None or not 0 <= args.window < len(windows):
        raise UsageError(f"--window must be an index in 0..{len(windows) - 1}")
    window = windows[args.window]
    smap = score_map(model, window)
    points = model.point_scores(window.values)[0]
    labels = points >= model.cfg.threshold
    prefix = Path(args.out)
    smap.write(prefix.with_suffix(".scoremap.csv"))
    with open(prefix.with_suffix(".points.csv"), "w", encoding="utf-8") as fh:
        for score, lab in zip(points, labels):
            fh.write(f"{format(score, '.17g')},{int(lab)}\n")


def build_parser():
    parser = argparse.ArgumentParser(prog="treemil", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a key=value spec")
    p.add_argument("--config", help="synthetic spec file")
    p.add_argument("--out", required=True, help="dataset CSV to write")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on series-level labels")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="run config file (key=value)")
    p.add_argument("--out", required=True, help="checkpoint path, rewritten every epoch")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="total epochs (overrides config)")
    p.add_argument("--log", help="loss log path (default: <out>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="F1-W, F1-D and IoU without point adjustment")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="also write the report here")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="export the score map and point predictions of one window")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", type=int, required=True, help="0-based window index in the dataset")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError, checkpoint.CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

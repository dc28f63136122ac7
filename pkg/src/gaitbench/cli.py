"""``gaitbench`` command line: synth, dhs, train, eval, report, selftest.

Exit codes: 0 success, 1 bad arguments or configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("gaitbench")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def cmd_synth(args):
    from .config import load_config
    from .dataset import build_dataset

    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = args.out or cfg.paths.data
    if not out:
        raise UsageError("synth needs --out or paths.data in the config")
    manifest = build_dataset(cfg.dataset.to_spec(), out, seed, threads=args.threads)
    print(f"wrote {len(manifest.entries)} sequences to {out}")


def cmd_dhs(args):
    from .dataset import read_sequence
    from .dhs import DhsError, dhs_from_record, estimate_cycle, render_png, save_dhs

    rec = read_sequence(_existing(args.inp, "sequence directory"))
    dhs = dhs_from_record(rec, knee=args.knee, r=args.r)
    try:
        cycle = estimate_cycle(dhs, fps=rec.fps)
    except DhsError as exc:  # e.g. frontal views; the signature is still useful
        print(f"warning: cycle not estimated: {exc}", file=sys.stderr)
        cycle = None
    save_dhs(args.out, dhs, cycle)
    if args.png:
        render_png(dhs, args.png)
    print(f"signature {dhs.width}x{dhs.num_frames} view {dhs.view_deg} estimated cycle {cycle} frames "
          f"(ground truth {rec.cycle_frames})")


def _check_dims(manifest, cfg):
    d = cfg.dataset
    if (manifest.height, manifest.width) != (d.height, d.width):
        raise UsageError(f"data frames are {manifest.height}x{manifest.width} but the config says {d.height}x{d.width}")


def cmd_train(args):
    from .config import load_config
    from .dataset import DatasetManifest
    from .training import train

    cfg = load_config(args.config)
    data = args.data or cfg.paths.data
    out = args.out or cfg.paths.run
    if not data or not out:
        raise UsageError("train needs --data and --out (or paths.data / paths.run in the config)")
    manifest = DatasetManifest.load(_existing(Path(data) / "manifest.json", "manifest"))
    _check_dims(manifest, cfg)
    tc = cfg.train_config()
    if args.threads == 1:
        tc.prefetch = False
    _, rows = train(manifest, tc, cfg.arch(), out_dir=out)
    last = rows[-1][3] if rows else float("nan")
    print(f"trained {len(rows)} iterations, final loss {last:.4f}; wrote {Path(out) / 'model.ckpt'}")


def cmd_eval(args):
    from .dataset import DatasetManifest
    from .evaluation import evaluate, format_text
    from .training import SequenceStore, load_model

    params, _ = load_model(_existing(args.model, "model checkpoint"))
    manifest = DatasetManifest.load(_existing(Path(args.data) / "manifest.json", "manifest"))
    store = SequenceStore(manifest, knee=args.knee)
    kinds = args.kind or ["ensemble"]
    exclude = not args.include_identical_view
    tables = evaluate(manifest, params, store, kinds=kinds, exclude_identical_view=exclude, out_dir=args.out)
    for kind, table in tables.items():
        title = f"Rank-1 accuracy (%), {kind}, identical views {'excluded' if exclude else 'included'}"
        print(format_text(table, title))


def cmd_report(args):
    from .evaluation import format_text, read_table_csv

    src = _existing(args.results, "results")
    tables = sorted(src.glob("table_*.csv")) if src.is_dir() else [src]
    if not tables:
        raise UsageError(f"no table_*.csv files in {src}")
    chunks = []
    for path in tables:
        kind = path.stem.removeprefix("table_")
        chunks.append(format_text(read_table_csv(path), f"Rank-1 accuracy (%), {kind}"))
    text = "\n".join(chunks)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_selftest(args):
    from .selftest import run_selftest

    ok, _ = run_selftest(range(args.seeds))
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser():
    p = _Parser(prog="gaitbench", description="Synthetic dual-modal gait recognition benchmark.")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic walker dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("dhs", help="extract the knee-row signature of one sequence")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--knee", choices=["gt", "heuristic"], default="gt")
    s.add_argument("--r", type=float, default=0.75)
    s.add_argument("--png")
    s.set_defaults(func=cmd_dhs)

    s = sub.add_parser("train", help="train both branches with the triplet loss")
    s.add_argument("--config", required=True)
    s.add_argument("--data")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="Rank-1 tables on the test split")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--kind", action="append", choices=["gait", "rgb", "ensemble"])
    view = s.add_mutually_exclusive_group()
    view.add_argument("--exclude-identical-view", action="store_true", default=True)
    view.add_argument("--include-identical-view", action="store_true")
    s.add_argument("--knee", choices=["gt", "heuristic"], default="gt")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="render table_*.csv files as text")
    s.add_argument("--results", required=True, help="results directory or one table csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("selftest", help="gradient, invariance and oracle checks")
    s.add_argument("--seeds", type=int, default=20)
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv=None):
    from .config import ConfigError

    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        code = args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Reference synthetic benchmark: both branches plus a gait-only baseline.

The configuration below is frozen. ``python -m gaitbench.benchmark --out FILE``
reruns it and writes the per-condition means that the trend checks compare
against; the committed copy lives in ``benchmarks/reference.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from .backbones import ArchConfig
from .dataset import DatasetSpec, build_dataset
from .evaluation import evaluate, format_text
from .selftest import CheckResult
from .training import SequenceStore, TrainConfig, train

log = logging.getLogger(__name__)

SEED = 2026
ITERATIONS = 200
TIME_BUDGET_S = 30 * 60
SLACK = 2.0  # points the ensemble may trail a single branch by

DATASET = dict(train_subjects=24, test_subjects=8, num_frames=60, fps=25)
ARCH = dict(channels=[8, 16, 32], strips=8, dhs_window=32, dhs_stride=8)
TRAIN = dict(P=8, K=4)


def reference_setup(iterations=ITERATIONS, seed=SEED):
    spec = DatasetSpec(**DATASET)
    arch = ArchConfig(**ARCH)
    base_arch = ArchConfig(**ARCH, mode="outdoor")
    cfg = TrainConfig(iterations=iterations, seed=seed, **TRAIN)
    base_cfg = TrainConfig(iterations=iterations, seed=seed, branches=["silhouette"], **TRAIN)
    return spec, arch, cfg, base_arch, base_cfg


def run_reference(work_dir, iterations=ITERATIONS, seed=SEED):
    """Synthesise, train, evaluate. Returns ({name: AccuracyTable}, seconds)."""
    work_dir = Path(work_dir)
    spec, arch, cfg, base_arch, base_cfg = reference_setup(iterations, seed)
    t0 = time.time()
    manifest = build_dataset(spec, work_dir / "data", seed)
    log.info("synth done in %.0fs", time.time() - t0)
    params, _ = train(manifest, cfg, arch, work_dir / "run")
    store = SequenceStore(manifest)
    tables = evaluate(manifest, params, store, kinds=("ensemble", "rgb", "gait"), out_dir=work_dir / "results")
    base, _ = train(manifest, base_cfg, base_arch, work_dir / "baseline")
    tables["baseline"] = evaluate(manifest, base, store, kinds=("gait",))["gait"]
    return tables, time.time() - t0


def condition_means(tables):
    return {name: {c: round(t.row_mean(c), 1) for c in t.conditions} for name, t in tables.items()}


def trend_checks(means, seconds=None):
    """(a) ensemble keeps up with each branch, (b) GaitPattern vs gait-only on NM, (c) silhouettes beat rgb on CL."""
    ens, rgb, gait, base = means["ensemble"], means["rgb"], means["gait"], means["baseline"]
    worst = min(ens[c] - max(rgb[c], gait[c]) for c in ens)
    out = [
        CheckResult("ensemble_vs_single", worst >= -SLACK, f"worst ensemble - best single = {worst:+.1f}"),
        CheckResult("gaitpattern_vs_baseline_NM", gait["NM"] >= base["NM"], f"{gait['NM']:.1f} vs {base['NM']:.1f}"),
        CheckResult("silhouette_vs_rgb_CL", gait["CL"] > rgb["CL"], f"{gait['CL']:.1f} vs {rgb['CL']:.1f}"),
    ]
    if seconds is not None:
        out.append(CheckResult("time_budget", seconds <= TIME_BUDGET_S, f"{seconds:.0f}s"))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description="rerun the reference benchmark")
    ap.add_argument("--work", default="bench_work")
    ap.add_argument("--out", default="reference.json")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    tables, seconds = run_reference(args.work)
    for name, t in tables.items():
        print(format_text(t, f"Rank-1 accuracy (%), {name}"))
    means = condition_means(tables)
    ref = {"seed": SEED, "iterations": ITERATIONS, "dataset": DATASET, "architecture": ARCH, "training": TRAIN,
           "seconds": round(seconds), "means": means}
    Path(args.out).write_text(json.dumps(ref, indent=2) + "\n")
    for r in trend_checks(means, seconds):
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")


if __name__ == "__main__":
    main()

"""Acceptance criteria P1-P9. Each test prints one PASS/FAIL line."""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from gaitbench import benchmark
from gaitbench.backbones import ArchConfig, Embedding, ModelParams, ensemble, gait_features, rgb_features
from gaitbench.cli import run
from gaitbench.dhs import dhs_from_record, estimate_cycle
from gaitbench.evaluation import GalleryIndex, rank1
from gaitbench.selftest import (
    gradient_checks,
    random_retrieval,
    rank1_reference,
    span_invariance,
    triplet_reference,
)
from gaitbench.synth import random_walker, synthesize_sequence
from gaitbench.training import triplet_loss
from test_cli import tiny_config

REFERENCE = Path(__file__).resolve().parent.parent / "benchmarks" / "reference.json"


@pytest.fixture
def announce(capsys):
    def say(tag, ok, detail):
        with capsys.disabled():
            print(f"\n{tag} {'PASS' if ok else 'FAIL'}: {detail}")
    return say


def test_p1_gradient_oracle(announce):
    t0 = time.process_time()
    results = gradient_checks(range(20))
    cpu = time.process_time() - t0
    bad = [r for r in results if not r.passed]
    ok = not bad and cpu < 120
    announce("P1", ok, f"{len(results) - len(bad)}/{len(results)} ops and composites < 1e-4 over 20 seeds, "
             f"{cpu:.0f}s CPU" + (f"; failing: {[r.name for r in bad]}" if bad else ""))
    assert ok


def test_p2_span_invariance(announce):
    res = span_invariance(configs=10, seed=11)
    announce("P2", res.passed, res.detail)
    assert res.passed


def test_p3_temporal_pooling_permutation(announce):
    params = ModelParams.init(ArchConfig(), 3)
    rng = np.random.default_rng(3)
    mask = (rng.uniform(size=(10, 64, 44)) > 0.5).astype(np.float32)
    frames = rng.uniform(size=(10, 64, 44, 3)).astype(np.float32) * mask[..., None]
    x_g = gait_features(mask, params).values.tobytes()
    x_f = rgb_features(frames, mask, params).values.tobytes()
    same = 0
    for _ in range(50):
        p = rng.permutation(10)
        same += (gait_features(mask[p], params).values.tobytes() == x_g
                 and rgb_features(frames[p], mask[p], params).values.tobytes() == x_f)
    announce("P3", same == 50, f"{same}/50 permutations bit-identical for X_g and X_f")
    assert same == 50


def test_p4_ensemble_decomposition(announce):
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(1000):
        dim_f, dim_s = (int(d) for d in rng.integers(1, 129, size=2))
        a_f, b_f = rng.normal(size=(2, dim_f)).astype(np.float32)
        a_s, b_s = rng.normal(size=(2, dim_s)).astype(np.float32)
        a = ensemble(Embedding(a_f, "rgb", i), Embedding(a_s, "silhouette", i)).vector
        b = ensemble(Embedding(b_f, "rgb", i), Embedding(b_s, "silhouette", i)).vector
        d2 = np.sum((a - b) ** 2, dtype=np.float32)
        parts = np.sum((a_f - b_f) ** 2, dtype=np.float32) + np.sum((a_s - b_s) ** 2, dtype=np.float32)
        worst = max(worst, abs(float(d2) - float(parts)) / float(parts))

    # corollary: a zeroed branch leaves the other branch's table unchanged
    identical = True
    for _ in range(20):
        gallery, probes, views = random_retrieval(rng)
        for zero_first in (True, False):
            def ens(e):
                v = np.concatenate([np.zeros(5), e.vector] if zero_first else [e.vector, np.zeros(5)])
                return Embedding(v, "ensemble", *e.provenance())
            single = rank1(GalleryIndex.build(gallery), probes, True, views)
            both = rank1(GalleryIndex.build([ens(g) for g in gallery]), [ens(p) for p in probes], True, views)
            identical &= np.array_equal(single.cells, both.cells)
    ok = worst <= 1e-5 and identical
    announce("P4", ok, f"max relative error {worst:.1e} over 1000 pairs; zeroed-branch tables identical: {identical}")
    assert ok


def test_p5_rank1_oracle(announce):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(100):
        gallery, probes, views = random_retrieval(rng)
        table = rank1(GalleryIndex.build(gallery), probes, True, views)
        mismatches += sum(table.cell(c, v) != val for (c, v), val in rank1_reference(gallery, probes).items())
    announce("P5", mismatches == 0, f"{mismatches} mismatching cells over 100 instances")
    assert mismatches == 0


def test_p6_triplet_oracle(announce):
    rng = np.random.default_rng(6)
    worst = 0.0
    for n in list(range(3, 25)) * 5:
        labels = rng.integers(0, max(2, n // 3), size=n)
        labels[:3] = [0, 0, 1]
        emb = rng.normal(size=(n, int(rng.integers(2, 17))))
        got = float(triplet_loss(emb, labels, 0.2).data)
        worst = max(worst, abs(got - triplet_reference(emb, labels, 0.2)))
    announce("P6", worst <= 1e-6, f"max abs diff {worst:.1e} over 110 batches, n = 3..24")
    assert worst <= 1e-6


def test_p7_cycle_recovery(announce):
    rng = np.random.default_rng(7)
    views = list(range(18, 163, 18))
    hits = 0
    for i in range(50):
        walker = random_walker(i, rng)
        rec = synthesize_sequence(walker, int(rng.choice(views)), "NM", 270, fps=30, seed=i)
        hits += abs(estimate_cycle(dhs_from_record(rec), fps=30) - rec.cycle_frames) <= 1
    announce("P7", hits >= 48, f"{hits}/50 cycles within +-1 frame")
    assert hits >= 48


@pytest.mark.slow
def test_p8_trend_reproduction(announce, tmp_path):
    ref = json.loads(REFERENCE.read_text())
    assert ref["seed"] == benchmark.SEED and ref["iterations"] <= 2000
    tables, seconds = benchmark.run_reference(tmp_path)
    means = benchmark.condition_means(tables)
    checks = benchmark.trend_checks(means, seconds)
    drift = max(abs(means[k][c] - ref["means"][k][c]) for k in ref["means"] for c in ref["means"][k])
    ok = all(r.passed for r in checks)
    detail = "; ".join(f"{r.name} {'ok' if r.passed else 'FAILED'} ({r.detail})" for r in checks)
    announce("P8", ok, f"{detail}; max drift from committed reference {drift:.1f} points")
    assert ok
    assert drift <= 5.0


def test_p9_end_to_end_determinism(announce, tmp_path):
    digests = []
    for rep in ("a", "b"):
        root = tmp_path / rep
        root.mkdir()
        cfg = tiny_config(root, iterations=3, seed=21)
        assert run(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
        assert run(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
        assert run(["eval", "--model", str(root / "run" / "model.ckpt"), "--data", str(root / "data"),
                    "--out", str(root / "res")]) == 0
        digests.append((root / "res" / "table_ensemble.csv").read_bytes())
    ok = digests[0] == digests[1]
    announce("P9", ok, f"table_ensemble.csv byte-identical across two runs ({len(digests[0])} bytes)")
    assert ok

"""Built-in correctness checks: finite-difference gradients, span invariance of
the signature feature, and loss / Rank-1 against brute-force references."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import grad as G
from .backbones import (
    ArchConfig,
    Embedding,
    EmbeddingKind,
    ModelParams,
    dhs_branch,
    dhs_features,
    head,
    rgb_batch,
    silhouette_batch,
    temporal_features,
)
from .dhs import IntervalSpec
from .evaluation import GalleryIndex, rank1
from .grad.gradcheck import check_gradients
from .training import triplet_loss

GRAD_TOL = 1e-4
OP_EPS = 1e-3
COMPOSITE_EPS = 1e-6

TINY_ARCH = dict(channels=[2, 3, 2], strips=2, dhs_channels=[2, 2], dhs_dim=3, head_hidden=5,
                 embedding_dim=4, dhs_window=8, dhs_stride=4, height=16, width=8)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


# --------------------------------------------------------------------------
# gradient cases


def _spread(rng, shape, gap=0.05):
    """Distinct values at least ``gap`` apart, shuffled: no ties for max-style ops."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2) * gap + rng.uniform(0, gap / 4)
    return rng.permutation(vals).reshape(shape)


def _off_kink(rng, shape, lo=0.1, hi=1.0):
    """Values with |x| in [lo, hi] so a small step never crosses zero."""
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _dot(out, w):
    flat = G.reshape(out, (1, -1))
    return G.sum_all(G.affine(flat, G.Tensor(w.reshape(-1, 1))))


def op_cases(rng):
    """(name, fn, inputs) with inputs placed away from kinks and ties."""
    w = lambda shape: rng.normal(size=shape)
    cases = []
    a, b = w((3, 4)), w((3, 4))
    cases.append(("add", lambda x, y, c=w((3, 4)): _dot(G.add(x, y), c), [a, b]))
    cases.append(("sub", lambda x, y, c=w((3, 4)): _dot(G.sub(x, y), c), [a, b]))
    cases.append(("scale", lambda x, c=w((3, 4)): _dot(G.scale(x, -1.7), c), [a]))
    cases.append(("relu", lambda x, c=w((3, 4)): _dot(G.relu(x), c), [_off_kink(rng, (3, 4))]))
    cases.append(("hinge", lambda x, c=w((3, 4)): _dot(G.hinge(x, 0.2), c), [_off_kink(rng, (3, 4)) - 0.2]))
    cases.append(("sqrt", lambda x, c=w((3, 4)): _dot(G.sqrt(x), c), [rng.uniform(0.5, 2.0, (3, 4))]))
    cases.append(("reshape", lambda x, c=w((6, 2)): _dot(G.reshape(x, (6, 2)), c), [a]))
    cases.append(("sum_all", lambda x: G.scale(G.sum_all(x), 0.3), [a]))
    cases.append(("mean_all", lambda x: G.mean_all(x), [a]))
    idx = rng.integers(0, 12, size=7)
    cases.append(("take", lambda x, c=w(7): _dot(G.take(x, idx), c), [a]))
    cases.append(("concat", lambda x, y, c=w((3, 8)): _dot(G.concat([x, y], axis=1), c), [a, b]))
    cases.append(("stack", lambda x, y, c=w((2, 3, 4)): _dot(G.stack([x, y], axis=0), c), [a, b]))
    cases.append(("max_over_axis", lambda x, c=w((2, 4)): _dot(G.max_over_axis(x, axis=1), c),
                  [_spread(rng, (2, 5, 4))]))
    cases.append(("affine", lambda x, m, v, c=w((3, 5)): _dot(G.affine(x, m, v), c), [a, w((4, 5)), w(5)]))
    cases.append(("conv2d", lambda x, k, v, c=w((2, 5, 4, 3)): _dot(G.conv2d(x, k, pad=1, bias=v), c),
                  [w((2, 5, 4, 2)), w((3, 3, 2, 3)), w(3)]))
    cases.append(("conv2d_stride2", lambda x, k, c=w((1, 3, 3, 2)): _dot(G.conv2d(x, k, stride=2, pad=1), c),
                  [w((1, 6, 5, 2)), w((3, 3, 2, 2))]))
    cases.append(("maxpool2d", lambda x, c=w((2, 2, 3, 2)): _dot(G.maxpool2d(x, 2), c),
                  [_spread(rng, (2, 5, 6, 2))]))
    cases.append(("pairwise_sq_dist", lambda x, y, c=w((3, 5)): _dot(G.pairwise_sq_dist(x, y), c),
                  [w((3, 4)), w((5, 4))]))
    return cases


def composite_cases(rng):
    """Backbone composites, differentiated w.r.t. inputs and every parameter."""
    arch = ArchConfig(**TINY_ARCH)
    init = ModelParams.init(arch, int(rng.integers(1 << 31)))
    names = sorted(init.tensors)
    # non-zero biases so no pre-activation sits exactly on a ReLU kink
    base = [init.tensors[n].data.astype(np.float64) + (0.1 * rng.normal(size=init.tensors[n].shape)
            if n.endswith(".b") else 0.0) for n in names]
    sub = lambda prefix: [i for i, n in enumerate(names) if n.startswith(prefix)]
    clips_g = rng.normal(size=(2, 3, 16, 8, 1))
    clips_f = rng.normal(size=(2, 3, 16, 8, 3))
    patches = rng.normal(size=(2, 3, 8, 8, 3))
    labels = np.array([0, 0, 1, 1])
    c_emb = rng.normal(size=(2, 4))
    c_feat = rng.normal(size=(2, arch.gait_dim))
    c_dhs = rng.normal(size=(2, arch.dhs_dim))

    def case(name, prefixes, build, extra):
        idx = sorted({i for p in prefixes for i in sub(p)})
        sel = [names[i] for i in idx]

        def fn(*leaves):
            xs, ps = leaves[: len(extra)], leaves[len(extra):]
            full = {n: G.Tensor(base[i]) for i, n in enumerate(names)}
            full.update(dict(zip(sel, ps)))
            return build(ModelParams(arch, full), *xs)

        return name, fn, list(extra) + [base[i] for i in idx]

    return [
        case("gait_extractor", ["gait."], lambda p, x: _dot(temporal_features(x, p, "gait"), c_feat), [clips_g]),
        case("rgb_extractor", ["rgb."], lambda p, x: _dot(temporal_features(x, p, "rgb"), c_feat), [clips_f]),
        case("dhs_branch", ["dhs."], lambda p, x: _dot(dhs_branch(x, p), c_dhs), [patches]),
        case("head", ["head_f."], lambda p, x: _dot(head(x, p, "head_f"), c_emb),
             [rng.normal(size=(2, arch.gait_dim))]),
        case("rgb_embedding", ["rgb.", "head_f."], lambda p, x: _dot(rgb_batch(x, p), c_emb), [clips_f]),
        case("silhouette_embedding", ["gait.", "dhs.", "head_s."],
             lambda p, x, q: _dot(silhouette_batch(x, q, p), c_emb), [clips_g, patches]),
        case("triplet_loss", [], lambda p, e: triplet_loss(e, labels, 5.0), [rng.normal(size=(4, 3))]),
    ]


def gradient_checks(seeds=range(20), tol=GRAD_TOL, max_coords=4):
    """Worst relative error per op / composite across ``seeds``."""
    worst = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for name, fn, inputs in op_cases(rng):
            err = check_gradients(fn, inputs, eps=OP_EPS)
            worst[name] = max(worst.get(name, 0.0), err)
        for name, fn, inputs in composite_cases(rng):
            err = check_gradients(fn, inputs, eps=COMPOSITE_EPS, max_coords=max_coords, rng=rng)
            worst[name] = max(worst.get(name, 0.0), err)
    return [CheckResult(f"grad:{n}", e < tol, f"max rel err {e:.2e}") for n, e in worst.items()]


# --------------------------------------------------------------------------
# span invariance


def periodic_signature(rng, period, frames, width=8):
    """A signature whose columns repeat exactly every ``period`` frames."""
    cycle = rng.uniform(0, 1, size=(width, period, 3)).astype(np.float32)
    reps = -(-frames // period)
    return np.tile(cycle, (1, reps, 1))[:, :frames]


def span_invariance(configs=10, seed=0, tol=1e-6):
    """Signature features over C + w and 3C + w frames of a periodic signature agree."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(configs):
        c = int(rng.integers(4, 17))
        w = int(rng.integers(c + 1, c + 9))
        divisors = [d for d in range(1, c + 1) if c % d == 0]
        stride = int(rng.choice(divisors))
        arch = ArchConfig(**{**TINY_ARCH, "dhs_window": w, "dhs_stride": stride})
        params = ModelParams.init(arch, int(rng.integers(1 << 31)))
        spec = IntervalSpec(w, stride, c)
        sig = periodic_signature(rng, c, 3 * c + w, arch.width)
        short = dhs_features(sig[:, : c + w], spec, params).values
        long = dhs_features(sig, spec, params).values
        worst = max(worst, float(np.abs(short - long).max()))
    return CheckResult("span_invariance", worst <= tol, f"max abs diff {worst:.2e} over {configs} configs")


# --------------------------------------------------------------------------
# brute-force references


def triplet_reference(emb, labels, margin):
    emb = np.asarray(emb, dtype=np.float64)
    total, count = 0.0, 0
    n = len(labels)
    for a, p, q in itertools.product(range(n), repeat=3):
        if a != p and labels[a] == labels[p] and labels[a] != labels[q]:
            d_ap = np.sqrt(np.sum((emb[a] - emb[p]) ** 2))
            d_an = np.sqrt(np.sum((emb[a] - emb[q]) ** 2))
            total += max(0.0, d_ap - d_an + margin)
            count += 1
    return total / count


def rank1_reference(gallery, probes, exclude_identical_view=True):
    """{(condition, view): percent} by scanning the gallery per probe."""
    hits = {}
    for p in probes:
        best, best_d = None, np.inf
        for g in gallery:
            if exclude_identical_view and g.view_deg == p.view_deg:
                continue
            d = float(np.sum((np.asarray(p.vector, np.float64) - np.asarray(g.vector, np.float64)) ** 2))
            if d < best_d:
                best, best_d = g, d
        hits.setdefault((p.condition, p.view_deg), []).append(best.subject_id == p.subject_id)
    return {k: 100.0 * sum(v) / len(v) for k, v in hits.items()}


def random_retrieval(rng, subjects=None, views=None, dim=None, conditions=("NM", "BG", "CL")):
    """Random gallery (one entry per subject x view) and probes for every condition."""
    subjects = subjects or int(rng.integers(2, 11))
    nviews = views or int(rng.integers(2, 6))
    dim = dim or int(rng.integers(2, 9))
    view_list = sorted(rng.choice(np.arange(0, 181, 18), size=nviews, replace=False).tolist())
    gallery, probes = [], []
    for s in range(subjects):
        for v in view_list:
            gallery.append(Embedding(rng.normal(size=dim), EmbeddingKind.ensemble, s, v, "NM", f"g{s}-{v}"))
            for c in conditions:
                probes.append(Embedding(rng.normal(size=dim), EmbeddingKind.ensemble, s, v, c, f"p{s}-{v}-{c}"))
    return gallery, probes, view_list


def oracle_equivalence(instances=100, seed=0):
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        gallery, probes, views = random_retrieval(rng)
        table = rank1(GalleryIndex.build(gallery), probes, True, views)
        ref = rank1_reference(gallery, probes)
        for (c, v), val in ref.items():
            if table.cell(c, v) != val:
                mismatches += 1
    rank_res = CheckResult("rank1_oracle", mismatches == 0, f"{mismatches} mismatching cells over {instances} instances")
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(4, 25))
        labels = rng.integers(0, max(2, n // 3), size=n)
        labels[:2] = [0, 1]
        labels[2] = 0
        emb = rng.normal(size=(n, int(rng.integers(2, 9))))
        got = float(triplet_loss(emb, labels, 0.2).data)
        worst = max(worst, abs(got - triplet_reference(emb, labels, 0.2)))
    trip_res = CheckResult("triplet_oracle", bool(worst <= 1e-6), f"max abs diff {worst:.2e}")
    return [rank_res, trip_res]


def run_selftest(seeds=range(20), echo=print):
    t0 = time.time()
    results = gradient_checks(seeds) + [span_invariance()] + oracle_equivalence()
    for r in results:
        echo(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} {r.detail}")
    ok = all(r.passed for r in results)
    echo(f"{sum(r.passed for r in results)}/{len(results)} checks passed in {time.time() - t0:.1f}s")
    return ok, results

import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitbench import grad as G
from gaitbench.backbones import (
    ArchConfig,
    Embedding,
    EmbeddingKind,
    FeatureError,
    FeatureVector,
    ModelParams,
    dhs_features,
    embed,
    ensemble,
    gait_features,
    rgb_features,
    silhouette_feature,
)
from gaitbench.dhs import IntervalSpec
from gaitbench.grad.gradcheck import check_gradients

SMALL = ArchConfig(channels=[4, 4, 6], strips=4, dhs_channels=[3, 4], dhs_dim=5, head_hidden=8,
                   embedding_dim=6, dhs_window=12, dhs_stride=4)


@pytest.fixture(scope="module")
def small():
    return ModelParams.init(SMALL, 0)


def clip(seed, t=6):
    rng = np.random.default_rng(seed)
    mask = (rng.uniform(size=(t, 64, 44)) > 0.6).astype(np.float32)
    frames = rng.uniform(size=(t, 64, 44, 3)).astype(np.float32) * mask[..., None]
    return frames, mask


def test_default_sizes():
    arch = ArchConfig()
    params = ModelParams.init(arch, 0)
    assert arch.gait_dim == 256 and arch.silhouette_dim == 320
    frames, mask = clip(0, t=2)
    x_g = gait_features(mask, params)
    assert x_g.values.shape == (256,)
    sig = np.random.default_rng(1).uniform(size=(44, 40, 3)).astype(np.float32)
    x_d = dhs_features(sig, IntervalSpec(40), params)
    assert x_d.values.shape == (64,)
    x_s = silhouette_feature(x_g, x_d, "indoor")
    assert x_s.values.shape == (320,)
    l_s = embed(x_s, params, "head_s", subject_id=1, view_deg=0, condition="NM", sequence="s")
    l_f = embed(rgb_features(frames, mask, params), params, "head_f", subject_id=1, view_deg=0,
                condition="NM", sequence="s")
    assert l_s.vector.shape == (128,) and ensemble(l_f, l_s).vector.shape == (256,)


def test_single_frame_and_duplicates(small):
    _, mask = clip(2, t=1)
    one = gait_features(mask, small).values
    assert np.array_equal(one, gait_features(np.repeat(mask, 3, axis=0), small).values)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_temporal_pooling_is_permutation_invariant(seed):
    params = ModelParams.init(SMALL, 1)
    frames, mask = clip(seed, t=8)
    perm = np.random.default_rng(seed).permutation(8)
    assert gait_features(mask, params).values.tobytes() == gait_features(mask[perm], params).values.tobytes()
    a = rgb_features(frames, mask, params).values
    b = rgb_features(frames[perm], mask[perm], params).values
    assert a.tobytes() == b.tobytes()


def test_black_video_response_is_shared(small):
    zeros = np.zeros((4, 64, 44, 3), np.float32)
    a = rgb_features(zeros, np.zeros((4, 64, 44)), small).values
    b = rgb_features(zeros[:2], np.zeros((2, 64, 44)), small).values
    assert np.array_equal(a, b)


def test_texture_changes_rgb_feature(small):
    from gaitbench.synth import WalkerParams, random_walker, synthesize_sequence

    p = random_walker(1, np.random.default_rng(0))
    q = WalkerParams(**{**p.__dict__, "texture_seed": p.texture_seed + 1})
    ra = synthesize_sequence(p, 90, "NM", 72, seed=0, noise=0)
    rb = synthesize_sequence(q, 90, "NM", 72, seed=0, noise=0)
    assert np.array_equal(ra.mask, rb.mask)
    fa = rgb_features(ra.clip_frames()[:4], ra.clip_mask()[:4], small).values
    fb = rgb_features(rb.clip_frames()[:4], rb.clip_mask()[:4], small).values
    assert np.any(fa != fb)


def test_unmasked_frames_warn(small, caplog):
    frames, mask = clip(3, t=2)
    frames = frames + 0.1
    with caplog.at_level(logging.WARNING):
        rgb_features(frames, mask, small)
    assert "background" in caplog.text


def test_dhs_single_interval_and_absorption(small):
    rng = np.random.default_rng(4)
    spec = IntervalSpec(12, 4)
    sig = rng.uniform(size=(44, 12, 3)).astype(np.float32)
    whole = dhs_features(sig, spec, small, project=False).values
    from gaitbench.backbones import interval_extractor

    direct = interval_extractor(G.Tensor(sig[None]), small).data[0]
    assert np.array_equal(whole, direct)
    # with period 4 the next interval repeats the first, so its feature is dominated
    tiled = np.tile(sig[:, :4], (1, 4, 1))
    base = dhs_features(tiled[:, :12], spec, small, project=False).values
    # batch size changes the float32 accumulation order, hence a tolerance rather than bit equality
    assert np.allclose(dhs_features(tiled, spec, small, project=False).values, base, rtol=0, atol=1e-6)


def test_dhs_window_mismatch(small):
    with pytest.raises(FeatureError):
        dhs_features(np.zeros((44, 20, 3)), IntervalSpec(10), small)


def test_silhouette_feature_modes():
    x_g = FeatureVector(np.arange(256, dtype=np.float32), "X_g")
    x_d = FeatureVector(np.zeros(64, np.float32), "X_DHS")
    out = silhouette_feature(x_g, None, "outdoor")
    assert out.values.tobytes() == x_g.values.tobytes()
    padded = silhouette_feature(x_g, x_d, "indoor").values
    assert np.array_equal(padded, np.concatenate([x_g.values, np.zeros(64)]))
    with pytest.raises(FeatureError):
        silhouette_feature(x_g, None, "indoor")


def test_identity_head_and_zero_input():
    arch = ArchConfig(channels=[4, 4, 2], strips=2, head_hidden=4, embedding_dim=4, mode="outdoor")
    params = ModelParams.init(arch, 0)
    for n in ("fc1", "fc2"):
        params.tensors[f"head_s.{n}.w"].data = np.eye(4, dtype=np.float32)
        params.tensors[f"head_s.{n}.b"].data = np.zeros(4, np.float32)
    x = FeatureVector(np.array([1.0, -2.0, 3.0, -0.5], np.float32), "X_s")
    assert embed(x, params, "head_s").vector.tolist() == [1.0, 0.0, 3.0, 0.0]
    params.tensors["head_s.fc2.b"].data = np.array([0.1, 0.2, 0.3, 0.4], np.float32)
    zero = FeatureVector(np.zeros(4, np.float32), "X_s")
    assert np.allclose(embed(zero, params, "head_s").vector, [0.1, 0.2, 0.3, 0.4])


def test_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    arch = ArchConfig(channels=[4, 4, 2], strips=2, head_hidden=5, embedding_dim=3)
    from gaitbench.backbones import head

    x = rng.normal(size=(2, 4))
    c = rng.normal(size=(6, 1))

    def fn(w1, b1, w2, b2):
        p = ModelParams(arch, {"head_f.fc1.w": w1, "head_f.fc1.b": b1, "head_f.fc2.w": w2, "head_f.fc2.b": b2})
        out = head(G.Tensor(x), p, "head_f")
        return G.sum_all(G.affine(G.reshape(out, (1, -1)), G.Tensor(c)))

    args = [rng.normal(size=(4, 5)), rng.normal(size=5) + 0.5, rng.normal(size=(5, 3)), rng.normal(size=3)]
    assert check_gradients(fn, args, eps=1e-6) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_ensemble_distance_decomposes(seed):
    rng = np.random.default_rng(seed)
    f1, f2, s1, s2 = (rng.normal(size=128).astype(np.float32) for _ in range(4))
    mk = lambda v, k, seq: Embedding(v, k, 1, 0, "NM", seq)
    a = ensemble(mk(f1, "rgb", "a"), mk(s1, "silhouette", "a")).vector.astype(np.float64)
    b = ensemble(mk(f2, "rgb", "b"), mk(s2, "silhouette", "b")).vector.astype(np.float64)
    lhs = np.sum((a - b) ** 2)
    rhs = np.sum((f1 - f2).astype(np.float64) ** 2) + np.sum((s1 - s2).astype(np.float64) ** 2)
    assert abs(lhs - rhs) <= 1e-5 * rhs


def test_ensemble_with_zero_rgb_reduces_to_silhouette():
    rng = np.random.default_rng(0)
    s1, s2 = rng.normal(size=8), rng.normal(size=8)
    z = np.zeros(8)
    a = ensemble(Embedding(z, "rgb", 1, 0, "NM", "a"), Embedding(s1, "silhouette", 1, 0, "NM", "a")).vector
    b = ensemble(Embedding(z, "rgb", 2, 0, "NM", "b"), Embedding(s2, "silhouette", 2, 0, "NM", "b")).vector
    assert np.sum((a - b) ** 2) == pytest.approx(np.sum((s1 - s2) ** 2), rel=1e-6)


def test_ensemble_rejects_mismatched_provenance():
    with pytest.raises(FeatureError):
        ensemble(Embedding(np.zeros(2), "rgb", 1, 0, "NM", "a"), Embedding(np.zeros(2), "silhouette", 2, 0, "NM", "b"))


def test_arch_validation_and_checkpoint_shapes():
    with pytest.raises(FeatureError):
        ArchConfig(strips=5)
    with pytest.raises(FeatureError):
        ArchConfig(channels=[4, 4])
    p = ModelParams.init(SMALL, 0)
    bad = {k: v.data for k, v in p.tensors.items()}
    bad["head_f.fc1.w"] = np.zeros((1, 1), np.float32)
    with pytest.raises(FeatureError):
        ModelParams.from_arrays(SMALL, bad)


def test_empty_sequence_rejected(small):
    with pytest.raises(FeatureError):
        gait_features(np.zeros((0, 64, 44)), small)

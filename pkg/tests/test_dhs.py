import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitbench.dhs import (
    DhsError,
    DhsImage,
    IntervalSpec,
    KneeSource,
    KneeTrack,
    dhs_from_record,
    estimate_cycle,
    estimate_knee_track,
    extract_dhs,
    interval_offsets,
    load_dhs_signature,
    render_png,
    save_dhs,
    split_intervals,
)
from gaitbench.synth import WalkerParams, random_walker, synthesize_sequence


def box_mask(top, bottom, h=64, w=44, t=1):
    m = np.zeros((t, h, w), np.uint8)
    m[:, top : bottom + 1, 10:30] = 1
    return m


def walker(seed, **kw):
    p = random_walker(seed, np.random.default_rng(seed))
    return WalkerParams(**{**p.__dict__, **kw}).validate() if kw else p


# knee heuristic


def test_knee_full_height():
    assert estimate_knee_track(box_mask(0, 63)).rows.tolist() == [48]


def test_knee_partial_box():
    track = estimate_knee_track(box_mask(16, 47))
    assert track.rows.tolist() == [40] and track.source is KneeSource.heuristic


def test_knee_empty_frame_raises():
    m = box_mask(0, 63, t=3)
    m[1] = 0
    with pytest.raises(DhsError, match="frame 1"):
        estimate_knee_track(m)


def test_knee_heuristic_tracks_ground_truth():
    within = total = 0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        p = random_walker(i, rng)
        view = int(rng.choice(np.arange(0, 181, 18)))
        rec = synthesize_sequence(p, view, "NM", 2 * p.cycle_frames(15), fps=15, seed=i)
        est = estimate_knee_track(rec.clip_mask()).rows
        within += int(np.sum(np.abs(est - rec.knee_track_gt) <= 3))
        total += est.size
    assert within / total >= 0.9


# signature


def test_toy_frame_signature():
    frames = np.zeros((1, 4, 4, 3), np.float32)
    frames[0, 2] = 0.5
    mask = np.zeros((1, 4, 4), np.uint8)
    mask[0, 2] = [0, 1, 1, 0]
    d = extract_dhs(frames, mask, KneeTrack([2], KneeSource.ground_truth))
    assert d.signature.shape == (4, 1, 3)
    expected = np.array([[0, 0, 0], [0.5] * 3, [0.5] * 3, [0, 0, 0]], np.float32)
    assert np.array_equal(d.signature[:, 0], expected)


def test_zero_mask_row_gives_zero_column():
    rng = np.random.default_rng(0)
    frames = rng.uniform(size=(3, 8, 6, 3))
    mask = np.ones((3, 8, 6), np.uint8)
    mask[1, 4] = 0
    d = extract_dhs(frames, mask, KneeTrack([4, 4, 4], KneeSource.ground_truth))
    assert not d.signature[:, 1].any() and d.signature[:, 0].any()


def test_mask_slice_is_idempotent():
    rng = np.random.default_rng(1)
    mask = (rng.uniform(size=(5, 8, 6)) > 0.5).astype(np.uint8)
    knee = KneeTrack(rng.integers(0, 8, 5), KneeSource.ground_truth)
    first = extract_dhs(np.repeat(mask[..., None], 3, -1), mask, knee)
    again = extract_dhs(np.repeat(mask[..., None], 3, -1), mask, knee)
    assert np.array_equal(first.signature[..., 0], first.mask_slice)
    assert np.array_equal(again.mask_slice, first.mask_slice)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 9), st.integers(0, 10_000))
def test_locality(t, seed):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(size=(10, 8, 6, 3))
    mask = np.ones((10, 8, 6), np.uint8)
    knee = KneeTrack(rng.integers(0, 8, 10), KneeSource.ground_truth)
    base = extract_dhs(frames, mask, knee).signature
    frames[t] += rng.uniform(0.1, 1, size=frames[t].shape)
    moved = extract_dhs(frames, mask, knee).signature
    changed = np.flatnonzero(np.any(moved != base, axis=(0, 2)))
    assert changed.tolist() == [t]


def test_nm_signature_is_periodic():
    p = walker(3)
    c = p.cycle_frames(30)
    rec = synthesize_sequence(p, 90, "NM", 2 * c + 4, seed=0)
    sig = dhs_from_record(rec).signature
    diffs = [np.abs(sig[:, t] - sig[:, t + c]).mean() for t in range(c)]
    assert max(diffs) < 0.05


def test_length_mismatch_raises():
    with pytest.raises(DhsError):
        extract_dhs(np.zeros((3, 4, 4, 3)), np.zeros((2, 4, 4)), KneeTrack([0, 0, 0], KneeSource.heuristic))
    with pytest.raises(DhsError):
        extract_dhs(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 4)), KneeTrack([4], KneeSource.heuristic))


# cycle


def periodic_dhs(period, frames, width=20, seed=0):
    rng = np.random.default_rng(seed)
    cols = (rng.uniform(size=(width, period)) > 0.5).astype(np.float32)
    m = np.tile(cols, (1, -(-frames // period)))[:, :frames]
    return DhsImage(np.repeat(m[..., None], 3, -1), m, np.repeat(m[..., None], 3, -1))


@pytest.mark.parametrize("period", [9, 14, 23, 30, 41])
def test_strictly_periodic_signature(period):
    assert estimate_cycle(periodic_dhs(period, 4 * period, seed=period), fps=30) == period


def test_walker_cadence_two():
    rec = synthesize_sequence(walker(5, cadence=2.0), 90, "NM", 120, seed=2)
    assert abs(estimate_cycle(dhs_from_record(rec), fps=30) - 30) <= 1


def test_constant_width_has_no_gait():
    m = np.ones((10, 40), np.float32)
    d = DhsImage(np.repeat(m[..., None], 3, -1), m, np.repeat(m[..., None], 3, -1))
    with pytest.raises(DhsError, match="no gait"):
        estimate_cycle(d)


def test_too_short_for_lag_range():
    with pytest.raises(DhsError):
        estimate_cycle(periodic_dhs(5, 10), fps=30)


def test_side_views_widen_the_signature():
    """Mean knee-row extent rises from frontal to side view, averaged over walkers."""
    views = [0, 18, 36, 54, 72, 90]
    widths = np.zeros(len(views))
    for s in range(12):
        p = walker(100 + s)
        for j, v in enumerate(views):
            rec = synthesize_sequence(p, v, "NM", 2 * p.cycle_frames(30), seed=s)
            widths[j] += dhs_from_record(rec).mask_slice.sum(axis=0).mean()
    assert np.all(np.diff(widths) >= 0)


# intervals


def test_interval_counts():
    spec = IntervalSpec(40, 10)
    assert len(split_intervals(np.zeros((4, 90, 3)), spec)) == 6
    sig = np.random.default_rng(0).uniform(size=(4, 40, 3))
    (only,) = split_intervals(sig, spec)
    assert np.array_equal(only, sig)
    assert interval_offsets(64, IntervalSpec(40, 8)) == [0, 8, 16, 24]


def test_default_stride_is_half_window():
    assert IntervalSpec(40).stride == 20
    with pytest.raises(DhsError):
        IntervalSpec(1)
    with pytest.raises(DhsError):
        split_intervals(np.zeros((4, 10, 3)), IntervalSpec(20))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.integers(1, 30), st.integers(0, 100))
def test_interval_count_formula(w, stride, extra):
    t = w + extra
    offs = interval_offsets(t, IntervalSpec(w, stride))
    assert len(offs) == (t - w) // stride + 1
    assert offs[-1] + w <= t


# files


def test_save_load_round_trip(tmp_path):
    d = periodic_dhs(7, 30)
    path = tmp_path / "dhs.bin"
    save_dhs(path, d, cycle=7)
    sig, meta = load_dhs_signature(path)
    assert np.array_equal(sig, d.signature)
    assert meta["estimated_cycle"] == 7 and meta["W"] == 20 and meta["T"] == 30
    assert path.stat().st_size == 20 * 30 * 3 * 4
    assert json.loads((tmp_path / "dhs.bin.json").read_text())["T"] == 30


def test_png_render(tmp_path):
    from PIL import Image

    render_png(periodic_dhs(7, 30), tmp_path / "d.png", upscale=2)
    assert Image.open(tmp_path / "d.png").size == (60, 40)

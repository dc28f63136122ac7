"""Double helical signature: knee-row slices stacked over time.

Arrays here are time-first: silhouettes (T, H, W), frames (T, H, W, 3).
A signature is stored width-by-time, (W, T, 3).
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DhsError(ValueError):
    pass


class KneeSource(str, enum.Enum):
    ground_truth = "ground_truth"
    heuristic = "heuristic"


@dataclass(frozen=True)
class KneeTrack:
    rows: np.ndarray
    source: KneeSource

    def __post_init__(self):
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=np.int64))


@dataclass(frozen=True)
class DhsImage:
    rgb_slice: np.ndarray  # I_knee, (W, T, 3)
    mask_slice: np.ndarray  # s_knee, (W, T)
    signature: np.ndarray  # I_knee * s_knee, (W, T, 3)
    view_deg: int | None = None

    @property
    def width(self):
        return self.signature.shape[0]

    @property
    def num_frames(self):
        return self.signature.shape[1]


@dataclass(frozen=True)
class IntervalSpec:
    window_w: int
    stride: int | None = None  # defaults to half the window
    cycle_frames: int | None = None

    def __post_init__(self):
        if self.window_w < 2:
            raise DhsError(f"window_w must be >= 2, got {self.window_w}")
        if self.stride is None:
            object.__setattr__(self, "stride", max(1, self.window_w // 2))
        if self.stride < 1:
            raise DhsError(f"stride must be >= 1, got {self.stride}")

    def covers_cycle(self):
        return self.cycle_frames is not None and self.window_w > self.cycle_frames


def estimate_knee_track(mask, r=0.75):
    """Knee row per frame as a fixed fraction ``r`` down the silhouette's bounding box."""
    mask = np.asarray(mask)
    if mask.ndim != 3:
        raise DhsError(f"expected silhouettes shaped (T, H, W), got {mask.shape}")
    rows_any = mask.any(axis=2)  # (T, H)
    rows = np.empty(mask.shape[0], dtype=np.int64)
    for t, occupied in enumerate(rows_any):
        hits = np.flatnonzero(occupied)
        if hits.size == 0:
            raise DhsError(f"frame {t} has no foreground pixels")
        top, bottom = hits[0], hits[-1]
        rows[t] = min(mask.shape[1] - 1, top + int(math.floor(r * (bottom - top + 1))))
    return KneeTrack(rows, KneeSource.heuristic)


def extract_dhs(frames, mask, knee: KneeTrack, view_deg=None):
    frames = np.asarray(frames)
    mask = np.asarray(mask)
    rows = knee.rows
    t = frames.shape[0]
    if mask.shape[0] != t or rows.shape[0] != t:
        raise DhsError(f"length mismatch: frames {t}, mask {mask.shape[0]}, knee track {rows.shape[0]}")
    if frames.shape[1:3] != mask.shape[1:3]:
        raise DhsError(f"frame size {frames.shape[1:3]} differs from mask size {mask.shape[1:3]}")
    if rows.min(initial=0) < 0 or rows.max(initial=0) >= frames.shape[1]:
        raise DhsError("knee rows out of frame")
    idx = np.arange(t)
    i_knee = np.swapaxes(frames[idx, rows], 0, 1).astype(np.float32)  # (W, T, 3)
    s_knee = np.swapaxes(mask[idx, rows], 0, 1).astype(np.float32)  # (W, T)
    return DhsImage(i_knee, s_knee, i_knee * s_knee[..., None], view_deg)


def autocorrelation(signal, lags):
    """Normalised autocorrelation: mean lagged product of the centred signal over its variance."""
    w = np.asarray(signal, dtype=np.float64)
    w = w - w.mean()
    var = np.mean(w * w)
    if var <= 1e-12:
        raise DhsError("no gait detected: knee-row width does not vary")
    n = w.size
    return np.array([np.mean(w[: n - lag] * w[lag:]) / var for lag in lags])


def estimate_cycle(dhs: DhsImage, fps=30.0, min_lag=None, max_lag=None, tolerance=0.1):
    """Gait cycle length in frames from the foreground-width signal of the signature.

    Lags span [fps/4, 3*fps] (clipped to T/2). Full-cycle multiples score as
    high as the cycle itself, so the shortest local peak within ``tolerance``
    of the best score wins.
    """
    width = dhs.mask_slice.sum(axis=0)
    n = width.size
    lo = max(1, int(math.ceil(fps / 4))) if min_lag is None else int(min_lag)
    hi = int(3 * fps) if max_lag is None else int(max_lag)
    hi = min(hi, n // 2)
    if hi < lo:
        raise DhsError(f"sequence of {n} frames too short for lags >= {lo}")
    lags = np.arange(lo, hi + 1)
    r = autocorrelation(width, lags)
    best = r.max()
    for i, lag in enumerate(lags):
        left = r[i - 1] if i > 0 else -np.inf
        right = r[i + 1] if i + 1 < len(r) else -np.inf
        if r[i] >= best - tolerance and r[i] >= left and r[i] >= right:
            return int(lag)
    return int(lags[int(np.argmax(r))])


def split_intervals(dhs: DhsImage, spec: IntervalSpec):
    """Contiguous (W, window_w, 3) patches at offsets 0, stride, 2*stride, ..."""
    sig = dhs.signature if isinstance(dhs, DhsImage) else np.asarray(dhs)
    t = sig.shape[1]
    if t < spec.window_w:
        raise DhsError(f"signature has {t} frames, fewer than window_w={spec.window_w}")
    offsets = interval_offsets(t, spec)
    return [sig[:, s : s + spec.window_w] for s in offsets]


def interval_offsets(t, spec: IntervalSpec):
    if t < spec.window_w:
        raise DhsError(f"signature has {t} frames, fewer than window_w={spec.window_w}")
    return list(range(0, t - spec.window_w + 1, spec.stride))


def dhs_from_record(record, knee="gt", r=0.75):
    """Signature of a SequenceRecord using ground-truth or heuristic knee rows."""
    mask = record.clip_mask()
    if knee in ("gt", KneeSource.ground_truth):
        track = KneeTrack(record.knee_track_gt, KneeSource.ground_truth)
    else:
        track = estimate_knee_track(mask, r)
    return extract_dhs(record.clip_frames(), mask, track, record.view_deg)


def save_dhs(path, dhs: DhsImage, cycle=None):
    """Raw little-endian f32 (W, T, 3) plus a ``<path>.json`` sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(dhs.signature, dtype="<f4").tobytes())
    meta = {"W": dhs.width, "T": dhs.num_frames, "view_deg": dhs.view_deg, "estimated_cycle": cycle}
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


def load_dhs_signature(path):
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    sig = np.fromfile(path, dtype="<f4").reshape(meta["W"], meta["T"], 3)
    return sig.astype(np.float32), meta


def render_png(dhs: DhsImage, path, upscale=4):
    """Signature as an image with time running left to right."""
    from PIL import Image

    arr = (np.clip(dhs.signature, 0, 1) * 255).astype(np.uint8)  # rows = x, cols = t
    arr = np.repeat(np.repeat(arr, upscale, axis=0), upscale, axis=1)
    Image.fromarray(arr).save(path)

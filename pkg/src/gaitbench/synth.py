"""Procedural 2-D walker: binary silhouettes, pseudo-RGB frames, ground-truth knee rows.

Legs are sagittal pendulums (hip swing plus knee flexion) placed at a lateral
hip offset and projected by the camera yaw: image x = z*sin(view) + l*cos(view),
so 90 deg is a side view and 0/180 deg are frontal/back views. One leg carries a
second-harmonic swing term (``asymmetry``) so the silhouette is periodic over a
full gait cycle rather than over a single step.
"""
from __future__ import annotations

import colorsys
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

VIEWS = tuple(range(0, 181, 18))
FRAME_H, FRAME_W = 64, 44

FOOT_HEIGHT = 0.03
FOOT_LENGTH = 0.09
# capsule radii as fractions of body height
THIGH_R, SHIN_R, ARM_R, FOOT_R = 0.036, 0.03, 0.022, 0.02
# lateral hip offset as a fraction of body width; small, so legs stay near one plane
HIP_SPREAD = 0.04


class Condition(str, enum.Enum):
    NM = "NM"
    BG = "BG"
    CL = "CL"


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class WalkerParams:
    subject_id: int
    limb_lengths: tuple  # (thigh, shin, torso, arm) as fractions of body height
    cadence: float  # steps per second
    stride: float  # step length / body height
    body_width: float
    texture_seed: int
    asymmetry: float = 0.2

    def validate(self):
        if len(self.limb_lengths) != 4 or min(self.limb_lengths) <= 0:
            raise SynthError(f"subject {self.subject_id}: limb ratios must be 4 positive values, got {self.limb_lengths}")
        head = self.head_length
        if not 0.08 <= head <= 0.3:
            raise SynthError(
                f"subject {self.subject_id}: degenerate limb ratios {self.limb_lengths} leave head fraction {head:.3f}"
            )
        if self.cadence <= 0:
            raise SynthError(f"subject {self.subject_id}: cadence must be > 0")
        if not 0 < self.stride <= 1:
            raise SynthError(f"subject {self.subject_id}: stride must lie in (0, 1]")
        if self.stride >= 1.9 * (self.limb_lengths[0] + self.limb_lengths[1]):
            raise SynthError(f"subject {self.subject_id}: stride {self.stride} exceeds leg reach")
        if not 0 < self.body_width < 1:
            raise SynthError(f"subject {self.subject_id}: body_width must lie in (0, 1)")
        return self

    @property
    def head_length(self):
        thigh, shin, torso, _ = self.limb_lengths
        return 1.0 - (FOOT_HEIGHT + thigh + shin + torso)

    def cycle_frames(self, fps):
        return int(round(2 * fps / self.cadence))


def random_walker(subject_id, rng):
    """Draw a plausible walker; ranges keep the knee near 3/4 of the silhouette height."""
    limbs = (
        float(rng.uniform(0.22, 0.27)),
        float(rng.uniform(0.2, 0.235)),
        float(rng.uniform(0.28, 0.33)),
        float(rng.uniform(0.34, 0.42)),
    )
    return WalkerParams(
        subject_id=int(subject_id),
        limb_lengths=limbs,
        cadence=float(rng.uniform(1.7, 2.4)),
        stride=float(rng.uniform(0.28, 0.45)),
        body_width=float(rng.uniform(0.18, 0.3)),
        texture_seed=int(rng.integers(0, 2**31 - 1)),
        asymmetry=float(rng.uniform(0.15, 0.35)),
    ).validate()


@dataclass
class SequenceRecord:
    frames: np.ndarray  # (H, W, T, 3) float32 in [0, 1]
    mask: np.ndarray  # (H, W, T, 1) uint8 in {0, 1}
    knee_track_gt: np.ndarray  # (T,) int
    view_deg: int
    condition: Condition
    cycle_frames: int
    subject_id: int
    fps: float
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self):
        return self.frames.shape[2]

    def clip_frames(self):
        """Frames as (T, H, W, 3)."""
        return np.moveaxis(self.frames, 2, 0)

    def clip_mask(self):
        """Silhouettes as (T, H, W)."""
        return np.moveaxis(self.mask[..., 0], 2, 0)


# --------------------------------------------------------------------------
# kinematics


def _leg_pose(p, phase, amp, extra):
    """Hip angle and knee flexion for one leg at ``phase`` (radians)."""
    hip = amp * np.sin(phase) + extra
    # knee flexes during swing, when the hip angle is increasing
    knee = 0.1 + 0.75 * np.maximum(0.0, np.cos(phase - 0.3)) ** 2
    return hip, knee


def _skeleton(p: WalkerParams, phase):
    """Joint positions (z, y, l) in body-height units for one frame."""
    thigh, shin, torso, arm = p.limb_lengths
    leg = thigh + shin
    amp = np.arcsin(min(0.95, p.stride / (2 * leg)))
    hip_half = HIP_SPREAD * p.body_width
    legs = []
    for side, ph, extra in (
        (+1, phase, 0.0),
        (-1, phase + np.pi, p.asymmetry * amp * np.sin(2 * phase)),
    ):
        th, kn = _leg_pose(p, ph, amp, extra)
        knee = np.array([thigh * np.sin(th), -thigh * np.cos(th)])
        shank = th - kn
        ankle = knee + shin * np.array([np.sin(shank), -np.cos(shank)])
        toe = ankle + FOOT_LENGTH * np.array([np.cos(shank), np.sin(shank)])
        legs.append((side * hip_half, th, knee, ankle, toe))
    lowest = min(min(a[1], t[1]) for _, _, _, a, t in legs)
    hip_y = FOOT_HEIGHT - lowest
    out = {"hip_y": hip_y, "legs": [], "arms": []}
    for lat, th, knee, ankle, toe in legs:
        out["legs"].append(
            {
                "l": lat,
                "hip": np.array([0.0, hip_y]),
                "knee": knee + [0.0, hip_y],
                "ankle": ankle + [0.0, hip_y],
                "toe": toe + [0.0, hip_y],
            }
        )
    shoulder_y = hip_y + torso
    for side, ph in ((+1, phase + np.pi), (-1, phase)):
        ang = 0.6 * amp * np.sin(ph)
        hand = np.array([arm * np.sin(ang), shoulder_y - 0.02 - arm * np.cos(ang)])
        out["arms"].append({"l": side * 0.5 * p.body_width, "shoulder": np.array([0.0, shoulder_y - 0.02]), "hand": hand})
    out["shoulder_y"] = shoulder_y
    out["head_c"] = shoulder_y + 0.55 * p.head_length
    out["head_r"] = 0.45 * p.head_length
    return out


# --------------------------------------------------------------------------
# rasterization


class _Canvas:
    def __init__(self, h, w, view_deg, scale):
        self.h, self.w = h, w
        self.rows, self.cols = np.mgrid[0:h, 0:w].astype(np.float64)
        v = np.deg2rad(view_deg)
        self.sv, self.cv = np.sin(v), np.cos(v)
        self.scale = scale
        self.ground = h - 4.0
        self.cx = (w - 1) / 2.0

    def project(self, z, y, l):
        x = self.cx + self.scale * (z * self.sv + l * self.cv)
        r = self.ground - self.scale * y
        return x, r

    def capsule(self, p0, p1, radius):
        (x0, r0), (x1, r1) = p0, p1
        dx, dr = x1 - x0, r1 - r0
        den = dx * dx + dr * dr
        if den == 0:
            t = np.zeros_like(self.cols)
        else:
            t = np.clip(((self.cols - x0) * dx + (self.rows - r0) * dr) / den, 0, 1)
        d2 = (self.cols - x0 - t * dx) ** 2 + (self.rows - r0 - t * dr) ** 2
        return d2 <= (radius * self.scale) ** 2

    def blob(self, center, half_w, half_h, power=2):
        x, r = center
        hw, hh = max(half_w * self.scale, 0.5), max(half_h * self.scale, 0.5)
        return np.abs((self.cols - x) / hw) ** power + np.abs((self.rows - r) / hh) ** power <= 1.0


def _render_parts(p, sk, cv: _Canvas):
    """List of (depth, part_name, mask) for one frame, far to near."""
    parts = []
    depth_of = lambda l, z=0.0: l * cv.sv - z * cv.cv  # larger = nearer the camera
    for i, leg in enumerate(sk["legs"]):
        l = leg["l"]
        hip = cv.project(*leg["hip"], l)
        knee = cv.project(*leg["knee"], l)
        ankle = cv.project(*leg["ankle"], l)
        toe = cv.project(*leg["toe"], l)
        parts.append((depth_of(l), "thigh", cv.capsule(hip, knee, THIGH_R)))
        parts.append((depth_of(l), "shin", cv.capsule(knee, ankle, SHIN_R)))
        parts.append((depth_of(l), "foot", cv.capsule(ankle, toe, FOOT_R)))
    torso_c = cv.project(0.02, 0.5 * (sk["hip_y"] + sk["shoulder_y"]), 0.0)
    depth = 0.55 * p.body_width
    half_w = 0.5 * (p.body_width * abs(cv.cv) + depth * abs(cv.sv))
    half_h = 0.5 * (sk["shoulder_y"] - sk["hip_y"]) + 0.03
    parts.append((0.0, "torso", cv.blob(torso_c, half_w, half_h, power=4)))
    parts.append((0.0, "head", cv.blob(cv.project(0.01, sk["head_c"], 0.0), sk["head_r"], sk["head_r"])))
    for arm in sk["arms"]:
        l = arm["l"]
        parts.append((depth_of(l) + 1e-3, "arm", cv.capsule(cv.project(*arm["shoulder"], l), cv.project(*arm["hand"], l), ARM_R)))
    parts.sort(key=lambda t: t[0])
    return parts


def _hsv(rng, s_range=(0.45, 0.95), v_range=(0.45, 0.95)):
    return np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(*s_range), rng.uniform(*v_range)))


def subject_palette(p: WalkerParams):
    """Fixed per-subject colours; CL swaps in the coat and a second pair of trousers."""
    rng = np.random.default_rng(p.texture_seed)
    return {
        "shirt": _hsv(rng),
        "trousers": _hsv(rng),
        "skin": np.array(colorsys.hsv_to_rgb(rng.uniform(0.02, 0.1), rng.uniform(0.3, 0.6), rng.uniform(0.5, 0.95))),
        "shoes": _hsv(rng, v_range=(0.15, 0.5)),
        "coat": _hsv(rng),
        "bag": _hsv(rng),
        "cl_trousers": _hsv(rng),
    }


PART_COLOUR = {"thigh": "trousers", "shin": "trousers", "foot": "shoes", "torso": "shirt", "arm": "shirt", "head": "skin"}


def synthesize_sequence(params: WalkerParams, view_deg, condition, num_frames, fps=30.0, seed=0,
                        height=FRAME_H, width=FRAME_W, noise=0.03):
    """Render one walking sequence; deterministic in all arguments."""
    params.validate()
    condition = Condition(condition)
    if view_deg not in VIEWS:
        raise SynthError(f"view {view_deg} is not on the 0..180 grid in 18 degree steps")
    cycle = params.cycle_frames(fps)
    if cycle < 2:
        raise SynthError(f"cycle of {cycle} frames is too short (cadence {params.cadence}, fps {fps})")
    if num_frames < 2 * cycle:
        raise SynthError(f"num_frames={num_frames} is shorter than two gait cycles (2*{cycle})")
    rng = np.random.default_rng(seed)
    phase0 = rng.uniform(0, 2 * np.pi)
    scale = (height - 8.0)  # pixels per body height
    cv = _Canvas(height, width, view_deg, scale)
    pal = subject_palette(params)

    frames = np.zeros((num_frames, height, width, 3), dtype=np.float32)
    mask = np.zeros((num_frames, height, width), dtype=np.uint8)
    knee_rows = np.zeros(num_frames, dtype=np.int64)
    bag_axes = None
    for t in range(num_frames):
        sk = _skeleton(params, phase0 + 2 * np.pi * t / cycle)
        parts = _render_parts(params, sk, cv)
        img = np.zeros((height, width, 3))
        sil = np.zeros((height, width), dtype=bool)
        cl = condition is Condition.CL
        for _, name, m in parts:
            colour = PART_COLOUR[name]
            if cl and colour in ("shirt", "trousers"):
                colour = "coat" if colour == "shirt" else "cl_trousers"
            img[m] = pal[colour]
            sil |= m
        if condition is Condition.BG:
            if bag_axes is None:
                # bag ellipse area = 12% of the unladen silhouette area
                area = sil.sum() * 0.12
                rb = np.sqrt(area / (1.3 * np.pi)) / scale
                bag_axes = (rb, 1.3 * rb)
            rb = bag_axes[0]
            centre = cv.project(-0.5 * 0.55 * params.body_width - 0.4 * rb, sk["hip_y"] + 0.05,
                                0.5 * params.body_width + 0.4 * rb)
            bag = cv.blob(centre, *bag_axes)
            img[bag] = pal["bag"]
            sil |= bag
        elif cl:
            coat = np.zeros_like(sil)
            for _, name, m in parts:
                if name in ("torso", "thigh"):
                    coat |= m
            coat = ndimage.binary_dilation(coat, iterations=2)
            img[coat] = pal["coat"]
            sil |= coat
        if not sil.any():
            raise SynthError(f"frame {t} rendered empty")
        if noise:
            img = img + rng.normal(0.0, noise, img.shape)
        frames[t] = np.clip(img, 0.0, 1.0) * sil[..., None]
        mask[t] = sil
        knees = [cv.project(*leg["knee"], leg["l"])[1] for leg in sk["legs"]]
        knee_rows[t] = int(np.clip(np.floor(np.mean(knees) + 0.5), 0, height - 1))

    return SequenceRecord(
        frames=np.ascontiguousarray(np.moveaxis(frames, 0, 2)),
        mask=np.ascontiguousarray(np.moveaxis(mask, 0, 2)[..., None]),
        knee_track_gt=knee_rows,
        view_deg=int(view_deg),
        condition=condition,
        cycle_frames=cycle,
        subject_id=params.subject_id,
        fps=float(fps),
    )

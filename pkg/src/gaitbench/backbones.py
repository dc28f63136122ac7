"""Feature extractors, embedding heads and the dual-modal ensemble.

Per-frame extractors follow conv -> pool -> conv -> pool -> conv, then a
horizontal-strip max pool and flatten; temporal pooling is an elementwise max
over frames. The signature branch runs a two-conv extractor on each interval
patch and keeps the elementwise max over intervals.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grad as G
from .dhs import DhsImage, IntervalSpec, interval_offsets
from .grad import Tensor

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    indoor = "indoor"
    outdoor = "outdoor"


class EmbeddingKind(str, enum.Enum):
    rgb = "rgb"
    silhouette = "silhouette"
    ensemble = "ensemble"


class FeatureError(ValueError):
    pass


@dataclass
class ArchConfig:
    channels: list = field(default_factory=lambda: [16, 32, 64])
    strips: int = 4
    dhs_channels: list = field(default_factory=lambda: [8, 16])
    dhs_dim: int = 64
    head_hidden: int = 256
    embedding_dim: int = 128
    dhs_window: int = 40
    dhs_stride: int | None = None
    mode: Mode = Mode.indoor
    height: int = 64
    width: int = 44

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if len(self.channels) != 3 or len(self.dhs_channels) != 2:
            raise FeatureError("channels needs 3 entries and dhs_channels 2")
        if (self.height // 4) % self.strips:
            raise FeatureError(f"strips={self.strips} must divide the pooled height {self.height // 4}")

    @property
    def gait_dim(self):
        return self.channels[2] * self.strips

    @property
    def silhouette_dim(self):
        return self.gait_dim + (self.dhs_dim if self.mode is Mode.indoor else 0)

    @property
    def interval_spec(self):
        return IntervalSpec(self.dhs_window, self.dhs_stride)

    def to_json(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass
class FeatureVector:
    values: np.ndarray
    source: str  # X_f, X_g, X_DHS or X_s

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if not np.all(np.isfinite(self.values)):
            raise FeatureError(f"{self.source}: non-finite feature")


@dataclass
class Embedding:
    vector: np.ndarray
    kind: EmbeddingKind
    subject_id: int | None = None
    view_deg: int | None = None
    condition: str | None = None
    sequence: str | None = None

    def __post_init__(self):
        self.kind = EmbeddingKind(self.kind)
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if not np.all(np.isfinite(self.vector)):
            raise FeatureError("non-finite embedding")

    def provenance(self):
        return (self.subject_id, self.view_deg, self.condition, self.sequence)


# --------------------------------------------------------------------------
# parameters


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)


class ModelParams:
    """Named trainable tensors for both extractors, the signature branch and both heads."""

    def __init__(self, arch: ArchConfig, tensors: dict):
        self.arch = arch
        self.tensors = tensors

    @classmethod
    def init(cls, arch: ArchConfig, seed=0):
        rng = np.random.default_rng(seed)
        t = {}

        def conv(name, cin, cout, k=3):
            t[f"{name}.w"] = _he(rng, (k, k, cin, cout), k * k * cin)
            t[f"{name}.b"] = np.zeros(cout, np.float32)

        def fc(name, din, dout):
            t[f"{name}.w"] = _he(rng, (din, dout), din)
            t[f"{name}.b"] = np.zeros(dout, np.float32)

        c1, c2, c3 = arch.channels
        for branch, cin in (("gait", 1), ("rgb", 3)):
            conv(f"{branch}.conv1", cin, c1)
            conv(f"{branch}.conv2", c1, c2)
            conv(f"{branch}.conv3", c2, c3)
        d1, d2 = arch.dhs_channels
        conv("dhs.conv1", 3, d1)
        conv("dhs.conv2", d1, d2)
        fc("dhs.fc", (arch.width // 4) * (arch.dhs_window // 4) * d2, arch.dhs_dim)
        fc("dhs.proj", arch.dhs_dim, arch.dhs_dim)
        fc("head_f.fc1", arch.gait_dim, arch.head_hidden)
        fc("head_f.fc2", arch.head_hidden, arch.embedding_dim)
        fc("head_s.fc1", arch.silhouette_dim, arch.head_hidden)
        fc("head_s.fc2", arch.head_hidden, arch.embedding_dim)
        return cls(arch, {k: Tensor(v, requires_grad=True, name=k) for k, v in t.items()})

    @classmethod
    def from_arrays(cls, arch, arrays):
        model = cls.init(arch, 0)
        for name, tensor in model.tensors.items():
            if name not in arrays:
                raise FeatureError(f"checkpoint lacks parameter {name}")
            if arrays[name].shape != tensor.shape:
                raise FeatureError(f"{name}: checkpoint shape {arrays[name].shape} != {tensor.shape}")
            tensor.data = np.array(arrays[name], dtype=np.float32)
        return model

    def __getitem__(self, name):
        return self.tensors[name]

    def group(self, prefix):
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def arrays(self):
        return {k: v.data for k, v in self.tensors.items()}

    def copy(self):
        return ModelParams(self.arch, {k: Tensor(v.data, requires_grad=True, name=k) for k, v in self.tensors.items()})


# --------------------------------------------------------------------------
# differentiable batch forwards


def frame_extractor(x, params: ModelParams, branch):
    """(N, H, W, C) frames -> (N, gait_dim) per-frame features."""
    arch = params.arch
    p = params.tensors
    h = G.relu(G.conv2d(x, p[f"{branch}.conv1.w"], pad=1, bias=p[f"{branch}.conv1.b"]))
    h = G.maxpool2d(h, 2)
    h = G.relu(G.conv2d(h, p[f"{branch}.conv2.w"], pad=1, bias=p[f"{branch}.conv2.b"]))
    h = G.maxpool2d(h, 2)
    h = G.relu(G.conv2d(h, p[f"{branch}.conv3.w"], pad=1, bias=p[f"{branch}.conv3.b"]))
    rows = h.shape[1] // arch.strips
    h = G.maxpool2d(h, (rows, h.shape[2]))
    return G.reshape(h, (h.shape[0], -1))


def temporal_features(clips, params: ModelParams, branch):
    """(B, T, H, W, C) clips -> (B, gait_dim): per-frame extractor then max over T."""
    b, t = clips.shape[:2]
    if t == 0:
        raise FeatureError("empty sequence")
    flat = G.reshape(clips, (b * t,) + clips.shape[2:])
    per_frame = frame_extractor(flat, params, branch)
    return G.max_over_axis(G.reshape(per_frame, (b, t, -1)), axis=1)


def interval_extractor(patches, params: ModelParams):
    """(N, W, window, 3) signature patches -> (N, dhs_dim)."""
    p = params.tensors
    h = G.relu(G.conv2d(patches, p["dhs.conv1.w"], pad=1, bias=p["dhs.conv1.b"]))
    h = G.maxpool2d(h, 2)
    h = G.relu(G.conv2d(h, p["dhs.conv2.w"], pad=1, bias=p["dhs.conv2.b"]))
    h = G.maxpool2d(h, 2)
    h = G.reshape(h, (h.shape[0], -1))
    return G.relu(G.affine(h, p["dhs.fc.w"], p["dhs.fc.b"]))


def signature_patches(signatures, spec: IntervalSpec):
    """Stack interval patches of equal-length signatures: (B, n, W, window, 3)."""
    sigs = [s.signature if isinstance(s, DhsImage) else np.asarray(s) for s in signatures]
    t = sigs[0].shape[1]
    if any(s.shape != sigs[0].shape for s in sigs):
        raise FeatureError("signatures in a batch must share shape")
    offs = interval_offsets(t, spec)
    return np.stack([np.stack([s[:, o : o + spec.window_w] for o in offs]) for s in sigs]).astype(np.float32)


def dhs_branch(patches, params: ModelParams):
    """(B, n, W, window, 3) patches -> (B, dhs_dim): interval extractor, max over intervals, projection."""
    patches = G.as_tensor(patches) if not isinstance(patches, Tensor) else patches
    b, n = patches.shape[:2]
    feats = interval_extractor(G.reshape(patches, (b * n,) + patches.shape[2:]), params)
    pooled = G.max_over_axis(G.reshape(feats, (b, n, -1)), axis=1)
    p = params.tensors
    return G.affine(pooled, p["dhs.proj.w"], p["dhs.proj.b"])


def head(x, params: ModelParams, name):
    p = params.tensors
    if x.shape[1] != p[f"{name}.fc1.w"].shape[0]:
        raise FeatureError(f"{name}: input width {x.shape[1]} != {p[f'{name}.fc1.w'].shape[0]}")
    h = G.relu(G.affine(x, p[f"{name}.fc1.w"], p[f"{name}.fc1.b"]))
    return G.affine(h, p[f"{name}.fc2.w"], p[f"{name}.fc2.b"])


def silhouette_batch(sils, patches, params: ModelParams):
    """Silhouette clips (B, T, H, W, 1) [+ patches] -> l_s (B, embedding_dim)."""
    x_g = temporal_features(sils, params, "gait")
    if params.arch.mode is Mode.indoor:
        if patches is None:
            raise FeatureError("indoor mode needs signature patches")
        x_s = G.concat([x_g, dhs_branch(patches, params)], axis=1)
    else:
        x_s = x_g
    return head(x_s, params, "head_s")


def rgb_batch(frames, params: ModelParams):
    """Masked RGB clips (B, T, H, W, 3) -> l_f (B, embedding_dim)."""
    return head(temporal_features(frames, params, "rgb"), params, "head_f")


# --------------------------------------------------------------------------
# single-sequence API


def _as_clip(arr, channels):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 3 and channels == 1:
        arr = arr[..., None]
    if arr.ndim != 4 or arr.shape[-1] != channels:
        raise FeatureError(f"expected (T, H, W, {channels}) clip, got {arr.shape}")
    if arr.shape[0] == 0:
        raise FeatureError("empty sequence")
    return arr


def gait_features(mask, params: ModelParams):
    """X_g of a (T, H, W) silhouette sequence."""
    clip = _as_clip(mask, 1)
    out = temporal_features(Tensor(clip[None]), params, "gait")
    return FeatureVector(out.data[0], "X_g")


def mask_frames(frames, mask):
    """Background-mask RGB frames, warning if the input was not already masked."""
    frames = _as_clip(frames, 3)
    m = _as_clip(mask, 1)
    if frames.shape[:3] != m.shape[:3]:
        raise FeatureError(f"frames {frames.shape} and mask {m.shape} disagree")
    if np.any(frames * (1 - m) != 0):
        log.warning("RGB frames carried non-zero background; re-applying the silhouette mask")
    return frames * m


def rgb_features(frames, mask, params: ModelParams):
    """X_f of (T, H, W, 3) frames, masked by (T, H, W) silhouettes."""
    clip = mask_frames(frames, mask)
    out = temporal_features(Tensor(clip[None]), params, "rgb")
    return FeatureVector(out.data[0], "X_f")


def dhs_features(dhs, spec: IntervalSpec, params: ModelParams, project=True):
    """X_DHS: elementwise max of per-interval features (projected to dhs_dim when ``project``)."""
    patches = signature_patches([dhs], spec)
    if spec.window_w != params.arch.dhs_window:
        raise FeatureError(f"window {spec.window_w} differs from the model's {params.arch.dhs_window}")
    if project:
        out = dhs_branch(Tensor(patches), params)
    else:
        feats = interval_extractor(Tensor(patches[0]), params)
        out = G.max_over_axis(feats, axis=0)
        return FeatureVector(out.data, "X_DHS")
    return FeatureVector(out.data[0], "X_DHS")


def silhouette_feature(x_g: FeatureVector, x_dhs: FeatureVector | None, mode):
    mode = Mode(mode)
    if mode is Mode.outdoor:
        return FeatureVector(x_g.values.copy(), "X_s")
    if x_dhs is None:
        raise FeatureError("indoor mode requires the signature feature")
    return FeatureVector(np.concatenate([x_g.values, x_dhs.values]), "X_s")


def embed(x: FeatureVector, params: ModelParams, head_name, **provenance):
    """Run a head ("head_f" or "head_s") on one feature vector."""
    kind = {"head_f": EmbeddingKind.rgb, "head_s": EmbeddingKind.silhouette}[head_name]
    out = head(Tensor(x.values[None]), params, head_name)
    return Embedding(out.data[0], kind, **provenance)


def ensemble(l_f: Embedding, l_s: Embedding):
    if l_f.provenance() != l_s.provenance():
        raise FeatureError(f"embeddings come from different sequences: {l_f.provenance()} vs {l_s.provenance()}")
    return Embedding(np.concatenate([l_f.vector, l_s.vector]), EmbeddingKind.ensemble, *l_f.provenance())

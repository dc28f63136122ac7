"""P x K batch sampling, batch-all triplet loss and the training loop."""
from __future__ import annotations

import csv
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grad as G
from .backbones import ArchConfig, ModelParams, Mode, rgb_batch, signature_patches, silhouette_batch
from .dataset import DatasetManifest, read_sequence
from .dhs import dhs_from_record
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    pass


@dataclass
class TrainConfig:
    margin: float = 0.2
    lr: float = 1e-3
    optimizer: str = "adam"
    iterations: int = 2000
    P: int = 8
    K: int = 4
    frames_per_clip: int = 30
    seed: int = 0
    checkpoint_every: int = 0
    knee: str = "gt"
    branches: list = field(default_factory=lambda: ["rgb", "silhouette"])
    prefetch: bool = False
    reduction: str = "all"

    def __post_init__(self):
        if self.margin <= 0:
            raise TrainingError("margin must be > 0")
        if self.P < 2 or self.K < 2:
            raise TrainingError("need P >= 2 subjects and K >= 2 sequences per subject")
        if self.frames_per_clip < 1:
            raise TrainingError("frames_per_clip must be >= 1")
        if not set(self.branches) <= {"rgb", "silhouette"} or not self.branches:
            raise TrainingError(f"unknown branches {self.branches}")
        if self.reduction not in ("all", "positive"):
            raise TrainingError(f"unknown triplet reduction {self.reduction!r}")


class SequenceStore:
    """Loads sequences from a manifest, caching silhouettes and signatures."""

    def __init__(self, manifest: DatasetManifest, knee="gt", window=None):
        self.manifest = manifest
        self.knee = knee
        self._mask = {}
        self._sig = {}

    def record(self, entry):
        return read_sequence(self.manifest.sequence_dir(entry), mmap=True)

    def silhouettes(self, entry):
        key = entry.path
        if key not in self._mask:
            rec = self.record(entry)
            self._mask[key] = np.ascontiguousarray(rec.clip_mask())
        return self._mask[key]

    def frames(self, entry, idx=None):
        rec = self.record(entry)
        f = rec.frames if idx is None else rec.frames[:, :, idx]
        return np.ascontiguousarray(np.moveaxis(np.asarray(f), 2, 0))

    def signature(self, entry):
        key = entry.path
        if key not in self._sig:
            self._sig[key] = dhs_from_record(self.record(entry), knee=self.knee).signature
        return self._sig[key]


@dataclass
class TripletBatch:
    entries: list
    labels: np.ndarray
    frame_indices: list
    silhouettes: np.ndarray  # (B, F, H, W, 1)
    rgb: np.ndarray | None  # (B, F, H, W, 3), background-masked
    patches: np.ndarray | None  # (B, n, W, window, 3)


def group_by_subject(entries):
    groups = {}
    for e in entries:
        groups.setdefault(e.subject_id, []).append(e)
    return groups


def sample_indices(groups, cfg: TrainConfig, rng, num_frames):
    """Pick P subjects, K sequences each, and sorted frame indices per sequence."""
    eligible = sorted(s for s, seqs in groups.items() if len(seqs) >= cfg.K)
    if len(eligible) < cfg.P:
        raise TrainingError(f"need {cfg.P} subjects with >= {cfg.K} sequences, have {len(eligible)}")
    if num_frames < cfg.frames_per_clip:
        raise TrainingError(f"sequences have {num_frames} frames, fewer than frames_per_clip={cfg.frames_per_clip}")
    subjects = rng.choice(eligible, size=cfg.P, replace=False)
    picked, frames = [], []
    for s in subjects:
        seqs = groups[int(s)]
        for i in rng.choice(len(seqs), size=cfg.K, replace=False):
            picked.append(seqs[int(i)])
            frames.append(np.sort(rng.choice(num_frames, size=cfg.frames_per_clip, replace=False)))
    return picked, frames


def sample_batch(store: SequenceStore, groups, cfg: TrainConfig, arch: ArchConfig, rng):
    entries, frames = sample_indices(groups, cfg, rng, store.manifest.num_frames)
    sils, rgbs, patches = [], [], []
    need_rgb = "rgb" in cfg.branches
    need_dhs = "silhouette" in cfg.branches and arch.mode is Mode.indoor
    for e, idx in zip(entries, frames):
        m = store.silhouettes(e)[idx]
        sils.append(m[..., None].astype(np.float32))
        if need_rgb:
            rgbs.append(store.frames(e, idx) * m[..., None])
    if need_dhs:
        patches = signature_patches([store.signature(e) for e in entries], arch.interval_spec)
    return TripletBatch(
        entries=entries,
        labels=np.array([e.subject_id for e in entries]),
        frame_indices=frames,
        silhouettes=np.stack(sils),
        rgb=np.stack(rgbs) if need_rgb else None,
        patches=patches if need_dhs else None,
    )


# --------------------------------------------------------------------------
# loss


def triplet_indices(labels):
    """All (anchor, positive, negative) index triples of a labelled batch."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise TrainingError("triplet loss needs at least two subjects in the batch")
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(len(labels), dtype=bool)
    trip = np.nonzero(pos[:, :, None] & ~same[:, None, :])
    if trip[0].size == 0:
        raise TrainingError("no subject has two samples; no valid triplets")
    return trip


def triplet_loss(embeddings, labels, margin, reduction="all"):
    """Batch-all [D(a, p) - D(a, n) + margin]_+ with Euclidean D.

    ``reduction="all"`` averages over every valid triplet; ``"positive"``
    averages over the triplets with a non-zero term only.
    """
    emb = G.as_tensor(embeddings)
    a, p, n = triplet_indices(labels)
    size = emb.shape[0]
    dist = G.sqrt(G.pairwise_sq_dist(emb, emb))
    d_ap = G.take(dist, a * size + p)
    d_an = G.take(dist, a * size + n)
    terms = G.hinge(G.sub(d_ap, d_an), margin)
    if reduction == "all":
        return G.mean_all(terms)
    if reduction == "positive":
        active = int(np.count_nonzero(terms.data))
        return G.scale(G.sum_all(terms), 1.0 / max(active, 1))
    raise TrainingError(f"unknown reduction {reduction!r}")


# --------------------------------------------------------------------------
# loop


def _prefetching(make, count):
    q = queue.Queue(maxsize=2)

    def producer():
        try:
            for _ in range(count):
                q.put(make())
        except Exception as exc:  # surfaced on the consumer side
            q.put(exc)

    threading.Thread(target=producer, daemon=True).start()
    for _ in range(count):
        item = q.get()
        if isinstance(item, Exception):
            raise item
        yield item


def train(manifest: DatasetManifest, cfg: TrainConfig, arch: ArchConfig, out_dir=None, params=None):
    """Optimise both branches on the train split; returns (params, loss log rows)."""
    from .grad import make_optimizer, save_checkpoint

    params = params or ModelParams.init(arch, derive_seed(cfg.seed, "init"))
    log_rows = []
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.iterations == 0:
        if out_dir:
            save_checkpoint(out_dir / "model.ckpt", params.tensors, extra={"arch": arch.to_json()})
            write_loss_csv(out_dir / "loss.csv", log_rows)
        return params, log_rows

    opt = make_optimizer(cfg.optimizer, cfg.lr)
    store = SequenceStore(manifest, knee=cfg.knee)
    groups = group_by_subject(manifest.split("train"))
    rng = rng_for(cfg.seed, "batches")
    make = lambda: sample_batch(store, groups, cfg, arch, rng)
    batches = _prefetching(make, cfg.iterations) if cfg.prefetch else (make() for _ in range(cfg.iterations))
    last_good = {k: v.data.copy() for k, v in params.tensors.items()}
    t0 = time.time()
    for it, batch in enumerate(batches):
        with G.Tape() as tape:
            terms = []
            loss_f = loss_s = None
            if "rgb" in cfg.branches:
                loss_f = triplet_loss(rgb_batch(G.Tensor(batch.rgb), params), batch.labels, cfg.margin, cfg.reduction)
                terms.append(loss_f)
            if "silhouette" in cfg.branches:
                patches = None if batch.patches is None else G.Tensor(batch.patches)
                loss_s = triplet_loss(silhouette_batch(G.Tensor(batch.silhouettes), patches, params),
                                      batch.labels, cfg.margin, cfg.reduction)
                terms.append(loss_s)
            total = terms[0] if len(terms) == 1 else G.add(terms[0], terms[1])
        value = float(total.data)
        if not np.isfinite(value):
            for k, v in params.tensors.items():
                v.data = last_good[k]
            if out_dir:
                save_checkpoint(out_dir / "model.ckpt", params.tensors, opt.state, extra={"arch": arch.to_json()})
            raise TrainingDiverged(f"loss became non-finite at iteration {it}")
        tape.backward(total)
        grads = {k: tape.grad(v) for k, v in params.tensors.items()}
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDiverged(f"non-finite gradient at iteration {it}")
        last_good = {k: v.data.copy() for k, v in params.tensors.items()}
        opt.step(params.tensors, grads)
        row = (it, float(loss_f.data) if loss_f is not None else 0.0,
               float(loss_s.data) if loss_s is not None else 0.0, value)
        log_rows.append(row)
        if it % 10 == 0 or it == cfg.iterations - 1:
            log.info("iter %d loss_f %.4f loss_s %.4f total %.4f (%.1fs)", *row, time.time() - t0)
        if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / "model.ckpt", params.tensors, opt.state, extra={"arch": arch.to_json()})
    if out_dir:
        save_checkpoint(out_dir / "model.ckpt", params.tensors, opt.state,
                        extra={"arch": arch.to_json(), "train": {"seed": cfg.seed, "iterations": cfg.iterations}})
        write_loss_csv(out_dir / "loss.csv", log_rows)
    return params, log_rows


def write_loss_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss_f", "loss_s", "loss_total"])
        for it, lf, ls, lt in rows:
            w.writerow([it, f"{lf:.8g}", f"{ls:.8g}", f"{lt:.8g}"])


def load_model(path):
    """ModelParams from a ``model.ckpt`` written by :func:`train`."""
    arrays, header = G.load_checkpoint(path)
    arch_json = header.get("extra", {}).get("arch")
    if arch_json is None:
        raise TrainingError(f"{path}: checkpoint carries no architecture block")
    arch = ArchConfig(**arch_json)
    return ModelParams.from_arrays(arch, arrays), header

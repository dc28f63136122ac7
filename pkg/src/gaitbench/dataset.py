"""Synthetic benchmark layout: per-sequence directories plus ``manifest.json``."""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .seeding import derive_seed, rng_for
from .synth import VIEWS, Condition, SequenceRecord, random_walker, synthesize_sequence


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSpec:
    train_subjects: int = 24
    test_subjects: int = 8
    train_subject_ids: list | None = None
    test_subject_ids: list | None = None
    views: list = field(default_factory=lambda: list(VIEWS))
    takes: dict = field(default_factory=lambda: {"NM": 2, "BG": 1, "CL": 1})
    num_frames: int = 72
    fps: float = 30.0
    height: int = 64
    width: int = 44

    def subject_ids(self):
        train = list(self.train_subject_ids or range(1, self.train_subjects + 1))
        start = max(train, default=0) + 1
        test = list(self.test_subject_ids or range(start, start + self.test_subjects))
        overlap = set(train) & set(test)
        if overlap:
            raise DatasetError(f"train and test subject ids overlap: {sorted(overlap)}")
        if len(set(train)) != len(train) or len(set(test)) != len(test):
            raise DatasetError("duplicate subject ids")
        return train, test


@dataclass
class ManifestEntry:
    path: str
    subject_id: int
    view_deg: int
    condition: str
    take: int
    split: str


@dataclass
class DatasetManifest:
    entries: list
    fps: float
    height: int
    width: int
    num_frames: int
    seed: int = 0
    root: Path | None = None

    def to_json(self):
        return {
            "fps": self.fps,
            "dims": {"H": self.height, "W": self.width, "T": self.num_frames},
            "seed": self.seed,
            "sequences": [asdict(e) for e in self.entries],
        }

    def save(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "manifest.json").write_text(json.dumps(self.to_json(), indent=1))
        self.root = root

    @classmethod
    def load(cls, root):
        root = Path(root)
        path = root / "manifest.json" if root.is_dir() else root
        raw = json.loads(path.read_text())
        d = raw["dims"]
        return cls(
            entries=[ManifestEntry(**e) for e in raw["sequences"]],
            fps=raw["fps"], height=d["H"], width=d["W"], num_frames=d["T"],
            seed=raw.get("seed", 0), root=path.parent,
        )

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def sequence_dir(self, entry):
        return Path(self.root) / entry.path


def walker_for(seed, subject_id):
    return random_walker(subject_id, rng_for(seed, "walker", subject_id))


def plan_dataset(spec: DatasetSpec, seed):
    """Manifest rows (no files) for ``spec``; one per subject x condition x take x view."""
    train, test = spec.subject_ids()
    if not spec.takes or any(int(n) < 1 for n in spec.takes.values()):
        raise DatasetError(f"every condition needs at least one take, got {spec.takes}")
    for v in spec.views:
        if v not in VIEWS:
            raise DatasetError(f"view {v} is not on the 18 degree grid")
    entries = []
    for split, ids in (("train", train), ("test", test)):
        for sid in ids:
            for cond, n in spec.takes.items():
                Condition(cond)
                for take in range(1, int(n) + 1):
                    for view in spec.views:
                        entries.append(ManifestEntry(
                            path=f"seqs/{sid:04d}/{cond}-{take:02d}/{view:03d}",
                            subject_id=sid, view_deg=int(view), condition=cond, take=take, split=split,
                        ))
    return DatasetManifest(entries, spec.fps, spec.height, spec.width, spec.num_frames, seed)


def synthesize_entry(manifest: DatasetManifest, entry: ManifestEntry):
    params = walker_for(manifest.seed, entry.subject_id)
    seq_seed = derive_seed(manifest.seed, "sequence", entry.subject_id, entry.condition, entry.take, entry.view_deg)
    return synthesize_sequence(params, entry.view_deg, entry.condition, manifest.num_frames, manifest.fps,
                               seed=seq_seed, height=manifest.height, width=manifest.width)


def build_dataset(spec: DatasetSpec, out_dir, seed, threads=None):
    manifest = plan_dataset(spec, seed)
    walkers = {}
    for e in manifest.entries:
        if e.subject_id not in walkers:
            walkers[e.subject_id] = walker_for(seed, e.subject_id)
    signature = {(w.limb_lengths, w.cadence, w.stride, w.texture_seed) for w in walkers.values()}
    if len(signature) != len(walkers):
        raise DatasetError("two subjects drew identical walker parameters; change the seed")
    out_dir = Path(out_dir)
    manifest.root = out_dir

    def work(entry):
        write_sequence(out_dir / entry.path, synthesize_entry(manifest, entry))

    workers = threads or os.cpu_count() or 1
    if workers == 1:
        for e in manifest.entries:
            work(e)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, manifest.entries))
    manifest.save(out_dir)
    return manifest


# --------------------------------------------------------------------------
# sequence files


def write_sequence(seq_dir, record: SequenceRecord):
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    h, w, t, _ = record.frames.shape
    (seq_dir / "frames.bin").write_bytes(np.ascontiguousarray(record.frames, dtype="<f4").tobytes())
    (seq_dir / "mask.bin").write_bytes(np.ascontiguousarray(record.mask[..., 0], dtype=np.uint8).tobytes())
    meta = {
        "dims": {"H": h, "W": w, "T": t},
        "fps": record.fps,
        "view_deg": record.view_deg,
        "condition": Condition(record.condition).value,
        "subject_id": record.subject_id,
        "knee_track_gt": [int(k) for k in record.knee_track_gt],
        "cycle_frames": record.cycle_frames,
    }
    (seq_dir / "meta.json").write_text(json.dumps(meta))


def read_sequence(seq_dir, mmap=False):
    seq_dir = Path(seq_dir)
    meta_path = seq_dir / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"{seq_dir}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    d = meta["dims"]
    shape = (d["H"], d["W"], d["T"])
    if mmap:
        frames = np.memmap(seq_dir / "frames.bin", dtype="<f4", mode="r", shape=shape + (3,))
        mask = np.memmap(seq_dir / "mask.bin", dtype=np.uint8, mode="r", shape=shape)
    else:
        frames = np.fromfile(seq_dir / "frames.bin", dtype="<f4").reshape(shape + (3,))
        mask = np.fromfile(seq_dir / "mask.bin", dtype=np.uint8).reshape(shape)
    return SequenceRecord(
        frames=frames,
        mask=mask[..., None],
        knee_track_gt=np.asarray(meta["knee_track_gt"], dtype=np.int64),
        view_deg=meta["view_deg"],
        condition=Condition(meta["condition"]),
        cycle_frames=meta["cycle_frames"],
        subject_id=meta["subject_id"],
        fps=meta["fps"],
    )


def load_casia_b(root):
    """Placeholder for a real CASIA-B reader; only the expected layout is defined.

    Expected: ``<root>/<subject:03d>/<cond>-<take:02d>/<view:03d>/`` holding
    aligned 64x44 silhouette PNGs named ``<frame:03d>.png`` and, for RGB body
    chips, a sibling ``rgb/`` directory with matching frame names. Subjects
    001-074 train, 075-124 test.
    """
    raise NotImplementedError("real-dataset loading is not part of this package")

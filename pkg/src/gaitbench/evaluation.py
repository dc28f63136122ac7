"""Gallery/probe Rank-1 identification and Table-style reports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import grad as G
from .backbones import (
    Embedding,
    EmbeddingKind,
    ModelParams,
    Mode,
    rgb_batch,
    signature_patches,
    silhouette_batch,
)
from .synth import VIEWS

CONDITIONS = ("NM", "BG", "CL")
KIND_ALIASES = {"gait": EmbeddingKind.silhouette, "silhouette": EmbeddingKind.silhouette,
                "rgb": EmbeddingKind.rgb, "ensemble": EmbeddingKind.ensemble}


class EvalError(ValueError):
    pass


def resolve_kind(kind):
    try:
        return KIND_ALIASES[kind] if isinstance(kind, str) else EmbeddingKind(kind)
    except KeyError:
        raise EvalError(f"unknown embedding kind {kind!r}") from None


def extract_all(entries, params: ModelParams, store, batch_size=4):
    """l_f, l_s and l_i for every manifest entry; returns {kind: [Embedding, ...]}."""
    arch = params.arch
    out = {k: [] for k in EmbeddingKind}
    for start in range(0, len(entries), batch_size):
        chunk = entries[start : start + batch_size]
        sils, rgbs, sigs = [], [], []
        for e in chunk:
            m = store.silhouettes(e)
            sils.append(m[..., None].astype(np.float32))
            rgbs.append(store.frames(e) * m[..., None])
            if arch.mode is Mode.indoor:
                sigs.append(store.signature(e))
        patches = None
        if arch.mode is Mode.indoor:
            if len(sigs) != len(chunk):
                raise EvalError("indoor mode needs a signature for every sequence")
            patches = G.Tensor(signature_patches(sigs, arch.interval_spec))
        l_f = rgb_batch(G.Tensor(np.stack(rgbs)), params).data
        l_s = silhouette_batch(G.Tensor(np.stack(sils)), patches, params).data
        for e, f, s in zip(chunk, l_f, l_s):
            prov = dict(subject_id=e.subject_id, view_deg=e.view_deg, condition=e.condition, sequence=e.path)
            out[EmbeddingKind.rgb].append(Embedding(f, EmbeddingKind.rgb, **prov))
            out[EmbeddingKind.silhouette].append(Embedding(s, EmbeddingKind.silhouette, **prov))
            out[EmbeddingKind.ensemble].append(Embedding(np.concatenate([f, s]), EmbeddingKind.ensemble, **prov))
    return out


def save_embeddings(path, embeddings, takes=None):
    """Raw little-endian f32 (N, D) plus ``<path>.json`` with one metadata row per vector."""
    path = Path(path)
    mat = np.stack([e.vector for e in embeddings]).astype("<f4")
    path.write_bytes(mat.tobytes())
    rows = [
        {"subject_id": e.subject_id, "view_deg": e.view_deg, "condition": e.condition, "sequence": e.sequence}
        for e in embeddings
    ]
    meta = {"kind": embeddings[0].kind.value, "shape": list(mat.shape), "rows": rows}
    path.with_name(path.name + ".json").write_text(json.dumps(meta))


def load_embeddings(path):
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    mat = np.fromfile(path, dtype="<f4").reshape(meta["shape"])
    return [Embedding(v, meta["kind"], **r) for v, r in zip(mat, meta["rows"])]


@dataclass
class GalleryIndex:
    vectors: np.ndarray
    subject_ids: np.ndarray
    views: np.ndarray
    conditions: list
    kind: EmbeddingKind

    @classmethod
    def build(cls, embeddings):
        if not embeddings:
            raise EvalError("empty gallery")
        kinds = {e.kind for e in embeddings}
        if len(kinds) != 1:
            raise EvalError(f"gallery mixes embedding kinds {sorted(k.value for k in kinds)}")
        vecs = np.stack([e.vector for e in embeddings]).astype(np.float64)
        if not np.all(np.isfinite(vecs)):
            raise EvalError("gallery holds non-finite vectors")
        return cls(vecs, np.array([e.subject_id for e in embeddings]), np.array([e.view_deg for e in embeddings]),
                   [e.condition for e in embeddings], kinds.pop())


@dataclass
class AccuracyTable:
    conditions: list
    views: list
    cells: np.ndarray  # (len(conditions), len(views)) Rank-1 in percent; NaN = no probes
    counts: np.ndarray

    @property
    def mean(self):
        return self.cells.mean(axis=1)

    def cell(self, condition, view):
        return float(self.cells[self.conditions.index(condition), self.views.index(view)])

    def row_mean(self, condition):
        return float(self.mean[self.conditions.index(condition)])

    def is_complete(self):
        return bool(np.all(self.counts > 0))


def nearest_gallery(gallery: GalleryIndex, probe_vecs, probe_views, exclude_identical_view=True):
    """Index of the nearest eligible gallery entry per probe (ties -> lowest index)."""
    probe_vecs = np.asarray(probe_vecs, dtype=np.float64)
    diff = probe_vecs[:, None, :] - gallery.vectors[None, :, :]
    dist = np.einsum("pgd,pgd->pg", diff, diff)
    if exclude_identical_view:
        same = np.asarray(probe_views)[:, None] == gallery.views[None, :]
        if np.any(same.all(axis=1)):
            bad = int(np.flatnonzero(same.all(axis=1))[0])
            raise EvalError(f"probe {bad} has no gallery candidate outside view {probe_views[bad]}")
        dist = np.where(same, np.inf, dist)
    return np.argmin(dist, axis=1)


def rank1(gallery: GalleryIndex, probes, exclude_identical_view=True, views=VIEWS, conditions=CONDITIONS):
    if not probes:
        raise EvalError("no probes")
    kinds = {p.kind for p in probes}
    if kinds != {gallery.kind}:
        raise EvalError(f"probe kinds {sorted(k.value for k in kinds)} do not match gallery {gallery.kind.value}")
    missing = {p.subject_id for p in probes} - set(gallery.subject_ids.tolist())
    if missing:
        raise EvalError(f"gallery lacks probe subjects {sorted(missing)}")
    p_views = np.array([p.view_deg for p in probes])
    nearest = nearest_gallery(gallery, np.stack([p.vector for p in probes]), p_views, exclude_identical_view)
    hits = gallery.subject_ids[nearest] == np.array([p.subject_id for p in probes])
    views, conditions = list(views), list(conditions)
    cells = np.full((len(conditions), len(views)), np.nan)
    counts = np.zeros((len(conditions), len(views)), dtype=np.int64)
    p_conds = np.array([p.condition for p in probes])
    for i, c in enumerate(conditions):
        for j, v in enumerate(views):
            sel = (p_conds == c) & (p_views == v)
            counts[i, j] = sel.sum()
            if counts[i, j]:
                cells[i, j] = 100.0 * int(hits[sel].sum()) / int(counts[i, j])
    return AccuracyTable(conditions, views, cells, counts)


def split_gallery_probes(embeddings, gallery_condition="NM", gallery_takes=(1,)):
    """Gallery = the given NM takes; probes = every other sequence."""
    gallery, probes = [], []
    for e in embeddings:
        cond, take = _take_of(e)
        (gallery if cond == gallery_condition and take in gallery_takes else probes).append(e)
    return gallery, probes


def _take_of(e: Embedding):
    # sequence paths end in "<cond>-<take>/<view>"
    part = Path(e.sequence).parent.name
    cond, take = part.split("-")
    return cond, int(take)


def format_csv(table: AccuracyTable):
    if not table.is_complete():
        raise EvalError("table has empty cells; cannot report a partial table")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["condition", *[str(v) for v in table.views], "mean"])
    for c, row, m in zip(table.conditions, table.cells, table.mean):
        w.writerow([c, *[f"{x:.1f}" for x in row], f"{m:.1f}"])
    return buf.getvalue()


def format_text(table: AccuracyTable, title="Rank-1 accuracy (%), identical views excluded"):
    if not table.is_complete():
        raise EvalError("table has empty cells; cannot report a partial table")
    head = ["Probe"] + [f"{v}°" for v in table.views] + ["mean"]
    rows = [[c] + [f"{x:.1f}" for x in r] + [f"{m:.1f}"] for c, r, m in zip(table.conditions, table.cells, table.mean)]
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    line = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    fmt = lambda r: "| " + " | ".join(s.rjust(w) for s, w in zip(r, widths)) + " |"
    return "\n".join([title, line, fmt(head), line, *[fmt(r) for r in rows], line]) + "\n"


def report(table: AccuracyTable, out_path):
    """Write ``<out>.csv`` and a ``.txt`` rendering next to it."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(format_csv(table))
    out_path.with_suffix(".txt").write_text(format_text(table))
    return out_path


def read_table_csv(path):
    lines = list(csv.reader(Path(path).read_text().splitlines()))
    views = [int(v) for v in lines[0][1:-1]]
    conds = [r[0] for r in lines[1:]]
    cells = np.array([[float(x) for x in r[1:-1]] for r in lines[1:]])
    return AccuracyTable(conds, views, cells, np.ones_like(cells, dtype=np.int64))


def evaluate(manifest, params: ModelParams, store, kinds=("ensemble",), exclude_identical_view=True,
             out_dir=None, split="test"):
    """Extract test embeddings and score each requested kind; returns {kind: AccuracyTable}."""
    entries = manifest.split(split)
    if not entries:
        raise EvalError(f"manifest has no {split} sequences")
    embs = extract_all(entries, params, store)
    tables = {}
    for kind in kinds:
        k = resolve_kind(kind)
        gallery, probes = split_gallery_probes(embs[k])
        conds = [c for c in CONDITIONS if any(p.condition == c for p in probes)]
        views = sorted({p.view_deg for p in probes})
        table = rank1(GalleryIndex.build(gallery), probes, exclude_identical_view, views, conds)
        tables[kind] = table
        if out_dir:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            report(table, out_dir / f"table_{kind}.csv")
            save_embeddings(out_dir / f"embeddings_{kind}.bin", embs[k])
    return tables

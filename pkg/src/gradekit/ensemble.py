"""Accuracy-weighted fusion of patch gradings and structure-level aggregation."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateWeightsWarning, GeometryError, InvalidParameterError, ShapeError
from .volgrid import LabelVolume, Volume


@dataclass(frozen=True)
class GradingMap:
    volume: Volume
    provenance: str = ""

    @property
    def data(self):
        return self.volume.data

    @property
    def dims(self):
        return self.volume.dims


@dataclass(frozen=True)
class DGVector:
    """Mean grading per structure; index ``s - 1`` holds structure label ``s``."""

    values: np.ndarray
    missing: np.ndarray

    @property
    def n_labels(self):
        return len(self.values)

    @property
    def structure_ids(self):
        return np.arange(1, self.n_labels + 1)


def reconstruct(gradings, alphas, grid, mask=None, provenance=""):
    """Fuse per-location gradings into one map.

    Each voxel gets the alpha-weighted mean of the gradings of every patch
    covering it. Voxels whose covering patches all have zero weight fall back
    to the unweighted mean. With ``mask`` given, voxels outside it are 0.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if len(gradings) != grid.m or len(alphas) != grid.m:
        raise InvalidParameterError(
            f"expected {grid.m} gradings and weights, got {len(gradings)} and {len(alphas)}")
    if np.any(alphas < 0) or not np.all(np.isfinite(alphas)):
        raise InvalidParameterError("patch weights must be finite and non-negative")
    if not np.any(alphas > 0):
        warnings.warn("all patch weights are zero; using the unweighted mean",
                      DegenerateWeightsWarning, stacklevel=2)
    num = np.zeros(grid.dims)
    den = np.zeros(grid.dims)
    plain = np.zeros(grid.dims)
    cover = np.zeros(grid.dims)
    for j in range(grid.m):
        g = np.asarray(gradings[j], dtype=np.float64)
        if g.shape != tuple(grid.patch_dims):
            raise ShapeError(f"grading {j} has shape {g.shape}, expected {grid.patch_dims}")
        sl = grid.slices(j)
        num[sl] += alphas[j] * g
        den[sl] += alphas[j]
        plain[sl] += g
        cover[sl] += 1
    if np.any(cover == 0):
        raise GeometryError("grid leaves voxels uncovered")
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), plain / cover)
    if mask is not None:
        out = np.where(np.asarray(mask, dtype=bool), out, 0.0)
    return GradingMap(Volume(out.astype(np.float32)), provenance)


def aggregate_structures(gmap, labels):
    """Mean grading over each structure (label 0 excluded)."""
    data = gmap.data if isinstance(gmap, (GradingMap, Volume)) else np.asarray(gmap)
    lab = labels.data if isinstance(labels, LabelVolume) else np.asarray(labels)
    n_labels = labels.n_labels if isinstance(labels, LabelVolume) else int(lab.max())
    if data.shape != lab.shape:
        raise ShapeError(f"grading map {data.shape} and labels {lab.shape} differ")
    flat = lab.ravel()
    sums = np.bincount(flat, weights=data.ravel().astype(np.float64), minlength=n_labels + 1)[1:]
    counts = np.bincount(flat, minlength=n_labels + 1)[1:]
    missing = counts == 0
    values = np.where(missing, np.nan, sums / np.maximum(counts, 1))
    return DGVector(values, missing)


def structure_volumes(labels):
    """Structure volumes as a percentage of the ICC (all non-zero labels)."""
    lab = labels.data if isinstance(labels, LabelVolume) else np.asarray(labels)
    n_labels = labels.n_labels if isinstance(labels, LabelVolume) else int(lab.max())
    counts = np.bincount(lab.ravel(), minlength=n_labels + 1)[1:].astype(np.float64)
    icc = counts.sum()
    if icc == 0:
        raise InvalidParameterError("empty ICC: no labelled voxels")
    return 100.0 * counts / icc


FEATURE_COLUMNS = ("subject_id", "structure_id", "dg", "volume", "missing_flag")


def write_feature_table(path, rows):
    """``rows`` is an iterable of (subject_id, DGVector, volumes)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_COLUMNS)
        for sid, dg, vol in rows:
            for s in range(dg.n_labels):
                val = "" if dg.missing[s] else repr(float(dg.values[s]))
                w.writerow([sid, s + 1, val, repr(float(vol[s])), int(dg.missing[s])])


def read_feature_table(path):
    """{subject_id: (DGVector, volumes)} in file order."""
    per = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FEATURE_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(FEATURE_COLUMNS)}")
        for rec in reader:
            try:
                sid = rec["subject_id"]
                s = int(rec["structure_id"])
                miss = rec["missing_flag"] == "1"
                dg = np.nan if miss else float(rec["dg"])
                per.setdefault(sid, {})[s] = (dg, float(rec["volume"]), miss)
            except ValueError as exc:
                raise DataError(f"{path}: {exc}") from exc
    out = {}
    for sid, entries in per.items():
        n = max(entries)
        if sorted(entries) != list(range(1, n + 1)):
            raise DataError(f"{path}: subject {sid} has non-contiguous structure ids")
        vals = np.array([entries[s][0] for s in range(1, n + 1)])
        vols = np.array([entries[s][1] for s in range(1, n + 1)])
        miss = np.array([entries[s][2] for s in range(1, n + 1)])
        out[sid] = (DGVector(vals, miss), vols)
    return out

"""Volumes, the overlapping patch grid, patch extraction and grading targets.

Arrays are indexed ``[x, y, z]``; on disk they are written x-fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import GeometryError, InvalidParameterError, ShapeError

AD, CN = "AD", "CN"
# positive (disease-side) classes of the binary tasks
POSITIVE_CLASSES = ("AD", "pMCI")
CLASS_NAMES = ("CN", "AD", "sMCI", "pMCI")


def class_sign(label):
    """+1 for the disease side of a binary task, -1 otherwise."""
    if isinstance(label, str):
        if label not in CLASS_NAMES:
            raise InvalidParameterError(f"unknown class label {label!r}")
        return 1 if label in POSITIVE_CLASSES else -1
    return 1 if label > 0 else -1


def _readonly(arr):
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable and arr.base is None:
        arr.flags.writeable = False
        return arr
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Volume:
    """Scalar 3D field (image or grading map) stored as float32."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"volume data must be a non-empty 3-D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise InvalidParameterError(f"spacing must be 3 positive values, got {self.spacing}")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape


@dataclass(frozen=True)
class LabelVolume:
    """Integer structure labels; 0 is background (outside the ICC)."""

    data: np.ndarray
    n_labels: int
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"label data must be 3-D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(np.equal(np.mod(data, 1), 0)):
                raise InvalidParameterError("label volume contains non-integer values")
        data = data.astype(np.int32)
        if data.size and (data.min() < 0 or data.max() > self.n_labels):
            raise InvalidParameterError(
                f"labels must lie in [0, {self.n_labels}], got [{data.min()}, {data.max()}]")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self):
        return self.data.shape

    def icc_mask(self):
        """ICC at desk scale is the union of all non-zero labels."""
        return self.data > 0


@dataclass(frozen=True)
class PatchGrid:
    dims: tuple
    patch_dims: tuple
    k: int
    offsets: np.ndarray          # (m, 3) voxel offsets, location-major
    grid_index: np.ndarray       # (m, 3) integer grid coordinates
    init_order: tuple            # locations in transfer-initialization order
    parents: tuple = field(repr=False, default=())  # parent location or None

    @property
    def m(self):
        return len(self.offsets)

    @property
    def root(self):
        return self.init_order[0]

    def location(self, gi):
        """Flat location index of grid coordinate ``gi``."""
        i, j, l = gi
        return (i * self.k + j) * self.k + l

    def slices(self, j):
        if not 0 <= j < self.m:
            raise IndexError(f"location {j} out of range for a grid with {self.m} locations")
        o = self.offsets[j]
        return tuple(slice(int(o[a]), int(o[a]) + self.patch_dims[a]) for a in range(3))

    def children(self, j):
        return [c for c in range(self.m) if self.parents[c] == j]

    def location_name(self, j):
        i, jj, l = (int(v) for v in self.grid_index[j])
        return f"{i}_{jj}_{l}"


def axis_offsets(dim, patch, k):
    if k == 1:
        return [0]
    span = dim - patch
    return [(i * span) // (k - 1) for i in range(k)]


def _transfer_schedule(k):
    """Order grid cells by Manhattan distance from the origin (ties broken
    lexicographically) and give each non-root cell the nearest cell already
    scheduled before it."""
    cells = list(product(range(k), repeat=3))
    order = sorted(cells, key=lambda c: (sum(c), c))
    parent = {order[0]: None}
    for pos in range(1, len(order)):
        c = order[pos]
        best = min(order[:pos], key=lambda q: (sum(abs(a - b) for a, b in zip(c, q)), q))
        parent[c] = best
    return order, parent


def build_patch_grid(dims, patch_dims, k):
    """Decompose ``dims`` into k*k*k equally spaced, overlapping patches."""
    dims = tuple(int(d) for d in dims)
    patch_dims = tuple(int(p) for p in patch_dims)
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidParameterError(f"k must be a positive integer, got {k!r}")
    if len(dims) != 3 or len(patch_dims) != 3:
        raise GeometryError("dims and patch_dims need exactly three entries")
    if min(patch_dims) < 1 or any(p > d for p, d in zip(patch_dims, dims)):
        raise GeometryError(f"patch {patch_dims} does not fit in volume {dims}")
    per_axis = [axis_offsets(d, p, k) for d, p in zip(dims, patch_dims)]
    for a, offs in enumerate(per_axis):
        ends = [o + patch_dims[a] for o in offs]
        if ends[-1] != dims[a] or any(nxt > end for nxt, end in zip(offs[1:], ends)):
            raise GeometryError(
                f"{k} patches of {patch_dims[a]} voxels leave gaps along axis {a} (size {dims[a]})")
    cells = list(product(range(k), repeat=3))
    grid_index = np.array(cells, dtype=np.int64).reshape(-1, 3)
    offsets = np.array([[per_axis[a][c[a]] for a in range(3)] for c in cells], dtype=np.int64)
    order, parent = _transfer_schedule(k)

    def flat(c):
        return (c[0] * k + c[1]) * k + c[2]

    init_order = tuple(flat(c) for c in order)
    parents = [None] * len(cells)
    for c, p in parent.items():
        parents[flat(c)] = None if p is None else flat(p)
    offsets.flags.writeable = False
    grid_index.flags.writeable = False
    return PatchGrid(dims, patch_dims, int(k), offsets, grid_index, init_order, tuple(parents))


def _as_array(vol):
    return vol.data if isinstance(vol, (Volume, LabelVolume)) else np.asarray(vol)


def extract_patch(vol, grid, j):
    """Copy of the patch at location ``j``."""
    data = _as_array(vol)
    if data.shape != grid.dims:
        raise ShapeError(f"volume dims {data.shape} do not match grid dims {grid.dims}")
    return np.array(data[grid.slices(j)])


def insert_patch(target, grid, j, patch):
    """Write ``patch`` back into ``target`` (a writable array) at location ``j``."""
    target[grid.slices(j)] = patch
    return target


def make_grading_target(icc_mask, class_label):
    """+1 (disease) or -1 (healthy) on ICC voxels, 0 elsewhere."""
    mask = np.asarray(icc_mask)
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise InvalidParameterError("ICC mask must be binary")
        mask = mask.astype(bool)
    return np.where(mask, np.float32(class_sign(class_label)), np.float32(0))


def _pad_even(arr, fill):
    pads = [(0, s % 2) for s in arr.shape]
    return np.pad(arr, pads, constant_values=fill) if any(p[1] for p in pads) else arr


def _blocks(arr):
    x, y, z = arr.shape
    return (arr.reshape(x // 2, 2, y // 2, 2, z // 2, 2)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(x // 2, y // 2, z // 2, 8))


def downsample(vol, factor=2):
    """Halve the resolution of a Volume (mean pooling) or LabelVolume
    (block majority, lowest label wins ties). Odd trailing blocks use the
    voxels that exist."""
    if factor != 2:
        raise InvalidParameterError("only factor 2 is supported")
    spacing = tuple(s * factor for s in vol.spacing)
    if isinstance(vol, LabelVolume):
        blocks = _blocks(_pad_even(vol.data, -1))
        counts = np.stack([(blocks == lab).sum(axis=-1) for lab in range(vol.n_labels + 1)], axis=-1)
        # argmax returns the first maximum, i.e. the lowest tied label
        return LabelVolume(counts.argmax(axis=-1).astype(np.int32), vol.n_labels, spacing)
    data = vol.data.astype(np.float64)
    sums = _blocks(_pad_even(data, 0.0)).sum(axis=-1)
    counts = _blocks(_pad_even(np.ones_like(data), 0.0)).sum(axis=-1)
    return Volume((sums / counts).astype(np.float32), spacing)


def standardize_intensity(vol, mask):
    """Zero-mean, unit-variance over the ICC; voxels outside it are set to 0.

    Desk-scale stand-in for intensity standardization preprocessing.
    """
    data = _as_array(vol).astype(np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidParameterError("cannot standardize with an empty ICC mask")
    vals = data[mask]
    sd = vals.std()
    out = np.where(mask, (data - vals.mean()) / (sd if sd > 0 else 1.0), 0.0)
    return out.astype(np.float32)

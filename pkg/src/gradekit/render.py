"""Slice rendering of grading maps with a diverging palette."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, ShapeError

# cold - neutral - warm anchors for -1, 0, +1
COLD = np.array([59, 76, 192], dtype=np.float64)
NEUTRAL = np.array([221, 221, 221], dtype=np.float64)
WARM = np.array([180, 4, 38], dtype=np.float64)
BOUNDARY = np.array([0, 0, 0], dtype=np.uint8)


def palette(values):
    """RGB uint8 for gradings; values are clipped to [-1, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)[..., None]
    rgb = np.where(v < 0, NEUTRAL + (COLD - NEUTRAL) * (-v), NEUTRAL + (WARM - NEUTRAL) * v)
    return np.rint(rgb).astype(np.uint8)


def take_slice(vol, axis, index):
    arr = np.asarray(vol)
    if axis not in (0, 1, 2):
        raise InvalidParameterError(f"axis must be 0, 1 or 2, got {axis}")
    if not 0 <= index < arr.shape[axis]:
        raise InvalidParameterError(f"slice {index} outside 0..{arr.shape[axis] - 1} on axis {axis}")
    return np.take(arr, index, axis=axis)


def boundaries(labels2d):
    """Pixels whose label differs from the right or lower neighbour."""
    lab = np.asarray(labels2d)
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:-1, :] |= lab[:-1, :] != lab[1:, :]
    edge[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    return edge


def group_mean(maps):
    arrs = [np.asarray(m, dtype=np.float64) for m in maps]
    if not arrs:
        raise InvalidParameterError("group mean needs at least one map")
    if any(a.shape != arrs[0].shape for a in arrs):
        raise ShapeError("maps in a group must share dimensions")
    return np.mean(arrs, axis=0)


def render_slice(gmap, axis, index, labels=None, scale=1):
    """RGB image (rows, cols, 3) of one slice, boundaries drawn in black."""
    img = palette(take_slice(gmap, axis, index))
    if labels is not None:
        lab = np.asarray(labels)
        if lab.shape != np.shape(gmap):
            raise ShapeError(f"labels {lab.shape} do not match map {np.shape(gmap)}")
        img[boundaries(take_slice(lab, axis, index))] = BOUNDARY
    if scale > 1:
        img = img.repeat(scale, axis=0).repeat(scale, axis=1)
    return img


def ppm_bytes(img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode() + img.tobytes()


def read_ppm(path):
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise ValueError(f"{path} is not an 8-bit binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)


def write_image(path, img):
    """PPM by default; PNG when the suffix asks for it (needs Pillow)."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise InvalidParameterError("PNG output needs Pillow; use a .ppm path") from exc
        Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)
    else:
        path.write_bytes(ppm_bytes(img))

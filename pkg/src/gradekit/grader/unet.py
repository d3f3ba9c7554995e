"""Compact 3D U-Net used as a per-location grading specialist."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import diffcore as dc
from ..errors import ShapeError


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 3
    base_channels: int = 8
    in_channels: int = 1

    def channels(self, level):
        return self.base_channels * 2 ** level

    def to_dict(self):
        return asdict(self)


def _conv_shapes(cfg):
    """Ordered (name, weight shape) for every conv layer.

    Decoder level ``l`` reduces the coarser features to ``channels(l)`` with a
    1x1 conv, upsamples and adds the skip. Inner levels then mix with a
    3x3x3 conv + ReLU; at full resolution the sum feeds the head directly,
    which keeps signed features in front of the tanh.
    """
    shapes = []
    cin = cfg.in_channels
    for lvl in range(cfg.depth):
        cout = cfg.channels(lvl)
        shapes.append((f"enc{lvl}", (cout, cin, 3, 3, 3)))
        cin = cout
    for lvl in reversed(range(cfg.depth - 1)):
        cout = cfg.channels(lvl)
        shapes.append((f"up{lvl}", (cout, cin, 1, 1, 1)))
        if lvl:
            shapes.append((f"dec{lvl}", (cout, cout, 3, 3, 3)))
        cin = cout
    shapes.append(("head", (1, cin, 1, 1, 1)))
    return shapes


def init_params(cfg, rng):
    """He-uniform weights, zero biases, as float32 numpy arrays."""
    params = {}
    for name, shape in _conv_shapes(cfg):
        fan_in = int(np.prod(shape[1:]))
        gain = 0.1 if name == "head" else np.sqrt(2.0)
        bound = gain * np.sqrt(3.0 / fan_in)
        params[f"{name}.weight"] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        params[f"{name}.bias"] = np.zeros(shape[0], dtype=np.float32)
    return params


def check_patch_shape(cfg, patch_dims):
    div = 2 ** (cfg.depth - 1)
    if any(int(d) % div for d in patch_dims):
        raise ShapeError(f"patch dims {tuple(patch_dims)} must be divisible by {div} for depth {cfg.depth}")


def forward(cfg, params, x):
    """Run the network on ``x`` shaped (N, C, X, Y, Z).

    ``params`` maps names to Tensors (or arrays, for inference). The output
    has one channel, the input's spatial shape, and lies in (-1, 1).
    """
    check_patch_shape(cfg, x.shape[2:])
    p = {k: dc.as_tensor(v) for k, v in params.items()}
    skips = []
    h = x
    for lvl in range(cfg.depth):
        if lvl:
            h = dc.maxpool3d_2x(h)
        h = dc.relu(dc.conv3d(h, p[f"enc{lvl}.weight"], p[f"enc{lvl}.bias"], padding=1))
        skips.append(h)
    for lvl in reversed(range(cfg.depth - 1)):
        h = dc.conv3d(h, p[f"up{lvl}.weight"], p[f"up{lvl}.bias"])
        h = dc.add(dc.upsample_nearest3d(h), skips[lvl])
        if lvl:
            h = dc.relu(dc.conv3d(h, p[f"dec{lvl}.weight"], p[f"dec{lvl}.bias"], padding=1))
    return dc.tanh(dc.conv3d(h, p["head.weight"], p["head.bias"]))

"""On-disk ensemble layout: one tensor file per location plus manifest.json."""
from __future__ import annotations

import json
import os
from pathlib import Path

from .. import diffcore as dc
from ..errors import DataError
from .train import GraderModel
from .unet import UNetConfig

MANIFEST = "manifest.json"


INDIVIDUAL = "individual"


def model_filename(grid, j):
    if j is None:
        return f"{INDIVIDUAL}.gkt"
    return f"loc_{grid.location_name(j)}.gkt"


def _entry(grid, model):
    j = model.location
    return {
        "location": j,
        "grid_index": None if j is None else [int(v) for v in grid.grid_index[j]],
        "offset": None if j is None else [int(v) for v in grid.offsets[j]],
        "file": model_filename(grid, j),
        "alpha": model.alpha,
        "parent": model.parent,
        "seed": list(model.seed),
        "init_digest": model.init_digest,
        "final_digest": model.final_digest,
        "epochs": model.epochs,
        "best_epoch": model.best_epoch,
        "best_val_loss": model.best_val_loss,
    }


def _write_json(path, obj):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


class EnsembleStore:
    """Incrementally written ensemble directory (supports resuming)."""

    def __init__(self, root, grid, unet, config_hash, seed, strategy="collective"):
        self.root = Path(root)
        self.grid = grid
        self.meta = {
            "format": "gradekit-ensemble/1",
            "strategy": strategy,
            "config_hash": config_hash,
            "seed": int(seed),
            "k": grid.k,
            "dims": list(grid.dims),
            "patch_dims": list(grid.patch_dims),
            "unet": unet.to_dict(),
            "locations": {},
        }

    def add(self, model):
        self.root.mkdir(parents=True, exist_ok=True)
        dc.save_tensors(self.root / model_filename(self.grid, model.location), model.params)
        key = INDIVIDUAL if model.location is None else str(model.location)
        self.meta["locations"][key] = _entry(self.grid, model)
        _write_json(self.root / MANIFEST, self.meta)

    def write(self):
        self.root.mkdir(parents=True, exist_ok=True)
        _write_json(self.root / MANIFEST, self.meta)


def read_manifest(root):
    path = Path(root) / MANIFEST
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_models(root, meta=None):
    """Models listed in the manifest, keyed by location (``None`` for the
    single model of the individual strategy)."""
    root = Path(root)
    meta = meta or read_manifest(root)
    if meta is None:
        raise DataError(f"{root} has no {MANIFEST}")
    unet = UNetConfig(**meta["unet"])
    models = {}
    for key, e in meta["locations"].items():
        params = dc.load_tensors(root / e["file"])
        if dc.digest(params) != e["final_digest"]:
            raise DataError(f"{e['file']}: parameters do not match the manifest digest")
        loc = None if key == INDIVIDUAL else int(key)
        models[loc] = GraderModel(
            location=loc, params=params, unet=unet, alpha=e["alpha"], parent=e["parent"],
            seed=tuple(e["seed"]), init_digest=e["init_digest"], final_digest=e["final_digest"],
            epochs=e["epochs"], best_epoch=e["best_epoch"],
        )
    return models

"""Experiment configuration: one JSON file drives every command."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .braingraph import GCNConfig
from .errors import ConfigurationError
from .grader.train import TrainConfig
from .grader.unet import UNetConfig
from .phantom import PhantomSpec
from .volgrid import CLASS_NAMES


@dataclass(frozen=True)
class GridConfig:
    patch_dims: tuple = (16, 16, 16)
    k: int = 2
    downsample: int = 2     # 1 keeps the native phantom resolution

    def __post_init__(self):
        object.__setattr__(self, "patch_dims", tuple(int(v) for v in self.patch_dims))
        if len(self.patch_dims) != 3 or min(self.patch_dims) < 1:
            raise ConfigurationError(f"patch_dims must be three positive integers, got {self.patch_dims}")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.downsample not in (1, 2):
            raise ConfigurationError("downsample must be 1 or 2")


@dataclass(frozen=True)
class CohortSpec:
    name: str
    n_per_class: int
    classes: tuple = ("CN", "AD")
    domain_id: int = 0
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.name or "/" in self.name:
            raise ConfigurationError(f"invalid cohort name {self.name!r}")
        if self.n_per_class < 1:
            raise ConfigurationError(f"cohort {self.name}: n_per_class must be >= 1")
        bad = [c for c in self.classes if c not in CLASS_NAMES]
        if bad:
            raise ConfigurationError(f"cohort {self.name}: unknown classes {bad}")


def _default_cohorts():
    return (
        CohortSpec("train", 40, ("CN", "AD"), 0, 0),
        CohortSpec("test", 20, ("CN", "AD"), 0, 1),
        CohortSpec("shifted", 20, ("CN", "AD"), 1, 2),
        CohortSpec("mci", 20, ("sMCI", "pMCI"), 0, 3),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    grid: GridConfig = field(default_factory=GridConfig)
    grader: TrainConfig = field(default_factory=TrainConfig)
    classifier: GCNConfig = field(default_factory=GCNConfig)
    cohorts: tuple = field(default_factory=_default_cohorts)
    seed: int = 0
    threads: int = 1

    def to_dict(self):
        return {
            "phantom": self.phantom.to_dict(),
            "grid": asdict(self.grid),
            "grader": self.grader.to_dict(),
            "classifier": self.classifier.to_dict(),
            "cohorts": [asdict(c) for c in self.cohorts],
            "seed": self.seed,
            "threads": self.threads,
        }

    def canonical_json(self):
        # threads never changes results, so it stays out of the hash
        d = self.to_dict()
        d.pop("threads")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def cohort(self, name):
        for c in self.cohorts:
            if c.name == name:
                return c
        raise ConfigurationError(f"no cohort named {name!r} in the configuration")

    def with_seed(self, seed):
        """Same experiment with every random stream keyed by ``seed``."""
        seed = int(seed)
        ph = PhantomSpec.from_dict({**self.phantom.to_dict(), "seed": seed})
        return replace(self, phantom=ph, grader=replace(self.grader, seed=seed),
                       classifier=replace(self.classifier, seed=seed), seed=seed)


def _build(cls, d, what):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{what} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad {what}: {exc}") from exc


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigurationError("configuration must be a JSON object")
    unknown = set(d) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    kw = {}
    if "phantom" in d:
        try:
            kw["phantom"] = PhantomSpec.from_dict(d["phantom"])
        except TypeError as exc:
            raise ConfigurationError(f"bad phantom section: {exc}") from exc
    if "grid" in d:
        kw["grid"] = _build(GridConfig, d["grid"], "grid")
    if "grader" in d:
        g = dict(d["grader"])
        if "unet" in g:
            g["unet"] = _build(UNetConfig, g["unet"], "grader.unet")
        kw["grader"] = _build(TrainConfig, g, "grader")
    if "classifier" in d:
        kw["classifier"] = _build(GCNConfig, d["classifier"], "classifier")
    if "cohorts" in d:
        kw["cohorts"] = tuple(_build(CohortSpec, c, "cohort") for c in d["cohorts"])
        names = [c.name for c in kw["cohorts"]]
        if len(set(names)) != len(names):
            raise ConfigurationError("cohort names must be unique")
    for key in ("seed", "threads"):
        if key in d:
            if not isinstance(d[key], int) or d[key] < 0:
                raise ConfigurationError(f"{key} must be a non-negative integer")
            kw[key] = d[key]
    cfg = ExperimentConfig(**kw)
    cfg.phantom.validate()
    if cfg.threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return cfg


def load_config(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"configuration file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(d)


def save_config(path, cfg):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

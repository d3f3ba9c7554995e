"""Synthetic preprocessed cohorts with a known disease signature.

Anatomy is a fixed ellipsoid atlas inside an ellipsoidal ICC:

* label 1: background tissue filling the ICC
* label 2: a central CSF compartment
* labels 3..n: mirrored pairs of small ellipsoidal structures

Each subject gets a random global scaling, a smooth displacement field and
per-structure intensity jitter. Diseased subjects have their signature
structures darkened by ``effect_size * effect_unit`` and shrunk by
``atrophy``; the vacated voxels become CSF.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .volgrid import CLASS_NAMES, LabelVolume, Volume, class_sign
from .volio import ManifestRow, write_manifest, write_volume

TISSUE, CSF = 1, 2
TISSUE_INTENSITY, CSF_INTENSITY = 100.0, 30.0
_STRUCT_INTENSITIES = (70.0, 125.0, 85.0, 115.0, 60.0, 135.0, 92.0, 108.0, 75.0, 130.0)

ICC_RADIUS = 0.44         # fraction of each dimension
CSF_RADIUS = 0.22         # in ICC-normalised units
STRUCT_RADIUS = 0.21
_LATERAL = 0.42
_GRID = 0.45


@dataclass
class PhantomSpec:
    dims: tuple = (48, 56, 48)
    n_structures: int = 12
    signature_structures: tuple = (3, 4, 5, 6)
    effect_size: float = 1.0
    atrophy: float = 0.3
    effect_unit: float = 20.0       # intensity drop per unit of effect_size
    noise_sigma: float = 5.0
    structure_sd: float = 2.0       # between-subject intensity spread per structure
    deformation: float = 1.5        # peak smooth displacement, voxels
    blur: float = 0.6
    domain_shift: dict = field(default_factory=lambda: {0: (1.0, 0.0, 1.0), 1: (1.2, 5.0, 1.5)})
    cn_age: tuple = (60.0, 90.0)
    diseased_age: tuple = (65.0, 95.0)
    mci_fraction: dict = field(default_factory=lambda: {"pMCI": 0.6, "sMCI": 0.25})
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.signature_structures = tuple(int(s) for s in self.signature_structures)
        self.cn_age = tuple(float(a) for a in self.cn_age)
        self.diseased_age = tuple(float(a) for a in self.diseased_age)
        self.domain_shift = {int(k): tuple(float(x) for x in v) for k, v in self.domain_shift.items()}

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ConfigurationError(f"phantom dims must be three values >= 8, got {self.dims}")
        if not 3 <= self.n_structures <= 2 + len(_structure_centres()):
            raise ConfigurationError(f"n_structures must be in [3, {2 + len(_structure_centres())}]")
        for s in self.signature_structures:
            if not 1 <= s <= self.n_structures:
                raise ConfigurationError(
                    f"signature structure id {s} outside 1..{self.n_structures}")
        if (self.effect_size > 0 or self.atrophy > 0) and not self.signature_structures:
            raise ConfigurationError("a disease effect needs at least one signature structure")
        if self.effect_size < 0 or not 0 <= self.atrophy < 1:
            raise ConfigurationError("effect_size must be >= 0 and atrophy in [0, 1)")
        for d, (gain, _, mult) in self.domain_shift.items():
            if gain <= 0 or mult < 0:
                raise ConfigurationError(f"domain {d}: gain must be > 0 and noise multiplier >= 0")

    def to_dict(self):
        d = asdict(self)
        d["domain_shift"] = {str(k): list(v) for k, v in self.domain_shift.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "domain_shift" in d:
            d["domain_shift"] = {int(k): tuple(v) for k, v in d["domain_shift"].items()}
        return cls(**d)


@dataclass(frozen=True)
class PhantomSubject:
    subject_id: str
    image: Volume
    labels: LabelVolume
    label: str
    age: float
    domain_id: int


def _structure_centres():
    """Centres (ICC-normalised) of labels 3, 4, ... as mirrored pairs."""
    yz = [(y, z) for y in (-_GRID, 0.0, _GRID) for z in (-_GRID, 0.0, _GRID)]
    yz.sort(key=lambda p: (abs(p[0]) + abs(p[1]), p))
    centres = []
    for y, z in yz:
        centres.append((_LATERAL, y, z))
        centres.append((-_LATERAL, y, z))
    centres += [(0.0, y, z) for y, z in yz if (y, z) != (0.0, 0.0)]
    return centres


def disease_fraction(label, spec):
    if label == "AD":
        return 1.0
    if label == "CN":
        return 0.0
    return float(spec.mci_fraction[label])


def _subject_rng(spec, domain_id, stream, label, index):
    return np.random.default_rng([spec.seed, domain_id, stream, CLASS_NAMES.index(label), index])


def _smooth_field(rng, dims, amplitude):
    """Sum of three random low-frequency sinusoids per axis."""
    axes = [np.arange(d, dtype=np.float64) / d for d in dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    disp = []
    for _ in range(3):
        comp = np.zeros(dims)
        for _ in range(3):
            freq = rng.uniform(0.5, 1.5, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            comp += np.sin(2 * np.pi * (freq[0] * gx + freq[1] * gy + freq[2] * gz) + phase)
        disp.append(comp * amplitude / 3.0)
    return disp


def _render_subject(spec, rng, label):
    dims = spec.dims
    frac = disease_fraction(label, spec)
    centre = np.array([(d - 1) / 2.0 for d in dims])
    radius = np.array([ICC_RADIUS * d for d in dims])
    scale = 1.0 + rng.normal(0, 0.03, size=3)
    shift = rng.normal(0, 0.8, size=3)
    disp = _smooth_field(rng, dims, spec.deformation)
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")
    u = [(grids[a] + disp[a] - centre[a] - shift[a]) / (radius[a] * scale[a]) for a in range(3)]

    def inside(c, r):
        return ((u[0] - c[0]) ** 2 + (u[1] - c[1]) ** 2 + (u[2] - c[2]) ** 2) <= r * r

    icc = inside((0, 0, 0), 1.0)
    labels = np.where(icc, TISSUE, 0).astype(np.int32)
    image = np.where(icc, TISSUE_INTENSITY + rng.normal(0, spec.structure_sd), 0.0)
    csf_level = CSF_INTENSITY + rng.normal(0, spec.structure_sd)
    csf = inside((0, 0, 0), CSF_RADIUS) & icc
    labels[csf] = CSF
    image[csf] = csf_level
    jitter = rng.normal(0, spec.structure_sd, size=spec.n_structures - 2)
    for t, c in enumerate(_structure_centres()[:spec.n_structures - 2]):
        lab = t + 3
        level = _STRUCT_INTENSITIES[(t // 2) % len(_STRUCT_INTENSITIES)] + jitter[t]
        full = inside(c, STRUCT_RADIUS) & icc
        if lab in spec.signature_structures and frac > 0:
            level -= frac * spec.effect_size * spec.effect_unit
            shrink = (1.0 - frac * spec.atrophy) ** (1.0 / 3.0)
            kept = inside(c, STRUCT_RADIUS * shrink) & icc
            labels[full & ~kept] = CSF
            image[full & ~kept] = csf_level
            full = kept
        labels[full] = lab
        image[full] = level
    if spec.blur > 0:
        image = ndimage.gaussian_filter(image, spec.blur)
    image = np.where(icc, image + rng.normal(0, spec.noise_sigma, size=dims), 0.0)
    return image, labels


def apply_domain_shift(vol, gain, bias, noise_mult, rng=None, noise_sigma=0.0):
    """``gain * v + bias`` plus extra Gaussian noise.

    The extra noise has sd ``gain * noise_sigma * sqrt(noise_mult**2 - 1)`` so
    that the acquisition noise ends up ``noise_mult`` times larger; multipliers
    of 0 or 1 add none.
    """
    if gain <= 0:
        raise ConfigurationError(f"domain gain must be positive, got {gain}")
    data = vol.data.astype(np.float64) * gain + bias
    extra = gain * noise_sigma * np.sqrt(max(noise_mult ** 2 - 1.0, 0.0))
    if extra > 0:
        if rng is None:
            raise ConfigurationError("a random generator is needed to add noise")
        data = data + rng.normal(0, extra, size=data.shape)
    return Volume(data.astype(np.float32), vol.spacing)


def make_subject(spec, label, index, domain_id=0, stream=0):
    rng = _subject_rng(spec, domain_id, stream, label, index)
    image, labels = _render_subject(spec, rng, label)
    lo, hi = spec.cn_age if label == "CN" else spec.diseased_age
    age = float(rng.uniform(lo, hi))
    vol = Volume(image.astype(np.float32))
    gain, bias, mult = spec.domain_shift.get(domain_id, (1.0, 0.0, 1.0))
    if (gain, bias, mult) != (1.0, 0.0, 1.0):
        vol = apply_domain_shift(vol, gain, bias, mult, rng, spec.noise_sigma)
    sid = f"d{domain_id}s{stream}-{label}-{index:04d}"
    return PhantomSubject(sid, vol, LabelVolume(labels, spec.n_structures), label, age, domain_id)


def generate_cohort(spec, n_per_class, domain_id=0, classes=("CN", "AD"), stream=0):
    """Class-interleaved subjects (c0 #0, c1 #0, c0 #1, ...).

    Every subject has its own seeded stream, so a cohort of size n is a prefix
    of any larger cohort with the same settings. ``stream`` separates
    independent draws (e.g. training vs held-out) of the same domain.
    """
    spec.validate()
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be at least 1")
    if domain_id not in spec.domain_shift:
        raise ConfigurationError(f"no domain shift defined for domain {domain_id}")
    for c in classes:
        if c not in CLASS_NAMES:
            raise ConfigurationError(f"unknown class {c!r}")
    return [make_subject(spec, c, i, domain_id, stream)
            for i in range(n_per_class) for c in classes]


def oracle_scores(subjects, spec):
    """Mean signature intensity minus mean tissue intensity (bias invariant)."""
    out = []
    for s in subjects:
        lab, img = s.labels.data, s.image.data.astype(np.float64)
        sig = np.isin(lab, spec.signature_structures)
        out.append(img[sig].mean() - img[lab == TISSUE].mean() if sig.any() else 0.0)
    return np.array(out)


def oracle_bacc(subjects, spec):
    """Balanced accuracy of thresholding the oracle score midway between
    class means. Needs both sides of the task present."""
    from .metrics import confusion

    scores = oracle_scores(subjects, spec)
    y = np.array([class_sign(s.label) > 0 for s in subjects])
    if y.all() or not y.any():
        raise ConfigurationError("oracle needs both classes")
    thr = 0.5 * (scores[y].mean() + scores[~y].mean())
    # disease darkens the signature, so low scores predict the positive class
    pred = scores < thr if scores[y].mean() < scores[~y].mean() else scores >= thr
    return confusion(y, pred).bacc


def write_cohort(subjects, out_dir, spec=None):
    """Write volumes plus ``manifest.csv`` (and ``phantom_spec.json``)."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in subjects:
        img = f"images/{s.subject_id}.gkv"
        lab = f"labels/{s.subject_id}.gkv"
        write_volume(out / img, s.image)
        write_volume(out / lab, s.labels)
        rows.append(ManifestRow(s.subject_id, img, lab, s.label, s.age, s.domain_id))
    write_manifest(out / "manifest.csv", rows)
    if spec is not None:
        (out / "phantom_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return out / "manifest.csv"

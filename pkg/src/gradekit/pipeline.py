"""In-memory glue: preprocessing, grading of whole subjects, feature extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import aggregate_structures, reconstruct, structure_volumes
from .grader.train import GradingDataset, predict
from .volgrid import downsample, standardize_intensity


@dataclass(frozen=True)
class Prepared:
    """One subject at working resolution."""

    subject_id: str
    image: np.ndarray       # standardized, float32
    labels: object          # LabelVolume
    label: str
    age: float
    domain_id: int

    @property
    def mask(self):
        return self.labels.icc_mask()


def prepare_subject(subject_id, image, labels, label, age, domain_id=0, factor=2):
    """Downsample image and labels, then standardize intensities over the ICC."""
    if factor == 2:
        image = downsample(image)
        labels = downsample(labels)
    data = standardize_intensity(image, labels.icc_mask())
    return Prepared(subject_id, data, labels, label, float(age), int(domain_id))


def prepare_phantoms(subjects, factor=2):
    return [prepare_subject(s.subject_id, s.image, s.labels, s.label, s.age, s.domain_id, factor)
            for s in subjects]


def to_dataset(prepared):
    return GradingDataset(
        images=np.stack([p.image for p in prepared]),
        masks=np.stack([p.mask for p in prepared]),
        signs=[p.label for p in prepared],
        subject_ids=[p.subject_id for p in prepared],
    )


@dataclass(frozen=True)
class SubjectFeatures:
    subject_id: str
    dg: object              # DGVector
    volumes: np.ndarray
    age: float
    label: str
    domain_id: int
    grading: object = None  # GradingMap


def grade_subject(models, grid, prepared, alphas=None, keep_map=False):
    """Grade every patch of one subject, fuse, and aggregate per structure.

    ``models`` is a list of one model per location, or a single model used at
    every location (the individual strategy). ``alphas`` defaults to the
    models' validation weights.
    """
    if not isinstance(models, (list, tuple)):
        models = [models] * grid.m
    if alphas is None:
        alphas = [m.alpha for m in models]
    gradings = []
    for j in range(grid.m):
        patch = prepared.image[grid.slices(j)][None, None]
        gradings.append(predict(models[j].unet, models[j].params, patch)[0, 0])
    gmap = reconstruct(gradings, alphas, grid, mask=prepared.mask)
    dg = aggregate_structures(gmap, prepared.labels)
    vols = structure_volumes(prepared.labels)
    return SubjectFeatures(prepared.subject_id, dg, vols, prepared.age, prepared.label,
                           prepared.domain_id, gmap if keep_map else None)


def grade_cohort(models, grid, prepared, alphas=None, keep_map=False):
    return [grade_subject(models, grid, p, alphas, keep_map) for p in prepared]


def load_cohort(manifest_path, factor=2):
    """Read every subject of a cohort manifest and prepare it."""
    from .volio import read_manifest, read_volume

    out = []
    for row in read_manifest(manifest_path):
        out.append(prepare_subject(row.subject_id, read_volume(row.image_path),
                                   read_volume(row.labels_path), row.label, row.age,
                                   row.domain_id, factor))
    return out

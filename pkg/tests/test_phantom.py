from __future__ import annotations

import json

import numpy as np
import pytest

from gradekit.errors import ConfigurationError
from gradekit.phantom import (PhantomSpec, apply_domain_shift, generate_cohort, oracle_bacc,
                              write_cohort)
from gradekit.volgrid import Volume
from gradekit.volio import read_manifest, read_volume

SMALL = dict(dims=(24, 28, 24))


def test_deterministic_and_prefix_stable():
    spec = PhantomSpec(**SMALL, seed=3)
    a = generate_cohort(spec, 2)
    b = generate_cohort(PhantomSpec(**SMALL, seed=3), 4)
    for x, y in zip(a, b):
        assert x.subject_id == y.subject_id and x.age == y.age
        assert x.image.data.tobytes() == y.image.data.tobytes()
        assert x.labels.data.tobytes() == y.labels.data.tobytes()
    other = generate_cohort(PhantomSpec(**SMALL, seed=4), 1)
    assert other[0].image.data.tobytes() != a[0].image.data.tobytes()


def test_counts_and_interleaving():
    subs = generate_cohort(PhantomSpec(**SMALL), 3, classes=("sMCI", "pMCI"))
    assert [s.label for s in subs] == ["sMCI", "pMCI"] * 3
    assert len({s.subject_id for s in subs}) == 6


def test_ages_follow_class_ranges():
    subs = generate_cohort(PhantomSpec(**SMALL), 10)
    for s in subs:
        lo, hi = (60, 90) if s.label == "CN" else (65, 95)
        assert lo <= s.age <= hi


def _signature_voxels(subjects, spec):
    return np.array([np.isin(s.labels.data, spec.signature_structures).sum() for s in subjects])


def test_atrophy_shrinks_signature_to_seventy_percent():
    spec = PhantomSpec(effect_size=0.0, atrophy=0.3)
    subs = generate_cohort(spec, 25)
    counts = _signature_voxels(subs, spec)
    ad = counts[[s.label == "AD" for s in subs]].mean()
    cn = counts[[s.label == "CN" for s in subs]].mean()
    assert ad / cn == pytest.approx(0.7, rel=0.05)


def test_null_spec_has_identical_anatomy_statistics():
    spec = PhantomSpec(**SMALL, effect_size=0.0, atrophy=0.0)
    subs = generate_cohort(spec, 1)
    # without disease, AD and CN only differ by their private random streams
    assert np.isin(subs[1].labels.data, spec.signature_structures).any()


@pytest.mark.parametrize("bad", [
    dict(signature_structures=(13,)),
    dict(signature_structures=(), effect_size=1.0),
    dict(atrophy=1.0),
    dict(effect_size=-0.5),
    dict(domain_shift={0: (0.0, 0.0, 1.0)}),
    dict(dims=(4, 28, 24)),
])
def test_invalid_specs(bad):
    with pytest.raises(ConfigurationError):
        generate_cohort(PhantomSpec(**{**SMALL, **bad}), 1)


def test_other_generation_errors():
    spec = PhantomSpec(**SMALL)
    with pytest.raises(ConfigurationError):
        generate_cohort(spec, 0)
    with pytest.raises(ConfigurationError):
        generate_cohort(spec, 1, domain_id=7)
    with pytest.raises(ConfigurationError):
        generate_cohort(spec, 1, classes=("CN", "XX"))


def test_domain_shift_arithmetic():
    vol = Volume(np.full((3, 3, 3), 10.0, np.float32))
    assert np.all(apply_domain_shift(vol, 1.2, 5.0, 0.0).data == np.float32(17.0))
    np.testing.assert_array_equal(apply_domain_shift(vol, 1.0, 0.0, 0.0).data, vol.data)
    np.testing.assert_array_equal(apply_domain_shift(vol, 1.0, 0.0, 1.0).data, vol.data)
    noisy = apply_domain_shift(vol, 1.0, 0.0, 1.5, np.random.default_rng(0), noise_sigma=2.0)
    assert noisy.data.std() > 0
    with pytest.raises(ConfigurationError):
        apply_domain_shift(vol, -1.0, 0.0, 1.0)


def test_shift_leaves_labels_untouched():
    spec = PhantomSpec(**SMALL, domain_shift={0: (1.0, 0.0, 1.0), 1: (1.0, 0.0, 1.0), 2: (1.2, 5.0, 1.5)})
    plain = generate_cohort(spec, 1, domain_id=1)[0]
    shifted = generate_cohort(spec, 1, domain_id=2)[0]
    # domains 1 and 2 share nothing but the shift, so compare each against its own stream
    before = plain.labels.data.tobytes()
    out = apply_domain_shift(plain.image, 1.2, 5.0, 1.5, np.random.default_rng(0), spec.noise_sigma)
    assert plain.labels.data.tobytes() == before and out.dims == plain.image.dims
    assert shifted.image.data[shifted.labels.icc_mask()].mean() > plain.image.data[plain.labels.icc_mask()].mean()


def test_oracle_separability_and_monotonicity():
    baccs = []
    for delta in (0.0, 0.25, 0.5, 1.0):
        spec = PhantomSpec(**SMALL, effect_size=delta, atrophy=0.0, seed=1)
        baccs.append(oracle_bacc(generate_cohort(spec, 20), spec))
    assert baccs[-1] >= 0.95
    assert all(b >= a for a, b in zip(baccs, baccs[1:]))


def test_write_cohort(tmp_path):
    spec = PhantomSpec(**SMALL)
    subs = generate_cohort(spec, 1)
    manifest = write_cohort(subs, tmp_path, spec)
    rows = read_manifest(manifest)
    assert [r.subject_id for r in rows] == [s.subject_id for s in subs]
    assert read_volume(rows[0].image_path).data.tobytes() == subs[0].image.data.tobytes()
    assert PhantomSpec.from_dict(json.loads((tmp_path / "phantom_spec.json").read_text())) == spec
    first = manifest.read_bytes()
    write_cohort(subs, tmp_path, spec)
    assert manifest.read_bytes() == first

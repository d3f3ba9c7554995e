"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria (6 to 9) share trained ensembles through a cache,
so the whole module costs roughly half an hour on one core. Lines are also
collected in ``RESULTS`` and repeated in the pytest terminal summary.
"""
from __future__ import annotations

import functools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import gradcases
from gradekit import braingraph as bg
from gradekit.cli import main as cli_main
from gradekit.ensemble import reconstruct
from gradekit.grader import TrainConfig, schedule_ensemble, train_individual
from gradekit.grader.store import EnsembleStore, load_models
from gradekit.phantom import PhantomSpec, generate_cohort
from gradekit.pipeline import grade_cohort, prepare_phantoms, to_dataset
from gradekit.volgrid import LabelVolume, Volume, axis_offsets, build_patch_grid
from gradekit.volio import volume_bytes, volume_from_bytes

RESULTS: dict[int, str] = {}

# working resolution 24x28x24 after 2x downsampling of the 48x56x48 phantom
PATCH = (16, 16, 16)
K = 2
GRADER_EPOCHS = 30
SEEDS3 = (0, 1, 2)
SEEDS5 = (0, 1, 2, 3, 4)


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


# -- 1: weighted fusion against a per-voxel oracle ---------------------------

def gather_oracle(gradings, alphas, grid):
    """For every voxel, gather the value of each patch through its local
    coordinate and average over the patches whose box contains the voxel."""
    xs = np.indices(grid.dims)
    num = np.zeros(grid.dims)
    den = np.zeros(grid.dims)
    cnt = np.zeros(grid.dims)
    plain = np.zeros(grid.dims)
    for j in range(grid.m):
        local = [xs[a] - grid.offsets[j][a] for a in range(3)]
        inside = np.ones(grid.dims, bool)
        for a in range(3):
            inside &= (local[a] >= 0) & (local[a] < grid.patch_dims[a])
        clipped = [np.clip(local[a], 0, grid.patch_dims[a] - 1) for a in range(3)]
        vals = np.asarray(gradings[j], np.float64)[tuple(clipped)]
        num += np.where(inside, alphas[j] * vals, 0.0)
        den += np.where(inside, alphas[j], 0.0)
        cnt += inside
        plain += np.where(inside, vals, 0.0)
    assert np.all(cnt > 0)
    return np.where(den > 0, num / np.where(den > 0, den, 1), plain / cnt)


def test_criterion_01_fusion_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    start = time.perf_counter()
    n = 0
    while n < 120:
        dims = tuple(int(v) for v in rng.integers(2, 25, 3))
        k = int(rng.integers(1, 4))
        patch = dims if k == 1 else tuple(int(rng.integers(-(-d // k), d + 1)) for d in dims)
        grid = build_patch_grid(dims, patch, k)
        gradings = [rng.uniform(-1, 1, patch).astype(np.float32) for _ in range(grid.m)]
        alphas = rng.uniform(0, 1, grid.m)
        if n % 10 == 0:
            alphas[rng.integers(0, grid.m)] = 0.0
        got = reconstruct(gradings, alphas, grid).data.astype(np.float64)
        worst = max(worst, float(np.abs(got - gather_oracle(gradings, alphas, grid)).max()))
        n += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10
    record(1, ok, f"{n} grids, max |diff| {worst:.2e}, {elapsed:.1f} s")
    assert ok


# -- 2: gradient checks ------------------------------------------------------

def test_criterion_02_gradient_checks():
    start = time.perf_counter()
    worst32 = worst64 = 0.0
    failures = []
    cases = dict(gradcases.OP_CASES)
    cases["unet"] = gradcases.case_unet
    cases["gcn"] = gradcases.case_gcn
    for name, builder in cases.items():
        for seed in range(20):
            if name in ("unet", "gcn"):
                e32 = gradcases.worst_error_f32_vs_f64(builder, seed)
            else:
                e32 = gradcases.worst_error(builder, seed, f64=False)
            e64 = gradcases.worst_error(builder, seed, f64=True)
            worst32, worst64 = max(worst32, e32), max(worst64, e64)
            if e32 >= 1e-2 or e64 >= 1e-4:
                failures.append((name, seed, e32, e64))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    record(2, ok, f"{len(cases)} cases x 20 instances, worst rel err f32 {worst32:.1e} "
                  f"f64 {worst64:.1e}, {elapsed:.0f} s")
    assert ok, failures[:5]


# -- 3: paper geometry -------------------------------------------------------

def test_criterion_03_grid_geometry():
    start = time.perf_counter()
    dims, patch, k = (91, 109, 91), (32, 48, 32), 5
    expected = ([0, 14, 29, 44, 59], [0, 15, 30, 45, 61], [0, 14, 29, 44, 59])
    got = tuple(list(axis_offsets(d, p, k)) for d, p in zip(dims, patch))
    grid = build_patch_grid(dims, patch, k)
    count = np.zeros(dims, np.int32)
    for j in range(grid.m):
        count[grid.slices(j)] += 1
    # independent per-voxel membership test along each axis
    axis_ok = all(
        all(any(o <= v < o + patch[a] for o in expected[a]) for v in range(dims[a]))
        for a in range(3))
    elapsed = time.perf_counter() - start
    ok = got == expected and grid.m == 125 and count.min() >= 1 and axis_ok and elapsed < 5
    record(3, ok, f"offsets {got}, min cover {count.min()}, max cover {count.max()}, "
                  f"{elapsed:.2f} s")
    assert ok


# -- 4: complete-graph GCN algebra ------------------------------------------

def test_criterion_04_gcn_algebra():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_a = worst_rows = worst_perm = 0.0
    cfg = bg.GCNConfig()
    for s in (2, 12, 133):
        ahat = bg.normalized_adjacency(bg.complete_adjacency(s))
        worst_a = max(worst_a, float(np.abs(ahat - 1.0 / s).max()))
        params = bg.init_gcn_params(cfg, rng, np.float64)
        x = rng.normal(size=(s, 3))
        h = x
        for i in range(cfg.layers):
            h = bg.gcn_layer(h, params[f"gcn{i}.weight"], ahat)
            worst_rows = max(worst_rows, float(np.abs(h[:, None, :] - h[None, :, :]).max()))
        norm = bg.FeatureNormalizer(np.zeros(s), np.ones(s), np.zeros(s), np.ones(s), 0.0, 1.0)
        model = bg.GCNClassifier(cfg, {k: v.astype(np.float32) for k, v in params.items()}, norm)
        g = bg.StructureGraph(x, bg.complete_adjacency(s), np.zeros(s, bool))
        p0 = bg.classify(model, g)
        for _ in range(10):
            perm = rng.permutation(s)
            gp = bg.StructureGraph(x[perm], g.adjacency, g.imputed[perm])
            worst_perm = max(worst_perm, abs(bg.classify(model, gp) - p0))
    elapsed = time.perf_counter() - start
    ok = worst_a < 1e-12 and worst_rows < 1e-6 and worst_perm < 1e-6 and elapsed < 5
    record(4, ok, f"|A-1/s| {worst_a:.1e}, row spread {worst_rows:.1e}, "
                  f"permutation drift {worst_perm:.1e}, {elapsed:.2f} s")
    assert ok


# -- shared phantom experiments ---------------------------------------------

def phantom_spec(seed, null=False):
    if null:
        # no signal and identical age ranges, so nothing can separate the classes
        return PhantomSpec(seed=seed, effect_size=0.0, atrophy=0.0, diseased_age=(60.0, 90.0))
    return PhantomSpec(seed=seed)


@functools.lru_cache(maxsize=None)
def cohorts(seed, null=False):
    spec = phantom_spec(seed, null)
    return {
        "train": prepare_phantoms(generate_cohort(spec, 40, 0, stream=0)),
        "test": prepare_phantoms(generate_cohort(spec, 20, 0, stream=1)),
        "shifted": prepare_phantoms(generate_cohort(spec, 20, 1, stream=2)),
        "mci": prepare_phantoms(generate_cohort(spec, 20, 0, classes=("sMCI", "pMCI"), stream=3)),
    }


@functools.lru_cache(maxsize=None)
def experiment(seed, strategy="collective", null=False):
    """Train graders and the GCN for one seed; BACC per evaluation cohort."""
    start = time.perf_counter()
    data = cohorts(seed, null)
    grid = build_patch_grid(data["train"][0].image.shape, PATCH, K)
    cfg = TrainConfig(seed=seed, max_epochs=GRADER_EPOCHS)
    ds = to_dataset(data["train"])
    if strategy == "collective":
        models = schedule_ensemble(grid, ds, cfg)
    else:
        models = train_individual(ds, grid, cfg)
    feats = {name: grade_cohort(models, grid, subs) for name, subs in data.items()}
    clf = bg.train_gcn(feats["train"], bg.GCNConfig(seed=seed))
    bacc = {name: bg.evaluate(clf, feats[name], noisy=True, seed=seed)[0].bacc
            for name in ("test", "shifted", "mci")}
    return bacc, time.perf_counter() - start


# -- 5: transfer chain and thread independence -------------------------------

def test_criterion_05_transfer_chain():
    start = time.perf_counter()
    spec = PhantomSpec(seed=5)
    prep = prepare_phantoms(generate_cohort(spec, 8, 0))
    grid = build_patch_grid(prep[0].image.shape, PATCH, K)
    cfg = TrainConfig(seed=5, max_epochs=3, patience=3)
    ds = to_dataset(prep)
    one = schedule_ensemble(grid, ds, cfg, parallelism=1)
    four = schedule_ensemble(grid, ds, cfg, parallelism=4)
    chain_ok = True
    for m in one:
        if m.parent is None:
            continue
        parent = one[m.parent]
        chain_ok &= all(m.init_params[k].tobytes() == parent.params[k].tobytes() for k in parent.params)
    same = all(a.final_digest == b.final_digest and a.alpha == b.alpha for a, b in zip(one, four))
    same &= all(a.params[k].tobytes() == b.params[k].tobytes() for a, b in zip(one, four) for k in a.params)
    elapsed = time.perf_counter() - start
    roots = sum(m.parent is None for m in one)
    ok = chain_ok and same and roots == 1 and len(one) == 8 and elapsed < 600
    record(5, ok, f"{len(one) - roots} transfers bit-equal: {chain_ok}, 1 vs 4 threads identical: "
                  f"{same}, {elapsed:.0f} s")
    assert ok


# -- 6, 7: end-to-end on the phantom ----------------------------------------

def test_criterion_06_end_to_end():
    runs = [experiment(s) for s in SEEDS3]
    held = float(np.median([r[0]["test"] for r in runs]))
    shifted = float(np.median([r[0]["shifted"] for r in runs]))
    total = sum(r[1] for r in runs)
    ok = held >= 0.90 and shifted >= 0.80 and total <= 3600
    per_seed = ", ".join(f"s{s}: {r[0]['test']:.3f}/{r[0]['shifted']:.3f}" for s, r in zip(SEEDS3, runs))
    record(6, ok, f"median held-out {held:.3f}, shifted {shifted:.3f} ({per_seed}), {total:.0f} s")
    assert ok


def test_criterion_07_unknown_task():
    runs = [experiment(s) for s in SEEDS3]
    med = float(np.median([r[0]["mci"] for r in runs]))
    ok = med >= 0.70
    per_seed = ", ".join(format(r[0]["mci"], ".3f") for r in runs)
    record(7, ok, f"median pMCI/sMCI BACC {med:.3f} ({per_seed})")
    assert ok


# -- 8: null control ---------------------------------------------------------

def test_criterion_08_null_control():
    runs = [experiment(s, null=True) for s in SEEDS5]
    vals = [r[0]["test"] for r in runs]
    mean = float(np.mean(vals))
    ok = 0.38 <= mean <= 0.62
    record(8, ok, f"mean held-out BACC {mean:.3f} over {len(vals)} seeds "
                  f"({', '.join(format(v, '.3f') for v in vals)})")
    assert ok


# -- 9: collective vs individual --------------------------------------------

def test_criterion_09_collective_vs_individual():
    coll = [experiment(s)[0]["shifted"] for s in SEEDS5]
    ind = [experiment(s, "individual")[0]["shifted"] for s in SEEDS5]
    mc, mi = float(np.mean(coll)), float(np.mean(ind))
    ok = mc >= mi - 0.02
    record(9, ok, f"shifted BACC collective {mc:.3f} vs individual {mi:.3f} "
                  f"(gain {100 * (mc - mi):+.1f} points over {len(SEEDS5)} seeds)")
    assert ok


# -- 10: serialization and byte-identical reruns ----------------------------

TINY = {
    "phantom": {"dims": [24, 28, 24]},
    "grid": {"patch_dims": [8, 8, 8], "k": 2},
    "grader": {"max_epochs": 2, "patience": 2, "unet": {"depth": 2, "base_channels": 2}},
    "classifier": {"max_epochs": 10},
    "cohorts": [{"name": "train", "n_per_class": 4},
                {"name": "test", "n_per_class": 2, "stream": 1}],
    "seed": 3,
}

PIPELINE = [
    ["phantom-gen", "--out", "data"],
    ["train-graders", "--cohort", "data/train", "--out", "ens"],
    ["train-graders", "--cohort", "data/train", "--out", "ens_ind", "--strategy", "individual"],
    ["grade", "--ensemble", "ens", "--cohort", "data/train", "--out", "grade/train", "--maps"],
    ["grade", "--ensemble", "ens", "--cohort", "data/test", "--out", "grade/test", "--maps"],
    ["train-classifier", "--features", "grade/train/features.csv", "--labels", "data/train",
     "--out", "clf/gcn.gkt"],
    ["train-classifier", "--features", "grade/train/features.csv", "--labels", "data/train",
     "--out", "clf/lin.gkt", "--baseline", "linear"],
    ["classify", "--model", "clf/gcn.gkt", "--features", "grade/test/features.csv",
     "--labels", "data/test", "--out", "pred/test.csv"],
    ["report", "--predictions", "pred/test.csv", "--labels", "data/test", "--out", "report.csv"],
]


def _run_pipeline(workdir):
    workdir.mkdir()
    (workdir / "cfg.json").write_text(json.dumps(TINY))
    cwd = os.getcwd()
    os.chdir(workdir)
    try:
        codes = [cli_main(argv + ["--config", "cfg.json"]) for argv in PIPELINE]
        maps = sorted(str(p) for p in Path("grade/test/maps").glob("*_grading.gkv"))
        codes.append(cli_main(["render", "--map", maps[0], "--slice", "3", "--out", "fig/a.ppm"]))
    finally:
        os.chdir(cwd)
    return codes, {str(p.relative_to(workdir)): p.read_bytes()
                   for p in sorted(workdir.rglob("*")) if p.is_file()}


def test_criterion_10_serialization(tmp_path):
    rng = np.random.default_rng(10)
    vol_ok = True
    for _ in range(20):
        dims = tuple(int(v) for v in rng.integers(1, 9, 3))
        v = Volume(rng.normal(size=dims).astype(np.float32), tuple(rng.uniform(0.5, 2, 3)))
        lab = LabelVolume(rng.integers(0, 6, dims).astype(np.int32), 5)
        for x in (v, lab):
            blob = volume_bytes(x)
            back = volume_from_bytes(blob)
            vol_ok &= back.data.tobytes() == np.asarray(x.data).tobytes() and volume_bytes(back) == blob

    codes_a, files_a = _run_pipeline(tmp_path / "a")
    codes_b, files_b = _run_pipeline(tmp_path / "b")
    differing = sorted(k for k in files_a if files_a[k] != files_b.get(k))

    model_ok = True
    models = load_models(tmp_path / "a/ens")
    store_root = tmp_path / "copy"
    meta = json.loads((tmp_path / "a/ens/manifest.json").read_text())
    grid = build_patch_grid(meta["dims"], meta["patch_dims"], meta["k"])
    store = EnsembleStore(store_root, grid, models[0].unet, meta["config_hash"], meta["seed"])
    for j in sorted(models):
        store.add(models[j])
    written = sorted(store_root.glob("loc_*.gkt"))
    model_ok &= len(written) == grid.m
    for path in written:
        model_ok &= path.read_bytes() == files_a[f"ens/{path.name}"]
    for clf_name in ("gcn", "lin"):
        clf = bg.load_classifier(tmp_path / f"a/clf/{clf_name}.gkt")
        bg.save_classifier(tmp_path / f"{clf_name}.gkt", clf)
        model_ok &= (tmp_path / f"{clf_name}.gkt").read_bytes() == files_a[f"clf/{clf_name}.gkt"]
    ok = vol_ok and model_ok and set(codes_a + codes_b) == {0} and not differing \
        and files_a.keys() == files_b.keys()
    record(10, ok, f"volume round trips {vol_ok}, model round trips {model_ok}, "
                   f"{len(files_a)} output files from {len(PIPELINE) + 1} commands, "
                   f"{len(differing)} differ between reruns")
    assert ok, differing[:5]


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

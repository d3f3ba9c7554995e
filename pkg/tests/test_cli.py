from __future__ import annotations

import csv
import json

import pytest

from gradekit import diffcore as dc
from gradekit.cli import main, report_rows
from gradekit.errors import DataError
from gradekit.volio import read_volume

TINY = {
    "phantom": {"dims": [24, 28, 24]},
    "grid": {"patch_dims": [8, 8, 8], "k": 2},
    "grader": {"max_epochs": 2, "patience": 2, "unet": {"depth": 2, "base_channels": 2}},
    "classifier": {"max_epochs": 10},
    "cohorts": [{"name": "train", "n_per_class": 4},
                {"name": "test", "n_per_class": 2, "stream": 1},
                {"name": "mci", "n_per_class": 2, "classes": ["sMCI", "pMCI"], "stream": 3}],
    "seed": 1,
}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full command chain on the tiny configuration; returns the work dir."""
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    c = ("--config", cfg)
    assert run("phantom-gen", *c, "--out", d / "data") == 0
    assert run("train-graders", *c, "--cohort", d / "data/train", "--out", d / "ens") == 0
    for name in ("train", "test", "mci"):
        assert run("grade", *c, "--ensemble", d / "ens", "--cohort", d / f"data/{name}",
                   "--out", d / f"grade/{name}", "--maps") == 0
    assert run("train-classifier", *c, "--features", d / "grade/train/features.csv",
               "--labels", d / "data/train", "--out", d / "clf/gcn.gkt") == 0
    for name in ("test", "mci"):
        assert run("classify", *c, "--model", d / "clf/gcn.gkt", "--features",
                   d / f"grade/{name}/features.csv", "--labels", d / f"data/{name}",
                   "--out", d / f"pred/{name}.csv") == 0
    return d


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_phantom_gen_counts(pipeline):
    rows = _rows(pipeline / "data/train/manifest.csv")
    assert [r["class"] for r in rows].count("AD") == 4 and len(rows) == 8
    run_rec = json.loads((pipeline / "data/run.json").read_text())
    assert len(run_rec["config_hash"]) == 64 and run_rec["seed"] == 1


def test_ensemble_has_eight_models(pipeline):
    assert len(list((pipeline / "ens").glob("loc_*.gkt"))) == 8
    meta = json.loads((pipeline / "ens/manifest.json").read_text())
    assert len(meta["locations"]) == 8
    assert all(0 <= e["alpha"] <= 1 for e in meta["locations"].values())


def test_grade_outputs(pipeline):
    rows = _rows(pipeline / "grade/test/features.csv")
    assert len(rows) == 4 * 12
    sid = rows[0]["subject_id"]
    gmap = read_volume(pipeline / f"grade/test/maps/{sid}_grading.gkv").data
    assert gmap.min() >= -1 and gmap.max() <= 1


def test_predictions_and_class_names(pipeline):
    pred = _rows(pipeline / "pred/test.csv")
    assert list(pred[0]) == ["subject_id", "probability", "predicted_class"]
    assert {r["predicted_class"] for r in pred} <= {"CN", "AD"}
    mci = _rows(pipeline / "pred/mci.csv")
    assert {r["predicted_class"] for r in mci} <= {"sMCI", "pMCI"}


def test_report(pipeline, capsys):
    out = pipeline / "report.csv"
    assert run("report", "--predictions", pipeline / "pred/test.csv",
               "--labels", pipeline / "data/test", "--out", out) == 0
    rows = _rows(out)
    assert rows[0]["group"] == "0" and int(rows[0]["n"]) == 4
    assert run("report", "--predictions", pipeline / "pred/test.csv",
               "--labels", pipeline / "data/mci") == 3


def test_report_rows_aggregate_runs():
    labels = {"a": ("AD", 0), "b": ("CN", 0)}
    rows = report_rows([[("a", "AD"), ("b", "CN")], [("a", "CN"), ("b", "CN")]], labels)
    assert rows[0][-1] == 100.0 and rows[1][-1] == 50.0
    assert rows[2][1] == "mean" and rows[2][-1] == 75.0
    with pytest.raises(DataError):
        report_rows([[("a", "AD")]], labels)


def test_reruns_are_byte_identical(pipeline, tmp_path):
    c = ("--config", pipeline / "cfg.json")
    assert run("phantom-gen", *c, "--out", tmp_path / "data", "--cohorts", "test") == 0
    assert (tmp_path / "data/test/manifest.csv").read_bytes() == \
        (pipeline / "data/test/manifest.csv").read_bytes()
    assert run("grade", *c, "--ensemble", pipeline / "ens", "--cohort", pipeline / "data/test",
               "--out", tmp_path / "g") == 0
    assert (tmp_path / "g/features.csv").read_bytes() == \
        (pipeline / "grade/test/features.csv").read_bytes()
    assert run("classify", *c, "--model", pipeline / "clf/gcn.gkt", "--features",
               pipeline / "grade/test/features.csv", "--labels", pipeline / "data/test",
               "--out", tmp_path / "p.csv") == 0
    assert (tmp_path / "p.csv").read_bytes() == (pipeline / "pred/test.csv").read_bytes()


def test_resume_skips_finished_locations(pipeline, tmp_path, caplog):
    import shutil
    shutil.copytree(pipeline / "ens", tmp_path / "ens")
    before = {p.name: p.read_bytes() for p in (tmp_path / "ens").glob("*.gkt")}
    with caplog.at_level("INFO", logger="gradekit"):
        assert run("train-graders", "--config", pipeline / "cfg.json", "--cohort",
                   pipeline / "data/train", "--out", tmp_path / "ens") == 0
    assert "already trained" in caplog.text
    assert before == {p.name: p.read_bytes() for p in (tmp_path / "ens").glob("*.gkt")}
    # a different configuration must not reuse the directory
    assert run("train-graders", "--config", pipeline / "cfg.json", "--seed", 9, "--cohort",
               pipeline / "data/train", "--out", tmp_path / "ens") == 2


def test_linear_baseline_and_no_noise(pipeline, tmp_path):
    c = ("--config", pipeline / "cfg.json")
    assert run("train-classifier", *c, "--baseline", "linear", "--features",
               pipeline / "grade/train/features.csv", "--labels", pipeline / "data/train",
               "--out", tmp_path / "lin.gkt") == 0
    assert json.loads((tmp_path / "lin.json").read_text())["kind"] == "linear"
    assert run("classify", *c, "--no-noise", "--threshold", 0.5, "--model", tmp_path / "lin.gkt",
               "--features", pipeline / "grade/test/features.csv", "--labels",
               pipeline / "data/test", "--out", tmp_path / "p.csv") == 0
    assert len(_rows(tmp_path / "p.csv")) == 4


def test_classifier_round_trip_is_bit_exact(pipeline):
    blob = (pipeline / "clf/gcn.gkt").read_bytes()
    assert dc.dumps_tensors(dc.loads_tensors(blob)) == blob


def test_render(pipeline, tmp_path):
    maps = sorted((pipeline / "grade/test/maps").glob("*_grading.gkv"))
    lab = str(maps[0]).replace("_grading", "_labels")
    assert run("render", "--map", maps[0], "--labels", lab, "--slice", 5,
               "--out", tmp_path / "a.ppm") == 0
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")
    assert run("render", "--map", *maps, "--group-mean", "--slice", 5, "--scale", 1,
               "--out", tmp_path / "b.ppm") == 0
    assert run("render", "--map", maps[0], "--slice", 99, "--out", tmp_path / "c.ppm") == 2
    assert run("render", "--map", *maps[:2], "--slice", 1, "--out", tmp_path / "d.ppm") == 2


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"phantom": {"signature_structures": [40]}}))
    assert run("phantom-gen", "--config", bad, "--out", tmp_path / "x") == 2
    assert run("phantom-gen", "--config", tmp_path / "missing.json", "--out", tmp_path / "x") == 2
    assert run("grade", "--ensemble", tmp_path, "--cohort", tmp_path, "--out", tmp_path / "g") == 3
    assert run("report", "--predictions", tmp_path / "none.csv", "--labels", tmp_path) == 3
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_repeats_write_one_output_per_seed(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "cohorts": [{"name": "test", "n_per_class": 1}]}))
    assert run("phantom-gen", "--config", cfg, "--seed", 3, "--repeats", 2, "--out", tmp_path / "d") == 0
    a = (tmp_path / "d/seed_3/test/manifest.csv").read_text()
    b = (tmp_path / "d/seed_4/test/manifest.csv").read_text()
    assert a.splitlines()[0] == b.splitlines()[0] and a != b
    assert json.loads((tmp_path / "d/seed_4/run.json").read_text())["seed"] == 4

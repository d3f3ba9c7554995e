"""Command-line entry point: ``gradekit <command> [options]``.

Exit codes: 0 success, 2 configuration or argument error, 3 data error,
4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import braingraph as bg
from .config import ExperimentConfig, load_config
from .ensemble import read_feature_table, write_feature_table
from .errors import ConfigurationError, DataError, GradekitError
from .grader.schedule import schedule_ensemble
from .grader.store import EnsembleStore, load_models, read_manifest
from .grader.train import train_individual
from .metrics import confusion, summarize
from .phantom import generate_cohort, write_cohort
from .pipeline import SubjectFeatures, grade_subject, load_cohort, to_dataset
from .render import group_mean, render_slice, write_image
from .volgrid import POSITIVE_CLASSES, build_patch_grid
from .volio import read_manifest as read_cohort_manifest
from .volio import read_volume, write_volume

log = logging.getLogger("gradekit")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_record(command, cfg, **extra):
    return {"command": command, "config_hash": cfg.hash(), "seed": cfg.seed, **extra}


def _seeded_path(path, seed, repeats):
    """Output path for one repetition: ``dir/seed_<s>`` or ``stem_seed<s>.ext``."""
    path = Path(path)
    if repeats <= 1:
        return path
    if path.suffix:
        return path.with_name(f"{path.stem}_seed{seed}{path.suffix}")
    return path / f"seed_{seed}"


def _seeded_input(path, seed, repeats):
    """Input written by a repeated run if it exists, otherwise ``path`` itself."""
    cand = _seeded_path(path, seed, repeats)
    return cand if cand.exists() else Path(path)


def _cohort_manifest(path):
    path = Path(path)
    manifest = path / "manifest.csv" if path.is_dir() else path
    if not manifest.exists():
        raise DataError(f"no cohort manifest at {manifest}")
    return manifest


# -- commands ---------------------------------------------------------------

def cmd_phantom_gen(args, cfg):
    out = Path(args.out)
    names = args.cohorts or [c.name for c in cfg.cohorts]
    for name in names:
        c = cfg.cohort(name)
        subjects = generate_cohort(cfg.phantom, c.n_per_class, c.domain_id, c.classes, c.stream)
        write_cohort(subjects, out / name, cfg.phantom)
        log.info("cohort %s: %d subjects -> %s", name, len(subjects), out / name)
    _write_json(out / "run.json", _run_record("phantom-gen", cfg, cohorts=names))


def _grid_for(cfg, prepared):
    return build_patch_grid(prepared[0].image.shape, cfg.grid.patch_dims, cfg.grid.k)


def cmd_train_graders(args, cfg):
    prepared = load_cohort(_cohort_manifest(args.cohort), cfg.grid.downsample)
    grid = _grid_for(cfg, prepared)
    dataset = to_dataset(prepared)
    out = Path(args.out)
    store = EnsembleStore(out, grid, cfg.grader.unet, cfg.hash(), cfg.seed, args.strategy)
    existing = {}
    old = read_manifest(out)
    if old is not None:
        if old.get("config_hash") != cfg.hash() or old.get("strategy", "collective") != args.strategy:
            raise ConfigurationError(
                f"{out} holds an ensemble for a different configuration; use a fresh directory")
        existing = load_models(out, old)
        store.meta["locations"] = dict(old["locations"])
        log.info("resuming: %d location(s) already trained", len(existing))
    if args.strategy == "individual":
        if None not in existing:
            store.add(train_individual(dataset, grid, cfg.grader))
        store.write()
        return
    if len(existing) == grid.m:
        log.info("all %d locations already trained", grid.m)
    schedule_ensemble(grid, dataset, cfg.grader, parallelism=args.threads or cfg.threads,
                      existing=existing, on_done=store.add)
    store.write()


def _load_grader_models(root):
    meta = read_manifest(root)
    if meta is None:
        raise DataError(f"{root} is not an ensemble directory")
    models = load_models(root, meta)
    if meta.get("strategy") == "individual":
        if None not in models:
            raise DataError(f"{root}: individual model missing")
        return meta, models[None]
    m = len(meta["locations"])
    if sorted(models) != list(range(m)) or m != meta["k"] ** 3:
        raise DataError(f"{root}: ensemble is incomplete ({len(models)} of {meta['k'] ** 3} locations)")
    return meta, [models[j] for j in range(m)]


def cmd_grade(args, cfg):
    meta, models = _load_grader_models(args.ensemble)
    prepared = load_cohort(_cohort_manifest(args.cohort), cfg.grid.downsample)
    grid = build_patch_grid(prepared[0].image.shape, meta["patch_dims"], meta["k"])
    if list(grid.dims) != meta["dims"]:
        raise DataError(f"cohort dims {grid.dims} differ from the ensemble's {tuple(meta['dims'])}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keep = bool(args.maps)
    with ThreadPoolExecutor(max_workers=max(1, args.threads or cfg.threads)) as pool:
        feats = list(pool.map(lambda p: grade_subject(models, grid, p, keep_map=keep), prepared))
    write_feature_table(out / "features.csv", [(f.subject_id, f.dg, f.volumes) for f in feats])
    if keep:
        (out / "maps").mkdir(exist_ok=True)
        for f, p in zip(feats, prepared):
            write_volume(out / "maps" / f"{f.subject_id}_grading.gkv", f.grading.volume)
            write_volume(out / "maps" / f"{f.subject_id}_labels.gkv", p.labels)
    _write_json(out / "grade.json", _run_record(
        "grade", cfg, ensemble_config_hash=meta["config_hash"], ensemble_seed=meta["seed"],
        strategy=meta.get("strategy", "collective"), subjects=len(feats)))


def _samples(features_path, labels_path):
    table = read_feature_table(features_path)
    rows = {r.subject_id: r for r in read_cohort_manifest(_cohort_manifest(labels_path))}
    missing = [sid for sid in table if sid not in rows]
    if missing:
        raise DataError(f"subjects without labels: {missing[:5]}")
    return [SubjectFeatures(sid, dg, vols, rows[sid].age, rows[sid].label, rows[sid].domain_id)
            for sid, (dg, vols) in table.items()]


def cmd_train_classifier(args, cfg):
    samples = _samples(args.features, args.labels)
    train = bg.train_linear_baseline if args.baseline == "linear" else bg.train_gcn
    model = train(samples, cfg.classifier)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bg.save_classifier(out, model)
    meta = json.loads(out.with_suffix(".json").read_text())
    meta.update(_run_record("train-classifier", cfg, subjects=len(samples)))
    _write_json(out.with_suffix(".json"), meta)


def _class_names(samples):
    labels = {s.label for s in samples}
    if labels & {"sMCI", "pMCI"}:
        return ("sMCI", "pMCI")
    return ("CN", "AD")


def cmd_classify(args, cfg):
    model = bg.load_classifier(args.model)
    samples = _samples(args.features, args.labels)
    graphs = model.graphs(samples)
    if args.no_noise:
        probs = bg.classify_batch(model, graphs)
    else:
        probs = bg.classify_with_noise(model, graphs, seed=cfg.seed)
    names = _class_names(samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(bg.PREDICTION_COLUMNS)
        for s, p in zip(samples, probs):
            w.writerow([s.subject_id, repr(float(p)), names[int(p >= args.threshold)]])
    _write_json(out.with_suffix(".json"), _run_record(
        "classify", cfg, model=str(args.model), threshold=args.threshold))


REPORT_COLUMNS = ("group", "run", "n", "tp", "fn", "tn", "fp", "sensitivity", "specificity", "bacc")


def report_rows(predictions, labels, group_by="domain"):
    """Metric rows per group and run; BACC, sensitivity and specificity in %.

    ``predictions`` is a list of runs, each a list of (subject_id, predicted_class).
    """
    runs = []
    for r, preds in enumerate(predictions):
        groups = {}
        ids = [sid for sid, _ in preds]
        if sorted(ids) != sorted(labels):
            raise DataError(f"run {r}: prediction subjects do not match the labels")
        for sid, cls in preds:
            label, domain = labels[sid]
            key = str(domain) if group_by == "domain" else "all"
            groups.setdefault(key, ([], []))
            groups[key][0].append(label in POSITIVE_CLASSES)
            groups[key][1].append(cls in POSITIVE_CLASSES)
        if group_by == "domain" and len(groups) > 1:
            groups["all"] = tuple(sum((g[i] for g in groups.values()), []) for i in (0, 1))
        runs.append({k: confusion(t, p) for k, (t, p) in groups.items()})
    rows = []
    for key in sorted(runs[0]):
        baccs = []
        for r, run in enumerate(runs):
            m = run[key]
            baccs.append(100 * m.bacc)
            rows.append([key, r, m.n, m.tp, m.fn, m.tn, m.fp,
                         100 * m.sensitivity, 100 * m.specificity, 100 * m.bacc])
        if len(runs) > 1:
            mean, std = summarize(baccs)
            rows.append([key, "mean", "", "", "", "", "", "", "", mean])
            rows.append([key, "std", "", "", "", "", "", "", "", std])
    return rows


def cmd_report(args, cfg):
    labels = {r.subject_id: (r.label, r.domain_id)
              for r in read_cohort_manifest(_cohort_manifest(args.labels))}
    paths = []
    for p in args.predictions:
        if args.repeats > 1:
            paths += [_seeded_input(p, cfg.seed + i, args.repeats) for i in range(args.repeats)]
        else:
            paths.append(Path(p))
    runs = []
    for p in paths:
        try:
            runs.append([(sid, cls) for sid, _, cls in bg.read_predictions(p)])
        except FileNotFoundError as exc:
            raise DataError(f"predictions file {p} not found") from exc
    rows = report_rows(runs, labels, args.group_by)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([f"{v:.4f}" if isinstance(v, float) else v for v in row])
    finally:
        if args.out:
            fh.close()


def cmd_render(args, cfg):
    maps = [read_volume(p).data for p in args.map]
    if len(maps) > 1 and not args.group_mean:
        raise ConfigurationError("several maps given; pass --group-mean to average them")
    data = group_mean(maps) if args.group_mean else maps[0]
    labels = read_volume(args.labels).data if args.labels else None
    img = render_slice(data, args.axis, args.slice, labels, scale=args.scale)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, img)


COMMANDS = {
    "phantom-gen": cmd_phantom_gen,
    "train-graders": cmd_train_graders,
    "grade": cmd_grade,
    "train-classifier": cmd_train_classifier,
    "classify": cmd_classify,
    "report": cmd_report,
    "render": cmd_render,
}

# path arguments rewritten per seed when --repeats > 1
_REPEAT_OUTPUTS = {"phantom-gen": ("out",), "train-graders": ("out",), "grade": ("out",),
                   "train-classifier": ("out",), "classify": ("out",)}
_REPEAT_INPUTS = {"train-graders": ("cohort",), "grade": ("ensemble", "cohort"),
                  "train-classifier": ("features", "labels"),
                  "classify": ("model", "features", "labels")}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (JSON)")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--repeats", type=int, default=1,
                        help="repeat over seeds seed..seed+N-1, one output per seed")
    common.add_argument("--log-level", default="INFO")

    p = argparse.ArgumentParser(prog="gradekit", description="Deep grading on structure graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom-gen", parents=[common], help="generate phantom cohorts")
    s.add_argument("--out", required=True)
    s.add_argument("--cohorts", nargs="*", help="cohort names (default: all in the config)")

    s = sub.add_parser("train-graders", parents=[common], help="train the grader ensemble")
    s.add_argument("--cohort", required=True, help="cohort directory or manifest.csv")
    s.add_argument("--out", required=True)
    s.add_argument("--strategy", choices=("collective", "individual"), default="collective")

    s = sub.add_parser("grade", parents=[common], help="grade a cohort, write DG features")
    s.add_argument("--ensemble", required=True)
    s.add_argument("--cohort", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--maps", action="store_true", help="also write grading and label volumes")

    s = sub.add_parser("train-classifier", parents=[common], help="train the GCN (or baseline)")
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True, help="cohort manifest with class and age")
    s.add_argument("--out", required=True)
    s.add_argument("--baseline", choices=("linear",), help="train the linear baseline instead")

    s = sub.add_parser("classify", parents=[common], help="predict classes")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True, help="cohort manifest (ages)")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--no-noise", action="store_true", help="skip inference-time noise averaging")

    s = sub.add_parser("report", parents=[common], help="balanced accuracy and confusion metrics")
    s.add_argument("--predictions", nargs="+", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--group-by", choices=("domain", "none"), default="domain")
    s.add_argument("--out")

    s = sub.add_parser("render", parents=[common], help="render a grading-map slice")
    s.add_argument("--map", nargs="+", required=True)
    s.add_argument("--labels")
    s.add_argument("--axis", type=int, default=2)
    s.add_argument("--slice", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--group-mean", action="store_true")
    s.add_argument("--scale", type=int, default=4)
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None and args.threads < 1:
        raise ConfigurationError("threads must be >= 1")
    if args.repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    return cfg


def run(args):
    cfg = _config(args)
    fn = COMMANDS[args.command]
    if args.repeats <= 1 or args.command in ("report", "render"):
        fn(args, cfg)
        return
    base = cfg.seed
    for i in range(args.repeats):
        seed = base + i
        a = argparse.Namespace(**vars(args))
        for name in _REPEAT_OUTPUTS.get(args.command, ()):
            setattr(a, name, str(_seeded_path(getattr(args, name), seed, args.repeats)))
        for name in _REPEAT_INPUTS.get(args.command, ()):
            setattr(a, name, str(_seeded_input(getattr(args, name), seed, args.repeats)))
        log.info("repeat %d/%d (seed %d)", i + 1, args.repeats, seed)
        fn(a, cfg.with_seed(seed))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run(args)
    except GradekitError as exc:
        print(f"gradekit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        # unreadable inputs and malformed values coming from files
        print(f"gradekit: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        log.exception("internal error")
        print(f"gradekit: internal error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())

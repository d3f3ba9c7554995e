"""
From phantom volumes to a diagnosis
===================================

The whole method in one script, at a reduced size so it runs in a few
minutes on one core:

1. generate training, held-out, domain-shifted and MCI cohorts
2. train the k=2 collective ensemble of patch graders
3. grade every subject and pool the map per structure
4. train the graph classifier on (grading, volume, age) and a linear baseline
5. evaluate, and render the group-mean grading maps

Raise ``EPOCHS`` and ``N`` for the full acceptance configuration
(30 epochs, 40 subjects per class).
"""
import time

import numpy as np

from gradekit import braingraph as bg
from gradekit.grader import TrainConfig, schedule_ensemble
from gradekit.phantom import PhantomSpec, generate_cohort
from gradekit.pipeline import grade_cohort, prepare_phantoms, to_dataset
from gradekit.render import group_mean, render_slice, write_image
from gradekit.volgrid import build_patch_grid

EPOCHS, N = 12, 20
spec = PhantomSpec(seed=0)
data = {
    "train": prepare_phantoms(generate_cohort(spec, N, 0, stream=0)),
    "test": prepare_phantoms(generate_cohort(spec, 20, 0, stream=1)),
    "shifted": prepare_phantoms(generate_cohort(spec, 20, 1, stream=2)),
    "mci": prepare_phantoms(generate_cohort(spec, 20, 0, classes=("sMCI", "pMCI"), stream=3)),
}
grid = build_patch_grid(data["train"][0].image.shape, (16, 16, 16), 2)
print(f"working volume {grid.dims}, {grid.m} patch locations")

t = time.perf_counter()
models = schedule_ensemble(grid, to_dataset(data["train"]), TrainConfig(seed=0, max_epochs=EPOCHS))
print(f"ensemble trained in {time.perf_counter() - t:.0f} s")
for m in models:
    print(f"  {grid.location_name(m.location)}  alpha {m.alpha:.3f}  epochs {m.epochs} (best {m.best_epoch})")

feats = {name: grade_cohort(models, grid, subs, keep_map=(name == "test"))
         for name, subs in data.items()}

gcn = bg.train_gcn(feats["train"], bg.GCNConfig(seed=0))
lin = bg.train_linear_baseline(feats["train"], bg.GCNConfig(seed=0))
print("\nBACC        GCN    linear")
for name in ("test", "shifted", "mci"):
    a = bg.evaluate(gcn, feats[name])[0].bacc
    b = bg.evaluate(lin, feats[name], noisy=False)[0].bacc
    print(f"{name:9s}  {a:.3f}  {b:.3f}")

# Group-mean grading maps: warm where the ensemble sees disease.
test = feats["test"]
for label in ("CN", "AD"):
    maps = [f.grading.data for f in test if f.label == label]
    mean = group_mean(maps)
    sig = np.isin(data["test"][0].labels.data, spec.signature_structures)
    print(f"{label}: mean grading over signature structures {mean[sig].mean():+.3f}")
    write_image(f"group_{label}.ppm", render_slice(mean, 2, mean.shape[2] // 2,
                                                   data["test"][0].labels.data, scale=8))
print("wrote group_CN.ppm and group_AD.ppm")

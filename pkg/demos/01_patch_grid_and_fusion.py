"""
Patch grids, transfer order and weighted fusion
===============================================

A volume is covered by k^3 overlapping patches. Each patch location gets its
own grader, trained in an order where every model starts from a neighbour
that is already finished. At inference the patch gradings are fused voxel by
voxel, weighting each patch by its validation accuracy.
"""
import numpy as np

from gradekit.ensemble import reconstruct
from gradekit.volgrid import axis_offsets, build_patch_grid

# The geometry used on full-size MNI volumes: 5 offsets per axis.
for dim, patch in ((91, 32), (109, 48), (91, 32)):
    print(f"axis {dim:3d}, patch {patch}: offsets {list(axis_offsets(dim, patch, 5))}")

# A desk-scale grid: the 24x28x24 working volume with 16^3 patches and k=2.
grid = build_patch_grid((24, 28, 24), (16, 16, 16), 2)
print(f"\n{grid.m} locations")
for j in range(grid.m):
    parent = grid.parents[j]
    src = "random init" if parent is None else f"copy of {grid.location_name(parent)}"
    print(f"  {grid.location_name(j)}  offset {grid.offsets[j]}  <- {src}")

# Fusion: two patches overlap along a line. Where both cover a voxel the
# result leans towards the more accurate patch.
line = build_patch_grid((3, 1, 1), (2, 1, 1), 2)
first = line.grid_index[:, 0] == 0
gradings = [np.full((2, 1, 1), 1.0 if f else -0.5) for f in first]
alphas = np.where(first, 0.8, 0.6)
fused = reconstruct(gradings, alphas, line).data[:, 0, 0]
print("\nfused line:", np.round(fused, 5))
print("middle voxel by hand:", round((0.8 * 1.0 + 0.6 * -0.5) / (0.8 + 0.6), 5))

# Every fused value is a convex combination of the patch values covering it.
rng = np.random.default_rng(0)
g = [rng.uniform(-1, 1, grid.patch_dims) for _ in range(grid.m)]
out = reconstruct(g, rng.uniform(0.5, 1.0, grid.m), grid).data
print(f"\nrandom gradings fused into [{out.min():.3f}, {out.max():.3f}]")

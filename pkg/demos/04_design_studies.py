"""Choosing a detector: conductivity, thickness and adhesion.

Runs a coarse 5 x 5 conductivity map, the thickness comparison against a
thin shell, and one adhesion case.  Pass ``--full`` to use the full mesh
resolution (several minutes).
"""
import sys

import numpy as np

from tomotactile import SimConfig, SweepGrid, run_performance_map, run_thickness_study
from tomotactile.geometry import AdhesionSpec
from tomotactile.studies import block_current, mean_position_error, shared_solver

full = "--full" in sys.argv
cfg = SimConfig() if full else SimConfig().scaled(0.5)
np.set_printoptions(precision=3, suppress=True)

res = run_performance_map(SweepGrid.default(n=5), cfg)
print(f"performance map on {cfg.divisions} in {res.timings['total_s']:.1f} s")
print("axis (S/m):", res.grid.sigma_low)
for m in ("sens", "fmax", "pa"):
    print(f"{m} (rows: bottom layer, cols: top layer)\n{res.raw(m)}")
print("balanced score on the uniform diagonal:", np.diag(res.balanced_score()))

rows, _ = run_thickness_study((1, 2, 4, 8, 16), SimConfig())
for r in rows:
    print(f"thickness {r.thickness:4.0f} mm: corr {r.correlation:.4f}  MAE {r.mae:.4f}")

jac, solver = shared_solver(SimConfig())
for n in (5, 7):
    spec = AdhesionSpec(n, 7.22)
    err = mean_position_error(SimConfig(), spec, jac, solver)
    total, _ = block_current(SimConfig(), spec)
    print(f"{n}x{n} dots of 7.22 mm: position error {err:.2f} mm, block current {total:.4f} A")

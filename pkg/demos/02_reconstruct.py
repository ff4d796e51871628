"""From a frame back to a picture of where the press happened.

The sensitivity matrix is computed once on a thin shell.  Regularized
least squares then turns any frame into a per-triangle image whose
centroid estimates the contact position.

Frames from the thick detector carry a broad positive background in the
shell image, and the value-weighted centroid is pulled toward the middle.
Off-centre presses therefore land on the right side but well short of
their true distance; compare the printed centroids with the press points.
"""
from pathlib import Path

from tomotactile import (ContactSpec, acquire_frame, apply_regions, build_jacobian,
                         build_shell_mesh, build_volume_mesh, tikhonov_reconstruct)
from tomotactile.reconstruction import ReconConfig, centroid, export_image_pgm

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

jac = build_jacobian(build_shell_mesh(), v_cc=2.0)
print(f"Jacobian {jac.shape[0]} x {jac.shape[1]}, layout {jac.layout_fingerprint}")

base = build_volume_mesh()
for lam in (50.0, 5000.0):
    for pos in [(0.0, 0.0), (-16.0, 10.0)]:
        frame = acquire_frame(apply_regions(base, ContactSpec(pos, 4.0, 1.0)))
        img = tikhonov_reconstruct(jac, frame, ReconConfig(lambda_sq=lam))
        cx, cy = centroid(img)
        name = out / f"image_{int(pos[0]):+d}_{int(pos[1]):+d}_lam{int(lam)}.pgm"
        export_image_pgm(img, name)
        print(f"lambda^2={lam:g} press at {pos}: centroid ({cx:+.2f}, {cy:+.2f}) mm -> {name.name}")

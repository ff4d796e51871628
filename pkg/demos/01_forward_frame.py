"""Press on the sensor and look at what the electrodes see.

A 4 mm contact drives the top face of a graded detector.  Each of the 16
bottom electrodes is grounded in turn and the others are read, giving a
16 x 16 frame.  The brightest readings sit under the press.
"""
import numpy as np

from tomotactile import ContactSpec, GradientSpec, acquire_frame, apply_regions, build_volume_mesh

base = build_volume_mesh(grad=GradientSpec(sigma_low=0.2, sigma_up=0.2))
print(f"volume mesh: {base.n_elements} hexahedra, {base.n_nodes} nodes")

for where in [(0.0, 0.0), (21.0, -8.0)]:
    mesh = apply_regions(base, ContactSpec(where, diameter=4.0, sigma_drv=0.1))
    frame = acquire_frame(mesh, v_cc=2.0)
    mat = frame.matrix()
    # mean reading of each electrode over all grounding steps
    seen = mat.sum(axis=0) / (mat.shape[0] - 1)
    k = int(np.argmax(seen))
    c = mesh.layout.centers(60, 60)[k]
    print(f"contact at {where}: peak {frame.values.max():.4f} V, "
          f"brightest electrode {k} at ({c[0]:+.1f}, {c[1]:+.1f}) mm")
    print(np.array2string(seen.reshape(4, 4)[::-1], precision=3))

"""Why a single press curve saturates, and how it is summarized.

A spherical finger pressed harder grows its contact area as F^(2/3).  The
contact conductance and the detector form a voltage divider, so the
output rises and levels off.  Fitting phi = p1 / (F^p3 + p2) gives two
numbers: the slope at a reference force and the force at 90 % of the
plateau.
"""
import numpy as np

from tomotactile import fit_output_model, fmax_metric, sensitivity_metric
from tomotactile.metrics import ContactModelParams, HertzParams, analytic_output, hertz_power_law

alpha, gamma = hertz_power_law(HertzParams(r=5e-3, nu=0.45, e_mod=2e5))
print(f"contact area S = {alpha:.3e} * F^{gamma:.3f}  (m^2, N)")

forces = np.linspace(0.2, 10.0, 15)
for sigma in (0.02, 0.2, 2.0):
    p = ContactModelParams(alpha, gamma, sigma, l=1e-5, r0=2.0, v_cc=2.0)
    phi = analytic_output(forces, p)
    fit = fit_output_model(forces, phi)
    print(f"skin sigma {sigma:5.2f} S/m: p=({fit.p1:.4g}, {fit.p2:.4g}, {fit.p3:.4f}) "
          f"SENS@5N={sensitivity_metric(fit, 5.0):.4f} V/N FMAX={fmax_metric(fit):.3g} N")

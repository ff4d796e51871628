"""Simulation and analysis toolkit for resistive-coupling tomographic tactile sensors."""

from .geometry import (
    AdhesionSpec,
    ConfigurationError,
    ContactSpec,
    ElectrodeLayout,
    GradientSpec,
    Mesh,
    apply_regions,
    build_shell_mesh,
    build_volume_mesh,
)
from .fem import DirichletSet, FieldSolution, assemble, interface_current, solve
from .protocol import PotentialFrame, acquire_frame
from .jacobian import JacobianMatrix, build_jacobian, load_jacobian, save_jacobian
from .reconstruction import ReconConfig, ReconstructedImage, TikhonovSolver, tikhonov_reconstruct
from .metrics import (FitParams, PerformanceRecord, fit_output_model, fmax_metric,
                      position_accuracy_metric, sensitivity_metric, spatial_resolution_metric)
from .studies import (SimConfig, SweepGrid, SweepResult, run_adhesion_study,
                      run_performance_map, run_thickness_study)

__version__ = "0.1.0"

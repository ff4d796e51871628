"""Tikhonov reconstruction and image geometry.

Images live on the shell mesh (one value per triangle) and are resampled
onto a uniform raster over the sensor plane for the centroid and half-max
measurements.  Raster index ``[iy, ix]`` has iy growing with y.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .geometry import Mesh
from .jacobian import JacobianMatrix
from .serialization import write_grid_csv, write_pgm


class ContractError(ValueError):
    pass


class UndefinedCentroidError(ValueError):
    pass


@dataclass(frozen=True)
class ReconConfig:
    lambda_sq: float = 5000.0
    grid: int = 64

    def __post_init__(self):
        if not self.lambda_sq > 0:
            raise ContractError("lambda_sq must be positive")
        if self.grid < 8:
            raise ContractError("raster grid must be at least 8 cells")


@dataclass(frozen=True, eq=False)
class ReconstructedImage:
    values: np.ndarray | None
    raster: np.ndarray
    extent: tuple  # (width, depth) in mm
    mesh: Mesh | None = None

    @property
    def width(self) -> float:
        return self.extent[0]

    @property
    def grid(self) -> int:
        return self.raster.shape[0]

    def cell_centers(self):
        """(X, Y) arrays of raster cell centres, shaped like ``raster``."""
        return raster_centers(self.extent, self.raster.shape)

    @property
    def cell_size(self) -> tuple[float, float]:
        ny, nx = self.raster.shape
        return self.extent[0] / nx, self.extent[1] / ny

    @classmethod
    def from_raster(cls, raster, width: float = 60.0, depth: float | None = None):
        raster = np.asarray(raster, dtype=float)
        return cls(values=None, raster=raster, extent=(width, width if depth is None else depth))

    @classmethod
    def from_values(cls, mesh: Mesh, values, grid: int = 64):
        values = np.asarray(values, dtype=float)
        return cls(values=values, raster=rasterize(mesh, values, grid),
                   extent=tuple(mesh.extent[:2]), mesh=mesh)


def raster_centers(extent, shape):
    ny, nx = shape
    w, d = extent[0], extent[1]
    xs = -w / 2 + (np.arange(nx) + 0.5) * w / nx
    ys = -d / 2 + (np.arange(ny) + 0.5) * d / ny
    return np.meshgrid(xs, ys)


def locate_elements(mesh: Mesh, x, y) -> np.ndarray:
    """Shell element containing each point (structured-grid lookup).

    Points on the shared diagonal belong to the lower triangle; points on
    cell edges belong to the cell on their +x/+y side except at the far
    boundary.
    """
    if not mesh.is_shell:
        raise ContractError("element lookup is defined on shell meshes")
    n = mesh.divisions[0]
    w, d = mesh.extent[:2]
    u = (np.asarray(x) + w / 2) / (w / n)
    v = (np.asarray(y) + d / 2) / (d / n)
    i = np.clip(np.floor(u), 0, n - 1).astype(int)
    j = np.clip(np.floor(v), 0, n - 1).astype(int)
    upper = (v - j) > (u - i)
    return 2 * (j * n + i) + upper.astype(int)


def rasterize(mesh: Mesh, values, grid: int = 64) -> np.ndarray:
    """Nearest-element resampling of per-element values onto a grid x grid lattice."""
    x, y = raster_centers(mesh.extent[:2], (grid, grid))
    return np.asarray(values)[locate_elements(mesh, x, y)]


class TikhonovSolver:
    """Cached regularized inverse ``x = (J^T J + lambda^2 I)^-1 J^T v``.

    The SPD matrix factorized is the smaller of the normal matrix
    ``J^T J + lambda^2 I`` (N x N) and the kernel matrix ``J J^T + lambda^2 I``
    (M x M); both give the same x by the push-through identity.
    """

    def __init__(self, jac, lambda_sq: float = 5000.0, form: str = "auto"):
        if not lambda_sq > 0:
            raise ContractError("lambda_sq must be positive")
        mat = jac.matrix if isinstance(jac, JacobianMatrix) else np.asarray(jac, dtype=float)
        self.jac = jac
        self.matrix = mat
        self.lambda_sq = float(lambda_sq)
        m, n = mat.shape
        if form == "auto":
            form = "dual" if m < n else "primal"
        if form not in ("primal", "dual"):
            raise ContractError(f"unknown form {form!r}")
        self.form = form
        if form == "primal":
            normal = mat.T @ mat + self.lambda_sq * np.eye(n)
        else:
            normal = mat @ mat.T + self.lambda_sq * np.eye(m)
        self._factor = linalg.cho_factor(normal, lower=True, check_finite=True)
        self._lock = threading.Lock()

    def solve(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        m = self.matrix.shape[0]
        if v.shape[0] != m:
            raise ContractError(f"frame length {v.shape[0]} does not match Jacobian rows {m}")
        if self.form == "primal":
            return linalg.cho_solve(self._factor, self.matrix.T @ v)
        return self.matrix.T @ linalg.cho_solve(self._factor, v)


def tikhonov_reconstruct(jac: JacobianMatrix, frame, cfg: ReconConfig | None = None,
                         solver: TikhonovSolver | None = None) -> ReconstructedImage:
    """Reconstruct per-element contact coupling from a frame.

    ``frame`` is a :class:`~tomotactile.protocol.PotentialFrame` or a plain
    vector.  Passing a prebuilt ``solver`` reuses its factorization.
    """
    cfg = cfg or ReconConfig()
    values = getattr(frame, "values", frame)
    fp = getattr(frame, "fingerprint", "")
    if fp and fp != jac.layout_fingerprint:
        raise ContractError(
            f"frame fingerprint {fp} does not match Jacobian layout {jac.layout_fingerprint}")
    if solver is None or solver.lambda_sq != cfg.lambda_sq:
        solver = TikhonovSolver(jac, cfg.lambda_sq)
    x = solver.solve(values)
    return ReconstructedImage.from_values(jac.mesh, x, cfg.grid)


def _weights(image: ReconstructedImage) -> np.ndarray:
    return np.clip(image.raster, 0.0, None)


def centroid(image: ReconstructedImage) -> tuple[float, float]:
    """Value-weighted mean of cell centres, negative values weighted as zero."""
    w = _weights(image)
    total = w.sum()
    if not total > 0:
        raise UndefinedCentroidError("image has no positive values")
    x, y = image.cell_centers()
    return float((w * x).sum() / total), float((w * y).sum() / total)


def half_max_extent(image: ReconstructedImage, center) -> float:
    """Twice the largest distance from ``center`` to a cell at or above half maximum.

    The result never drops below one raster cell diagonal.
    """
    r = image.raster
    peak = r.max()
    if not peak > 0:
        raise UndefinedCentroidError("image has no positive maximum")
    x, y = image.cell_centers()
    mask = r >= 0.5 * peak
    dist = np.hypot(x[mask] - center[0], y[mask] - center[1])
    dx, dy = image.cell_size
    return float(max(2.0 * dist.max(), np.hypot(dx, dy)))


def export_image_csv(image: ReconstructedImage, path) -> None:
    write_grid_csv(path, image.raster)


def export_image_pgm(image: ReconstructedImage, path) -> None:
    # PGM rows run top to bottom, so +y goes up in the picture
    write_pgm(path, image.raster[::-1])

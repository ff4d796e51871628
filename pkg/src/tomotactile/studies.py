"""Design studies: conductivity performance map, thickness fidelity, dot adhesion.

Every study is deterministic for a given :class:`SimConfig`.  Conditions are
independent and may be evaluated on a thread pool; results are gathered in
grid order so the written artifacts do not depend on the thread count.
"""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import fem
from .geometry import (AdhesionSpec, ConfigurationError, ContactSpec, ElectrodeLayout,
                       GradientSpec, Mesh, apply_regions, build_shell_mesh, build_volume_mesh)
from .jacobian import JacobianMatrix, build_jacobian
from .metrics import (REPORT_COLUMNS, FitError, FitParams, PerformanceRecord,
                      fit_output_model, fmax_metric, position_accuracy_metric,
                      sensitivity_metric, spatial_resolution_metric)
from .protocol import acquire_frame
from .reconstruction import ReconstructedImage, TikhonovSolver, UndefinedCentroidError
from .serialization import fmt, write_pgm

logger = logging.getLogger(__name__)

METRICS = ("sens", "fmax", "sr", "pa")
PA_POSITIONS = tuple((float(x), float(y)) for y in (-20, 0, 20) for x in (-20, 0, 20))
TABLE_I = {"A": 0.2273, "B": 0.5208, "C": 0.001667, "D": 0.008}
FAILURE_LIMIT = 0.2


class StudyError(RuntimeError):
    """A study could not produce a usable result."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scale_divisions(divisions, factor: float) -> tuple[int, int, int]:
    """Scale volume divisions; in-plane counts are rounded to even numbers.

    Even in-plane counts keep a node on the detector axis, which the default
    centred contact and the symmetric electrode grid rely on.
    """
    if not factor > 0:
        raise ConfigurationError("grid scale must be positive")
    nx, ny, nz = divisions
    even = lambda n: max(2, 2 * _round_half_up(n * factor / 2))  # noqa: E731
    return even(nx), even(ny), max(1, _round_half_up(nz * factor))


@dataclass(frozen=True)
class SimConfig:
    width: float = 60.0
    depth: float = 60.0
    height: float = 10.0
    divisions: tuple = (30, 30, 5)
    shell_divisions: int = 45
    layout: ElectrodeLayout = ElectrodeLayout()
    contact_diameter: float = 4.0
    v_cc: float = 2.0
    lambda_sq: float = 5000.0
    raster: int = 64
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if min(self.width, self.depth, self.height, self.contact_diameter, self.v_cc) <= 0:
            raise ConfigurationError("geometry, contact diameter and v_cc must be positive")
        if not self.lambda_sq > 0:
            raise ConfigurationError("lambda_sq must be positive")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    def scaled(self, factor: float) -> "SimConfig":
        """Copy with the volume resolution scaled by ``factor`` (the shell is kept)."""
        return replace(self, divisions=scale_divisions(self.divisions, factor))

    def volume(self, grad: GradientSpec | None = None, height: float | None = None,
               nz: int | None = None) -> Mesh:
        h = self.height if height is None else height
        div = self.divisions if nz is None else (self.divisions[0], self.divisions[1], nz)
        grad = grad or GradientSpec(1.0, 1.0, 0.0, h)
        return build_volume_mesh(self.width, self.depth, h, div, grad, self.layout)

    def shell(self, divisions: int | None = None) -> Mesh:
        n = self.shell_divisions if divisions is None else divisions
        return build_shell_mesh(self.width, self.depth, n, self.layout, 1.0)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["divisions"] = list(self.divisions)
        return d


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


# --------------------------------------------------------------------------
# performance map


@dataclass(frozen=True)
class SweepGrid:
    sigma_low: np.ndarray
    sigma_up: np.ndarray
    contact: np.ndarray
    center: tuple = (0.0, 0.0)
    pa_positions: tuple = PA_POSITIONS

    def __post_init__(self):
        for name in ("sigma_low", "sigma_up", "contact"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1 or a.size < 1 or np.any(a <= 0):
                raise ConfigurationError(f"{name} axis must be a non-empty positive vector")
            if np.any(np.diff(a) <= 0):
                raise ConfigurationError(f"{name} axis must be strictly increasing")
            object.__setattr__(self, name, a)
        if self.contact.size < 4:
            raise ConfigurationError("the output-model fit needs at least 4 contact levels")
        if len(self.pa_positions) == 0:
            raise ConfigurationError("need at least one position for position accuracy")

    @classmethod
    def default(cls, n: int = 11, n_contact: int = 9) -> "SweepGrid":
        axis = np.logspace(-3, 2, n)
        return cls(axis, axis.copy(), np.logspace(-3, 1, n_contact))

    @property
    def f_h(self) -> float:
        """Log-midpoint of the contact-conductivity axis."""
        return float(np.sqrt(self.contact[0] * self.contact[-1]))

    @property
    def sr_level(self) -> float:
        """Contact conductivity used for the reconstruction metrics (axis midpoint)."""
        return float(self.contact[(self.contact.size - 1) // 2])

    def as_dict(self) -> dict:
        return {"sigma_low": self.sigma_low.tolist(), "sigma_up": self.sigma_up.tolist(),
                "contact": self.contact.tolist(), "center": list(self.center),
                "pa_positions": [list(p) for p in self.pa_positions]}


@dataclass
class SweepResult:
    grid: SweepGrid
    records: list  # records[i_low][i_up]
    normalization: dict
    failures: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def shape(self):
        return (len(self.records), len(self.records[0]))

    def flat(self):
        return [r for row in self.records for r in row]

    def raw(self, metric: str) -> np.ndarray:
        return np.array([[getattr(r, metric) for r in row] for row in self.records])

    def normalized(self, metric: str) -> np.ndarray:
        return np.array([[r.normalized.get(metric, np.nan) for r in row]
                         for row in self.records])

    def balanced_score(self) -> np.ndarray:
        """Product of the four normalized metrics."""
        return np.prod([self.normalized(m) for m in METRICS], axis=0)

    def diagonal(self) -> list:
        n = min(self.shape)
        return [self.records[i][i] for i in range(n)]


def _normalization(records) -> dict:
    """Per-metric min/max over the grid, ignoring non-finite values.

    A metric that is constant over the grid (to 1e-9 relative) is flagged
    ``degenerate`` and normalizes to 1 everywhere, so it does not bias
    products of normalized metrics.
    """
    out = {}
    for m in METRICS:
        v = np.array([getattr(r, m) for r in records], dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            out[m] = {"min": float("nan"), "max": float("nan"), "degenerate": True}
            continue
        lo, hi = float(v.min()), float(v.max())
        degenerate = (hi - lo) <= 1e-9 * max(abs(lo), abs(hi), 1e-300)
        out[m] = {"min": lo, "max": hi, "degenerate": bool(degenerate)}
    return out


def normalize_value(value: float, meta: dict, clamp: bool = True) -> float:
    if not np.isfinite(value):
        return float("nan")
    if meta["degenerate"]:
        return 1.0
    t = (value - meta["min"]) / (meta["max"] - meta["min"])
    if clamp and not 0.0 <= t <= 1.0:
        warnings.warn(f"value {value:.6g} outside normalization range "
                      f"[{meta['min']:.6g}, {meta['max']:.6g}]; clamped", stacklevel=2)
        t = min(max(t, 0.0), 1.0)
    return float(t)


def _apply_normalization(records, meta):
    for r in records:
        r.normalized = {}
        for m in METRICS:
            v = getattr(r, m)
            if not np.isfinite(v):
                r.normalized[m] = float("nan")
            elif meta[m]["degenerate"]:
                r.normalized[m] = 1.0
            else:
                r.normalized[m] = float(np.clip(
                    (v - meta[m]["min"]) / (meta[m]["max"] - meta[m]["min"]), 0.0, 1.0))


def shared_solver(cfg: SimConfig) -> tuple[JacobianMatrix, TikhonovSolver]:
    jac = build_jacobian(cfg.shell(), cfg.v_cc)
    return jac, TikhonovSolver(jac, cfg.lambda_sq)


def evaluate_condition(sigma_low: float, sigma_up: float, grid: SweepGrid, cfg: SimConfig,
                       jac: JacobianMatrix, solver: TikhonovSolver) -> PerformanceRecord:
    """All four metrics for one gradient-conductivity condition.

    Fit and reconstruction failures are recorded as NaN metrics with an
    unconverged fit instead of being raised.
    """
    base = cfg.volume(GradientSpec(sigma_low, sigma_up, 0.0, cfg.height))
    nan = float("nan")

    def frame(center, level):
        mesh = apply_regions(base, ContactSpec(center, cfg.contact_diameter, level))
        return acquire_frame(mesh, cfg.v_cc)

    peaks, sr_frame = [], None
    for level in grid.contact:
        fr = frame(grid.center, level)
        peaks.append(float(fr.values.max()))
        if level == grid.sr_level:
            sr_frame = fr
    fit = fit_output_model(grid.contact, np.array(peaks), seed=cfg.seed)
    try:
        sens = sensitivity_metric(fit, grid.f_h)
        fmax = fmax_metric(fit)
    except FitError:
        sens = fmax = nan

    def image(fr):
        return ReconstructedImage.from_values(jac.mesh, solver.solve(fr.values), cfg.raster)

    try:
        sr = spatial_resolution_metric(image(sr_frame))
    except UndefinedCentroidError:
        sr = nan
    pas = []
    for pos in grid.pa_positions:
        fr = sr_frame if tuple(pos) == tuple(grid.center) else frame(pos, grid.sr_level)
        try:
            pas.append(position_accuracy_metric(image(fr), pos))
        except UndefinedCentroidError:
            pas.append(nan)
    return PerformanceRecord(sens=float(sens), fmax=float(fmax), sr=float(sr),
                             pa=float(np.mean(pas)), fit=fit, sigma_low=float(sigma_low),
                             sigma_up=float(sigma_up))


def run_performance_map(grid: SweepGrid | None = None, cfg: SimConfig | None = None,
                        progress=None) -> SweepResult:
    """Evaluate every (sigma_low, sigma_up) condition and min-max normalize.

    Raises :class:`StudyError` (with the finished result attached as
    ``partial``) when more than 20 % of the conditions fail to fit.
    """
    grid = grid or SweepGrid.default()
    cfg = cfg or SimConfig()
    t0 = time.perf_counter()
    jac, solver = shared_solver(cfg)
    cells = [(i, j) for i in range(grid.sigma_low.size) for j in range(grid.sigma_up.size)]

    def run(cell):
        i, j = cell
        try:
            rec = evaluate_condition(grid.sigma_low[i], grid.sigma_up[j], grid, cfg, jac, solver)
        except (fem.NumericalError, ConfigurationError) as exc:
            logger.warning("condition (%d, %d) failed: %s", i, j, exc)
            nan = float("nan")
            rec = PerformanceRecord(nan, nan, nan, nan,
                                    FitParams(nan, nan, nan, converged=False),
                                    sigma_low=float(grid.sigma_low[i]),
                                    sigma_up=float(grid.sigma_up[j]))
        rec.i_low, rec.i_up = i, j
        if progress is not None:
            progress(i, j)
        return rec

    flat = _map(run, cells, cfg.threads)
    meta = _normalization(flat)
    _apply_normalization(flat, meta)
    n_up = grid.sigma_up.size
    records = [flat[k * n_up:(k + 1) * n_up] for k in range(grid.sigma_low.size)]
    failures = [{"i_low": r.i_low, "i_up": r.i_up, "sigma_low": r.sigma_low,
                 "sigma_up": r.sigma_up} for r in flat if r.fit is None or not r.fit.converged]
    result = SweepResult(grid=grid, records=records, normalization=meta, failures=failures,
                         timings={"total_s": time.perf_counter() - t0})
    if len(failures) > FAILURE_LIMIT * len(flat):
        raise StudyError(f"{len(failures)} of {len(flat)} conditions failed to fit "
                         f"(limit {FAILURE_LIMIT:.0%})", partial=result)
    return result


# --------------------------------------------------------------------------
# material positioning


def nearest_index(axis, value: float) -> int:
    """Nearest axis entry in log space."""
    if not value > 0:
        raise ConfigurationError("conductivity must be positive")
    return int(np.argmin(np.abs(np.log(np.asarray(axis)) - math.log(value))))


def place_material(result: SweepResult, sigma_up: float, sigma_low: float) -> PerformanceRecord:
    """Grid record nearest to a (top, bottom) conductivity pair."""
    i = nearest_index(result.grid.sigma_low, sigma_low)
    j = nearest_index(result.grid.sigma_up, sigma_up)
    return result.records[i][j]


def table_i_records(result: SweepResult, labels=("A", "B", "C", "D", "BC", "DA")) -> list:
    """Records for Table I samples; two-letter labels stack top over bottom."""
    out = []
    for label in labels:
        if len(label) == 1:
            top = bottom = TABLE_I[label]
        elif len(label) == 2:
            top, bottom = TABLE_I[label[0]], TABLE_I[label[1]]
        else:
            raise ConfigurationError(f"unrecognized material label {label!r}")
        out.append((label, place_material(result, top, bottom)))
    return out


@dataclass
class PositioningTable:
    sr_fmax: list  # (label, normalized SR, normalized FMAX)
    pa_sens: list  # (label, normalized PA, normalized SENS)
    diagonal: list  # (sigma, sr, fmax, pa, sens) normalized, axis order


def material_positioning(records, result: SweepResult) -> PositioningTable:
    meta = result.normalization
    sr_fmax, pa_sens = [], []
    for label, rec in records:
        n = {m: normalize_value(getattr(rec, m), meta[m]) for m in METRICS}
        sr_fmax.append((label, n["sr"], n["fmax"]))
        pa_sens.append((label, n["pa"], n["sens"]))
    diag = [(r.sigma_low, *(normalize_value(getattr(r, m), meta[m]) for m in
                            ("sr", "fmax", "pa", "sens"))) for r in result.diagonal()]
    return PositioningTable(sr_fmax=sr_fmax, pa_sens=pa_sens, diagonal=diag)


# --------------------------------------------------------------------------
# thickness study


@dataclass(frozen=True)
class ThicknessRow:
    thickness: float
    correlation: float
    max_potential: float
    mae: float


def compare_frames(values, reference) -> tuple[float, float]:
    """Pearson correlation and mean absolute error of max-normalized frames."""
    a = _max_normalized(values)
    b = _max_normalized(reference)
    return float(np.corrcoef(a, b)[0, 1]), float(np.mean(np.abs(a - b)))


def _max_normalized(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    peak = np.max(np.abs(v))
    if not peak > 1e-12:
        raise StudyError("degenerate frame: all entries are ~0")
    return v / peak


def shell_frame(shell: Mesh, v_cc: float = 2.0) -> np.ndarray:
    """Grounding cycle on a shell mesh with the drive nodes held at ``v_cc``."""
    return acquire_frame(shell, v_cc, method="direct").values


def run_thickness_study(thicknesses=(1, 2, 4, 8, 16), cfg: SimConfig | None = None,
                        center=(0.0, 0.0)) -> tuple[list, np.ndarray]:
    """Compare volume frames of several thicknesses with the thin-shell frame.

    Detector and drive conductivity are 1 S/m.  The shell reference uses the
    same in-plane divisions as the volume meshes; each volume keeps the
    configured vertical element size (at least one layer).  Returns the rows
    and the shell reference frame.
    """
    cfg = cfg or SimConfig()
    ts = [float(t) for t in thicknesses]
    if not ts or min(ts) <= 0:
        raise ConfigurationError("thicknesses must be positive")
    contact = ContactSpec(tuple(center), cfg.contact_diameter, 1.0)
    nx = cfg.divisions[0]
    if cfg.divisions[1] != nx:
        raise ConfigurationError("thickness study needs equal in-plane divisions")
    shell = apply_regions(build_shell_mesh(cfg.width, cfg.depth, nx, cfg.layout, 1.0), contact)
    ref = shell_frame(shell, cfg.v_cc)
    dz = cfg.height / cfg.divisions[2]

    def run(t):
        nz = max(1, _round_half_up(t / dz))
        mesh = apply_regions(cfg.volume(GradientSpec(1.0, 1.0, 0.0, t), t, nz), contact)
        v = acquire_frame(mesh, cfg.v_cc).values
        corr, mae = compare_frames(v, ref)
        return ThicknessRow(t, corr, float(v.max()), mae)

    return _map(run, ts, cfg.threads), ref


# --------------------------------------------------------------------------
# adhesion study


@dataclass(frozen=True)
class AdhesionErrorRow:
    diameter: float
    n: int
    error_mm: float


@dataclass(frozen=True)
class AdhesionCurrentRow:
    diameter: float
    n: int
    total_current: float
    peak_density: float


DEFAULT_DOT_DIAMETERS = (2.0, 3.0, 4.0, 5.0, 6.0, 7.22, 8.0, 10.0, 12.0)


def default_diameters(n: int, width: float = 60.0) -> list:
    full = AdhesionSpec(n).full_coverage_diameter(width)
    return sorted({d for d in DEFAULT_DOT_DIAMETERS if d < full} | {full})


def block_current(cfg: SimConfig, adhesion: AdhesionSpec | None, volts: float = 1.0):
    """1 V across a uniform 1 S/m block with an optional dot-masked interface."""
    mesh = apply_regions(cfg.volume(), None, adhesion)
    bc = fem.DirichletSet.union(fem.DirichletSet(mesh.top_nodes(), volts),
                                fem.DirichletSet(mesh.bottom_nodes(), 0.0))
    sol = fem.solve(fem.assemble(mesh), bc)
    layer = "interface" if adhesion is not None else mesh.layer_elements(cfg.divisions[2] // 2)
    return fem.interface_current(sol, layer)


def mean_position_error(cfg: SimConfig, adhesion: AdhesionSpec | None, jac: JacobianMatrix,
                        solver: TikhonovSolver, positions=PA_POSITIONS,
                        sigma_drv: float = 1.0) -> float:
    base = apply_regions(cfg.volume(), None, adhesion)
    errs = []
    for pos in positions:
        mesh = apply_regions(base, ContactSpec(pos, cfg.contact_diameter, sigma_drv))
        img = ReconstructedImage.from_values(
            jac.mesh, solver.solve(acquire_frame(mesh, cfg.v_cc).values), cfg.raster)
        pa = position_accuracy_metric(img, pos)
        errs.append((1.0 - pa) * img.width)
    return float(np.mean(errs))


@dataclass
class AdhesionResult:
    errors: list
    currents: list
    baseline_error: float
    skipped: list = field(default_factory=list)


def run_adhesion_study(dots=(5, 7), diameters=None, cfg: SimConfig | None = None,
                       positions=PA_POSITIONS) -> AdhesionResult:
    """Position error (study A) and interface current (study B) against dot diameter.

    ``diameters`` is a sequence shared by all dot grids, or ``None`` for the
    per-grid default sweep ending at full coverage.  Diameters above
    ``pitch * sqrt(2)`` are rejected; diameters whose mask covers no element
    are skipped with a warning.
    """
    cfg = cfg or SimConfig()
    jac, solver = shared_solver(cfg)
    cases = []
    for n in dots:
        ds = default_diameters(n, cfg.width) if diameters is None else [float(d) for d in diameters]
        full = AdhesionSpec(n).full_coverage_diameter(cfg.width)
        for d in ds:
            if not 0 < d <= full * (1 + 1e-12):
                raise ConfigurationError(
                    f"dot diameter {d:g} mm outside (0, {full:.4g}] for a {n}x{n} grid")
            cases.append((int(n), float(d)))

    skipped, live = [], []
    for n, d in cases:
        probe = apply_regions(cfg.volume(), None, AdhesionSpec(n, d))
        if len(probe.element_tags["dots"]) == 0:
            skipped.append({"n": n, "diameter": d})
            warnings.warn(f"{n}x{n} dots of {d:g} mm cover no element; skipped", stacklevel=2)
        else:
            live.append((n, d))

    def run(case):
        n, d = case
        spec = AdhesionSpec(n, d)
        err = mean_position_error(cfg, spec, jac, solver, positions)
        total, peak = block_current(cfg, spec)
        return AdhesionErrorRow(d, n, err), AdhesionCurrentRow(d, n, total, peak)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = _map(run, live, cfg.threads)
    baseline = mean_position_error(cfg, None, jac, solver, positions)
    return AdhesionResult(errors=[r[0] for r in rows], currents=[r[1] for r in rows],
                          baseline_error=baseline, skipped=skipped)


# --------------------------------------------------------------------------
# artifacts

PERFMAP_COLUMNS = REPORT_COLUMNS + ("SENS_n", "FMAX_n", "SR_n", "PA_n")


def write_perfmap_csv(result: SweepResult, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(PERFMAP_COLUMNS) + "\n")
        for r in result.flat():
            fh.write(r.report_row() + "," + ",".join(fmt(r.normalized.get(m, np.nan))
                                                     for m in METRICS) + "\n")


def write_perfmap_pgms(result: SweepResult, directory) -> list:
    """One heatmap per normalized metric; rows run from high to low sigma_low."""
    from pathlib import Path
    paths = []
    for m in METRICS:
        p = Path(directory) / f"perfmap_{m}.pgm"
        write_pgm(p, result.normalized(m)[::-1])
        paths.append(p)
    return paths


def write_thickness_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("thickness_mm,correlation,max_potential_V,mae\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in (r.thickness, r.correlation,
                                               r.max_potential, r.mae)) + "\n")


def write_adhesion_csvs(result: AdhesionResult, error_path, current_path) -> None:
    with open(error_path, "w") as fh:
        fh.write("diameter_mm,n,position_error_mm\n")
        for r in result.errors:
            fh.write(f"{fmt(r.diameter)},{r.n},{fmt(r.error_mm)}\n")
    with open(current_path, "w") as fh:
        fh.write("diameter_mm,n,total_current_A,peak_density_A_per_m2\n")
        for r in result.currents:
            fh.write(f"{fmt(r.diameter)},{r.n},{fmt(r.total_current)},{fmt(r.peak_density)}\n")


def write_manifest(path, config: dict, timings: dict, failures: list, extra=None) -> None:
    doc = {"config": config, "timings": timings, "failures": failures}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)

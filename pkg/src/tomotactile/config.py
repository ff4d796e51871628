"""JSON run configuration with a versioned, closed schema.

Every section and key is optional; unknown keys are rejected so typos fail
fast.  Example::

    {
      "schema": "tomotactile/1",
      "sensor": {"width": 60, "depth": 60, "height": 10},
      "electrodes": {"count": 4, "diameter": 4.0},
      "gradient": {"sigma_low": 0.2, "sigma_up": 0.2},
      "mesh": {"volume_divisions": [30, 30, 5], "shell_divisions": 45},
      "recon": {"lambda_sq": 5000, "grid": 64},
      "drive": {"v_cc": 2.0, "contact_diameter": 4.0},
      "contacts": [{"x": 0, "y": 0, "sigma_drv": 0.1}],
      "sweep": {"n": 11, "n_contact": 9},
      "thickness": {"values": [1, 2, 4, 8, 16]},
      "adhesion": {"dots": [5, 7], "diameters": null},
      "output_dir": "out",
      "seed": 0
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConfigurationError, ElectrodeLayout, GradientSpec
from .studies import SimConfig, SweepGrid

SCHEMA = "tomotactile/1"


class ConfigError(ConfigurationError):
    """Malformed or invalid run configuration."""


_SECTIONS = {
    "sensor": {"width": float, "depth": float, "height": float},
    "electrodes": {"count": int, "diameter": float, "pitch": (float, type(None))},
    "gradient": {"sigma_low": float, "sigma_up": float},
    "mesh": {"volume_divisions": list, "shell_divisions": int},
    "recon": {"lambda_sq": float, "grid": int},
    "drive": {"v_cc": float, "contact_diameter": float},
    "sweep": {"n": int, "n_contact": int, "low": float, "high": float,
              "contact_low": float, "contact_high": float,
              "sigma_low": list, "sigma_up": list, "contact": list},
    "thickness": {"values": list, "x": float, "y": float},
    "adhesion": {"dots": list, "diameters": (list, type(None))},
}
_TOP = {"schema", "contacts", "output_dir", "seed", *_SECTIONS}
_CONTACT_KEYS = {"x", "y", "sigma_drv", "timestamp"}


@dataclass(frozen=True)
class ContactCase:
    x: float = 0.0
    y: float = 0.0
    sigma_drv: float = 1.0
    timestamp: str | None = None


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = SimConfig()
    gradient: GradientSpec = GradientSpec(1.0, 1.0)
    contacts: tuple = ()
    sweep: SweepGrid = field(default_factory=SweepGrid.default)
    thickness: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)
    thickness_center: tuple = (0.0, 0.0)
    dots: tuple = (5, 7)
    diameters: tuple | None = None
    output_dir: str | None = None
    raw: dict = field(default_factory=dict)

    def with_overrides(self, *, threads=None, grid_scale=None, seed=None, output_dir=None):
        from dataclasses import replace
        sim = self.sim
        if threads is not None:
            sim = replace(sim, threads=int(threads))
        if seed is not None:
            sim = replace(sim, seed=int(seed))
        if grid_scale is not None and grid_scale != 1.0:
            sim = sim.scaled(float(grid_scale))
        return replace(self, sim=sim, output_dir=output_dir or self.output_dir)

    def echo(self) -> dict:
        return {"input": self.raw, "sim": self.sim.as_dict(), "sweep": self.sweep.as_dict(),
                "gradient": [self.gradient.sigma_low, self.gradient.sigma_up]}


def _check_type(path, value, kind):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if float in kinds and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if int in kinds and isinstance(value, int) and not isinstance(value, bool):
        return value
    for k in kinds:
        if k not in (float, int) and isinstance(value, k):
            return value
    names = "/".join(k.__name__ for k in kinds)
    raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")


def _section(doc, name):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected an object")
    allowed = _SECTIONS[name]
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(unknown)}")
    return {k: _check_type(f"{name}.{k}", v, allowed[k]) for k, v in sec.items()}


def _floats(path, seq):
    return tuple(float(_check_type(f"{path}[{i}]", v, float)) for i, v in enumerate(seq))


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    unknown = sorted(set(doc) - _TOP)
    if unknown:
        raise ConfigError(f"top level: unknown key(s) {', '.join(unknown)}")
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"schema: unsupported version {schema!r} (expected {SCHEMA!r})")

    sensor = _section(doc, "sensor")
    elec = _section(doc, "electrodes")
    grad = _section(doc, "gradient")
    mesh = _section(doc, "mesh")
    recon = _section(doc, "recon")
    drive = _section(doc, "drive")
    sweep = _section(doc, "sweep")
    thick = _section(doc, "thickness")
    adh = _section(doc, "adhesion")

    try:
        layout = ElectrodeLayout(**elec)
        height = sensor.get("height", 10.0)
        div = mesh.get("volume_divisions", [30, 30, 5])
        if len(div) != 3 or not all(isinstance(d, int) and d >= 1 for d in div):
            raise ConfigError("mesh.volume_divisions: expected three positive integers")
        sim = SimConfig(
            width=sensor.get("width", 60.0), depth=sensor.get("depth", 60.0), height=height,
            divisions=tuple(div), shell_divisions=mesh.get("shell_divisions", 45),
            layout=layout, contact_diameter=drive.get("contact_diameter", 4.0),
            v_cc=drive.get("v_cc", 2.0), lambda_sq=recon.get("lambda_sq", 5000.0),
            raster=recon.get("grid", 64), seed=_check_type("seed", doc.get("seed", 0), int))
        if sim.raster < 8:
            raise ConfigError("recon.grid: must be at least 8")
        gradient = GradientSpec(grad.get("sigma_low", 1.0), grad.get("sigma_up", 1.0), 0.0, height)
        grid = _sweep_grid(sweep)
    except ConfigError:
        raise
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    contacts = []
    raw_contacts = doc.get("contacts", [])
    if not isinstance(raw_contacts, list):
        raise ConfigError("contacts: expected a list")
    for i, c in enumerate(raw_contacts):
        if not isinstance(c, dict):
            raise ConfigError(f"contacts[{i}]: expected an object")
        bad = sorted(set(c) - _CONTACT_KEYS)
        if bad:
            raise ConfigError(f"contacts[{i}]: unknown key(s) {', '.join(bad)}")
        vals = {k: _check_type(f"contacts[{i}].{k}", c[k], float)
                for k in ("x", "y", "sigma_drv") if k in c}
        if vals.get("sigma_drv", 1.0) < 0:
            raise ConfigError(f"contacts[{i}].sigma_drv: must be non-negative")
        ts = c.get("timestamp")
        contacts.append(ContactCase(timestamp=None if ts is None else str(ts), **vals))

    ts = _floats("thickness.values", thick.get("values", [1, 2, 4, 8, 16]))
    if not ts or min(ts) <= 0:
        raise ConfigError("thickness.values: must be a non-empty list of positive numbers")
    dots = adh.get("dots", [5, 7])
    if not dots or not all(isinstance(n, int) and n >= 1 for n in dots):
        raise ConfigError("adhesion.dots: expected positive integers")
    diam = adh.get("diameters")
    out = doc.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    return RunConfig(sim=sim, gradient=gradient, contacts=tuple(contacts), sweep=grid,
                     thickness=ts, thickness_center=(thick.get("x", 0.0), thick.get("y", 0.0)),
                     dots=tuple(dots),
                     diameters=None if diam is None else _floats("adhesion.diameters", diam),
                     output_dir=out, raw=doc)


def _sweep_grid(sweep: dict) -> SweepGrid:
    n = sweep.get("n", 11)
    nc = sweep.get("n_contact", 9)
    axis = np.logspace(np.log10(sweep.get("low", 1e-3)), np.log10(sweep.get("high", 100.0)), n)
    contact = np.logspace(np.log10(sweep.get("contact_low", 1e-3)),
                          np.log10(sweep.get("contact_high", 10.0)), nc)
    lo = _floats("sweep.sigma_low", sweep["sigma_low"]) if "sigma_low" in sweep else axis
    up = _floats("sweep.sigma_up", sweep["sigma_up"]) if "sigma_up" in sweep else axis
    ct = _floats("sweep.contact", sweep["contact"]) if "contact" in sweep else contact
    return SweepGrid(np.array(lo), np.array(up), np.array(ct))


def load_config(path) -> RunConfig:
    """Read and validate a JSON config; errors carry line/field diagnostics."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return parse_config(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

"""Sequential-grounding acquisition cycle.

For every ground electrode g the drive nodes are held at ``v_cc`` and the
nodes of electrode g at 0 V; all other electrodes float.  Entry
``g * n_e + m`` of the frame is the mean potential over electrode m.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fem
from .geometry import Mesh
from .serialization import fmt


class FrameFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PotentialFrame:
    values: np.ndarray
    v_cc: float
    n_electrodes: int
    fingerprint: str = ""

    def matrix(self) -> np.ndarray:
        """Values reshaped to (ground, measure)."""
        return self.values.reshape(self.n_electrodes, self.n_electrodes)

    def normalized(self) -> np.ndarray:
        peak = np.max(np.abs(self.values))
        if peak <= 0:
            raise ValueError("cannot normalize an all-zero frame")
        return self.values / peak


def electrode_means(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    """Mean nodal potential over each electrode; ``phi`` may carry extra columns."""
    return np.stack([phi[ids].mean(axis=0) for ids in mesh.electrodes])


def acquire_frame(mesh: Mesh, v_cc: float = 2.0, system: fem.StiffnessSystem | None = None,
                  threads: int = 1, method: str = "schur") -> PotentialFrame:
    """Run the full grounding cycle on a mesh carrying a ``"drive"`` node tag.

    ``method="direct"`` factorizes one reduced system per ground electrode.
    ``method="schur"`` (default) factorizes once with only the drive fixed
    and grounds each electrode through a small dense system on the
    electrode nodes; it falls back to ``"direct"`` when the drive-only
    system is singular (e.g. a fully severed contact).
    """
    drive = mesh.node_tags.get("drive")
    if drive is None or len(drive) == 0:
        raise ValueError("mesh has no drive nodes; call apply_regions first")
    n_e = mesh.n_electrodes
    if n_e < 2:
        raise ValueError("the grounding cycle needs at least two electrodes")
    if method not in ("schur", "direct"):
        raise ValueError(f"unknown acquisition method {method!r}")
    for g, ids in enumerate(mesh.electrodes):
        if np.intersect1d(ids, drive).size:
            raise ValueError(f"electrode {g} overlaps the drive region")
    system = system or fem.assemble(mesh)
    drive_bc = fem.DirichletSet(drive, v_cc)
    fp = frame_fingerprint(mesh, v_cc)

    if method == "schur":
        try:
            values = _schur_cycle(mesh, system, drive_bc)
        except fem.NumericalError:
            values = None
        if values is not None:
            return PotentialFrame(values=values, v_cc=float(v_cc), n_electrodes=n_e,
                                  fingerprint=fp)

    def one_ground(g):
        ground = mesh.electrodes[g]
        bc = fem.DirichletSet.union(drive_bc, fem.DirichletSet(ground, 0.0))
        try:
            sol = fem.solve(system, bc)
        except fem.NumericalError as exc:
            raise fem.NumericalError(f"ground electrode {g}: {exc}") from exc
        row = electrode_means(mesh, sol.phi)
        row[g] = 0.0
        return row

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(one_ground, range(n_e)))
    else:
        rows = [one_ground(g) for g in range(n_e)]
    values = np.concatenate(rows)
    return PotentialFrame(values=values, v_cc=float(v_cc), n_electrodes=n_e, fingerprint=fp)


def _schur_cycle(mesh: Mesh, system: fem.StiffnessSystem, drive_bc: fem.DirichletSet):
    # open-circuit field plus transfer impedances between all electrode nodes
    enodes = np.concatenate(mesh.electrodes)
    bounds = np.cumsum([0] + [len(e) for e in mesh.electrodes])
    src = np.zeros((system.n, enodes.size))
    src[enodes, np.arange(enodes.size)] = 1.0
    zero_drive = fem.DirichletSet(drive_bc.nodes, 0.0)
    phi, _ = fem.solve_block(system, zero_drive, src)
    z = phi[enodes]
    phi0, _ = fem.solve_block(system, drive_bc)
    phi0 = phi0[enodes]

    n_e = mesh.n_electrodes
    values = np.empty(n_e * n_e)
    for g in range(n_e):
        sl = slice(bounds[g], bounds[g + 1])
        # ground currents that pull electrode g's nodes to exactly 0 V
        cur = np.linalg.solve(z[sl, sl], -phi0[sl])
        pe = phi0 + z[:, sl] @ cur
        row = np.add.reduceat(pe, bounds[:-1]) / np.diff(bounds)
        row[g] = 0.0
        values[g * n_e:(g + 1) * n_e] = row
    return values


def frame_fingerprint(mesh: Mesh, v_cc: float | None = None) -> str:
    """Identity of the electrode arrangement a frame was measured with.

    Shell and volume meshes of the same sensor plane and electrode layout
    share this fingerprint, so shell Jacobians accept volume frames.
    """
    return mesh.layout_fingerprint()


def format_frame_line(frame: PotentialFrame, timestamp=None) -> str:
    fields = [fmt(v) for v in frame.values]
    if timestamp is not None:
        fields.insert(0, str(timestamp))
    return ",".join(fields)


def parse_frame_line(line: str, n_values: int = 256):
    """Parse one frame line; returns ``(timestamp or None, values)``.

    A line with ``n_values + 1`` fields carries a leading timestamp.
    """
    fields = [f.strip() for f in line.strip().split(",")]
    if fields == [""]:
        raise FrameFormatError("empty line")
    timestamp = None
    if len(fields) == n_values + 1:
        timestamp, fields = fields[0], fields[1:]
    if len(fields) != n_values:
        raise FrameFormatError(f"expected {n_values} values, got {len(fields)}")
    try:
        values = np.array([float(f) for f in fields])
    except ValueError as exc:
        raise FrameFormatError(str(exc)) from exc
    if not np.all(np.isfinite(values)):
        raise FrameFormatError("non-finite value in frame")
    return timestamp, values


def frame_header(fingerprint: str, v_cc: float) -> str:
    return f"# layout={fingerprint} v_cc={fmt(v_cc)}"


def parse_header(line: str) -> dict:
    """Key/value pairs of a ``# key=value ...`` header line."""
    out = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def write_frames(path, frames, timestamps=None, header: bool = True) -> None:
    """One frame per line, preceded by a ``# layout=... v_cc=...`` header line."""
    with open(path, "w") as fh:
        if header and frames:
            fh.write(frame_header(frames[0].fingerprint, frames[0].v_cc) + "\n")
        for i, fr in enumerate(frames):
            ts = None if timestamps is None else timestamps[i]
            fh.write(format_frame_line(fr, ts) + "\n")


def read_frame_file(path, n_values: int = 256):
    """Returns ``(header dict, [(timestamp, values), ...])``; comment lines are skipped."""
    header, rows = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                header.update(parse_header(line))
            elif line.strip():
                rows.append(parse_frame_line(line, n_values))
    return header, rows


def read_frames(path, n_values: int = 256) -> list[np.ndarray]:
    return [v for _, v in read_frame_file(path, n_values)[1]]

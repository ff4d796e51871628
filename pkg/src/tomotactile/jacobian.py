"""Contact-coupling sensitivity matrix on the thin-shell model.

At zero coupling the whole shell sits at 0 V, so a small coupling ``dc``
(conductance in S) between the driving layer and element e injects a
current ``dc * v_cc`` at the element, spread equally over its three nodes.
Column e of the Jacobian is the frame produced by unit coupling at e:
``J[g*n_e + m, e] = v_cc * Z_g(m, e)`` with ``Z_g`` the transfer
impedance from element e to electrode m while electrode g is grounded.

By reciprocity ``Z_g(m, e)`` equals the potential at element e when a
unit current is drawn into electrode m, so each ground needs only
``n_e - 1`` adjoint solves regardless of the element count.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fem
from .geometry import ConfigurationError, ElectrodeLayout, Mesh, build_shell_mesh
from .serialization import fmt_row

_MAGIC = b"TTJAC1\n"


@dataclass(frozen=True, eq=False)
class JacobianMatrix:
    matrix: np.ndarray
    v_cc: float
    mesh: Mesh
    mesh_fingerprint: str
    layout_fingerprint: str

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n_electrodes(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))


def element_source_weights(mesh: Mesh) -> np.ndarray:
    """(N, E) nodal distribution of a unit current injected at each element centroid."""
    import scipy.sparse as sp
    k = mesh.elements.shape[1]
    rows = mesh.elements.ravel()
    cols = np.repeat(np.arange(mesh.n_elements), k)
    return sp.csr_matrix((np.full(rows.size, 1.0 / k), (rows, cols)),
                         shape=(mesh.n_nodes, mesh.n_elements))


def build_jacobian(shell: Mesh, v_cc: float = 2.0, threads: int = 1) -> JacobianMatrix:
    if not shell.is_shell:
        raise ConfigurationError("the reconstruction Jacobian is built on a shell mesh")
    sig = np.asarray(shell.sigma)
    if not np.allclose(sig, sig[0], rtol=1e-12, atol=0):
        raise ConfigurationError("shell Jacobian requires a uniform conductivity")
    n_e = shell.n_electrodes
    if n_e < 2:
        raise ConfigurationError("need at least two electrodes")
    system = fem.assemble(shell)
    conn = shell.elements

    def block(g):
        bc = fem.DirichletSet(shell.electrodes[g], 0.0)
        src = np.zeros((shell.n_nodes, n_e))
        for m, ids in enumerate(shell.electrodes):
            if m != g:
                src[ids, m] = 1.0 / len(ids)
        phi, _ = fem.solve_block(system, bc, src)
        rows = phi[conn].mean(axis=1).T  # (n_e, E)
        rows[g] = 0.0
        return v_cc * rows

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(block, range(n_e)))
    else:
        blocks = [block(g) for g in range(n_e)]
    mat = np.vstack(blocks)
    mat.setflags(write=False)
    return JacobianMatrix(matrix=mat, v_cc=float(v_cc), mesh=shell,
                          mesh_fingerprint=shell.fingerprint(),
                          layout_fingerprint=shell.layout_fingerprint())


def save_jacobian(jac: JacobianMatrix, path) -> None:
    """Binary dump: magic line, JSON header line, then row-major little-endian float64."""
    lay = jac.mesh.layout or ElectrodeLayout()
    header = {
        "rows": int(jac.shape[0]),
        "cols": int(jac.shape[1]),
        "v_cc": jac.v_cc,
        "mesh_fingerprint": jac.mesh_fingerprint,
        "layout_fingerprint": jac.layout_fingerprint,
        "shell": {
            "width": jac.mesh.extent[0],
            "depth": jac.mesh.extent[1],
            "divisions": int(jac.mesh.divisions[0]),
            "sigma": float(jac.mesh.sigma[0]),
            "layout": {"count": lay.count, "diameter": lay.diameter, "pitch": lay.pitch},
        },
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(jac.matrix, dtype="<f8").tobytes())


def load_jacobian(path) -> JacobianMatrix:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise ValueError(f"{path} is not a Jacobian dump")
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f8")
    rows, cols = header["rows"], header["cols"]
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    sh = header["shell"]
    shell = build_shell_mesh(sh["width"], sh["depth"], sh["divisions"],
                             ElectrodeLayout(**sh["layout"]), sh["sigma"])
    if shell.fingerprint() != header["mesh_fingerprint"]:
        raise ValueError("rebuilt shell mesh does not match the stored fingerprint")
    mat = data.reshape(rows, cols).astype(float)
    mat.setflags(write=False)
    return JacobianMatrix(matrix=mat, v_cc=header["v_cc"], mesh=shell,
                          mesh_fingerprint=header["mesh_fingerprint"],
                          layout_fingerprint=header["layout_fingerprint"])


def export_jacobian_csv(jac: JacobianMatrix, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# rows={jac.shape[0]} cols={jac.shape[1]} v_cc={jac.v_cc:g} "
                 f"mesh={jac.mesh_fingerprint} layout={jac.layout_fingerprint}\n")
        for row in jac.matrix:
            fh.write(fmt_row(row) + "\n")

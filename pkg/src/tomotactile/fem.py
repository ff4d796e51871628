"""Finite-element solver for div(sigma grad phi) = 0.

Shell meshes use linear triangles (sheet conductance sigma, unit
thickness); volume meshes use trilinear hexahedra with 2x2x2 Gauss
quadrature.  Mesh coordinates are in mm and converted to metres during
assembly, so potentials are in volts and currents in amperes.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .geometry import Mesh, _HEX_OFFSETS
from .serialization import fingerprint_arrays

logger = logging.getLogger(__name__)

MM = 1e-3
RESIDUAL_TOL = 1e-10


class AssemblyError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class DirichletSet:
    """Prescribed nodal potentials."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(self.values, dtype=float), nodes.shape).copy()
        if nodes.size == 0:
            raise ValueError("a Dirichlet set needs at least one node")
        if np.unique(nodes).size != nodes.size:
            raise ValueError("Dirichlet node ids must be unique")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_pairs(cls, pairs) -> "DirichletSet":
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def union(cls, *sets: "DirichletSet") -> "DirichletSet":
        return cls(np.concatenate([s.nodes for s in sets]),
                   np.concatenate([s.values for s in sets]))


def _triangle_stiffness(nodes, elements):
    p = nodes[elements][:, :, :2] * MM
    x, y = p[..., 0], p[..., 1]
    # gradients of barycentric coordinates: b_i = y_j - y_k, c_i = x_k - x_j
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    det = b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0]
    area = 0.5 * det
    return (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4 * area[:, None, None]), area


_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _hex_stiffness(nodes, elements):
    p = nodes[elements] * MM  # (E, 8, 3)
    ref = 2.0 * _HEX_OFFSETS - 1.0  # (8, 3) reference corners in {-1, 1}
    ke = np.zeros((len(elements), 8, 8))
    vol = np.zeros(len(elements))
    for xi in _GAUSS:
        for eta in _GAUSS:
            for zeta in _GAUSS:
                q = np.array([xi, eta, zeta])
                fac = 1.0 + ref * q  # (8, 3)
                dn = np.empty((8, 3))
                dn[:, 0] = ref[:, 0] * fac[:, 1] * fac[:, 2] / 8
                dn[:, 1] = ref[:, 1] * fac[:, 0] * fac[:, 2] / 8
                dn[:, 2] = ref[:, 2] * fac[:, 0] * fac[:, 1] / 8
                jac = np.einsum("ak,eai->eki", dn, p)  # d x_i / d xi_k
                detj = np.linalg.det(jac)
                if np.any(detj <= 0):
                    bad = int(np.flatnonzero(detj <= 0)[0])
                    raise AssemblyError(f"degenerate hexahedron {bad}")
                grad = np.einsum("eik,ak->eai", np.linalg.inv(jac), dn)
                ke += np.einsum("eai,ebi->eab", grad, grad) * detj[:, None, None]
                vol += detj
    return ke, vol


_ELEMENT_CACHE: dict = {}
_ELEMENT_CACHE_LOCK = threading.Lock()


def element_matrices(mesh: Mesh):
    """Unit-conductivity element stiffness matrices and element measures (SI).

    Results are memoized on the mesh geometry, which sweeps share across
    conductivity conditions.
    """
    key = fingerprint_arrays(mesh.flavor, mesh.nodes, mesh.elements)
    with _ELEMENT_CACHE_LOCK:
        hit = _ELEMENT_CACHE.get(key)
    if hit is None:
        hit = _element_matrices(mesh)
        with _ELEMENT_CACHE_LOCK:
            if len(_ELEMENT_CACHE) > 16:
                _ELEMENT_CACHE.clear()
            _ELEMENT_CACHE[key] = hit
    return hit


def _element_matrices(mesh: Mesh):
    if mesh.is_shell:
        ke, measure = _triangle_stiffness(mesh.nodes, mesh.elements)
        if np.any(measure <= 0):
            bad = int(np.flatnonzero(measure <= 0)[0])
            raise AssemblyError(f"degenerate triangle {bad}")
    else:
        ke, measure = _hex_stiffness(mesh.nodes, mesh.elements)
    # sparsity pattern and the CSR slot of every element-matrix entry
    conn = mesh.elements
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    n = mesh.n_nodes
    pattern = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    pattern.sum_duplicates()
    pattern.sort_indices()
    flat = rows.astype(np.int64) * n + cols
    keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.indptr)) * n + pattern.indices
    slot = np.searchsorted(keys, flat)
    return ke, measure, pattern, slot


@dataclass(eq=False)
class StiffnessSystem:
    """Assembled global matrix with a per-Dirichlet-set factorization cache."""

    mesh: Mesh
    matrix: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def floating_nodes(self, fixed) -> np.ndarray:
        """Nodes whose connected conducting component holds no fixed node."""
        graph = self.matrix.copy()
        graph.eliminate_zeros()
        _, label = connected_components(graph, directed=False)
        anchored = np.zeros(label.max() + 1, dtype=bool)
        anchored[label[np.asarray(fixed, dtype=np.int64)]] = True
        return np.flatnonzero(~anchored[label])

    def factor(self, fixed: np.ndarray):
        """Factorization of the matrix restricted to the nodes not in ``fixed``."""
        fixed = np.unique(np.asarray(fixed, dtype=np.int64))
        key = fixed.tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        free = np.setdiff1d(np.arange(self.n), fixed, assume_unique=True)
        floating = self.floating_nodes(fixed)
        if floating.size:
            raise NumericalError(
                f"reduced system is singular: {floating.size} nodes (e.g. "
                f"{floating[:5].tolist()}) have no conducting path to a Dirichlet node")
        kff = self.matrix[free][:, free].tocsc()
        try:
            lu = spla.splu(kff, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise NumericalError(f"factorization failed: {exc}") from exc
        kfd = self.matrix[free][:, fixed].tocsr()
        entry = (free, kff, kfd, spla.norm(kff, 1), lu)
        with self._lock:
            self._cache[key] = entry
        return entry


@dataclass(frozen=True, eq=False)
class FieldSolution:
    phi: np.ndarray
    residual: float
    mesh: Mesh


def assemble(mesh: Mesh) -> StiffnessSystem:
    """Global stiffness matrix K with K[i, j] = sum_e sigma_e * integral grad N_i . grad N_j."""
    ke, _, pattern, slot = element_matrices(mesh)
    data = np.bincount(slot, weights=(ke * np.asarray(mesh.sigma)[:, None, None]).ravel(),
                       minlength=pattern.nnz)
    mat = sp.csr_matrix((data, pattern.indices, pattern.indptr), shape=pattern.shape)
    return StiffnessSystem(mesh=mesh, matrix=mat)


def solve_block(system: StiffnessSystem, bc: DirichletSet, sources=None):
    """Solve for one or more right-hand sides sharing the Dirichlet node set.

    ``sources`` is an (N,) or (N, k) array of injected nodal currents in A.
    Returns ``(phi, residual)`` where ``phi`` has the trailing shape of
    ``sources`` and ``residual`` is the worst relative backward residual.
    """
    free, kff, kfd, knorm, lu = system.factor(bc.nodes)
    order = np.argsort(bc.nodes)
    fixed, vals = bc.nodes[order], bc.values[order]
    if sources is None:
        sources = np.zeros(system.n)
    sources = np.asarray(sources, dtype=float)
    single = sources.ndim == 1
    s = sources[:, None] if single else sources

    rhs = s[free] - (kfd @ vals)[:, None]
    uf = lu.solve(np.ascontiguousarray(rhs))

    res = np.linalg.norm(kff @ uf - rhs, axis=0)
    scale = knorm * np.linalg.norm(uf, axis=0) + np.linalg.norm(rhs, axis=0)
    rel = np.where(scale > 0, res / np.where(scale > 0, scale, 1.0), 0.0)
    if np.any(rel > RESIDUAL_TOL):
        raise NumericalError(f"direct solve residual {rel.max():.3e} exceeds {RESIDUAL_TOL:g}")

    phi = np.empty((system.n, s.shape[1]))
    phi[free] = uf
    phi[fixed] = vals[:, None]
    return (phi[:, 0], float(rel.max())) if single else (phi, float(rel.max()))


def solve(system: StiffnessSystem, bc: DirichletSet, sources=None) -> FieldSolution:
    """Potentials satisfying the Dirichlet set exactly; free nodes are insulating."""
    phi, rel = solve_block(system, bc, sources)
    return FieldSolution(phi=phi, residual=rel, mesh=system.mesh)


def interface_current(sol: FieldSolution, layer) -> tuple[float, float]:
    """Vertical current through a horizontal element layer of a volume mesh.

    ``layer`` is a tag name from ``mesh.element_tags`` or an array of element
    ids.  Per element the current density is sigma * (mean top potential -
    mean bottom potential) / element height, so downward current is positive.
    Returns (total current in A, peak density in A/m^2).
    """
    mesh = sol.mesh
    if mesh.is_shell:
        raise ValueError("interface currents need a volume mesh")
    ids = mesh.element_tags.get(layer) if isinstance(layer, str) else np.asarray(layer)
    if ids is None or len(ids) == 0:
        raise ValueError(f"element layer {layer!r} is empty or missing")
    conn = mesh.elements[ids]
    top = sol.phi[conn[:, 4:]].mean(axis=1)
    bottom = sol.phi[conn[:, :4]].mean(axis=1)
    p = mesh.nodes[conn] * MM
    h = p[:, 6, 2] - p[:, 0, 2]
    area = (p[:, 6, 0] - p[:, 0, 0]) * (p[:, 6, 1] - p[:, 0, 1])
    density = mesh.sigma[ids] * (top - bottom) / h
    return float(np.sum(density * area)), float(np.max(np.abs(density)))


def write_potentials_csv(sol: FieldSolution, path) -> None:
    from .serialization import fmt
    with open(path, "w") as fh:
        fh.write("id,x,y,z,phi\n")
        for i, ((x, y, z), v) in enumerate(zip(sol.mesh.nodes, sol.phi)):
            fh.write(f"{i},{fmt(x)},{fmt(y)},{fmt(z)},{fmt(v)}\n")

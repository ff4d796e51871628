"""Structured detector meshes.

Two flavors are supported: a 2D thin-shell triangulation of the sensor plane
(used for the reconstruction Jacobian) and a 3D hexahedral block of the
detector volume (used for forward simulation).  All coordinates are in mm
with the sensor plane centred on the origin; the volume extends from z=0
(bottom, electrodes) to z=height (top, contact side).
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

SHELL = "shell2D"
VOLUME = "volume3D"

# inclusive boundary slack for point-in-disc tests (mm)
_DISC_EPS = 1e-9

# hexahedron local node order: bottom quad counter-clockwise, then top quad
_HEX_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)


class ConfigurationError(ValueError):
    """Invalid geometry, region or conductivity configuration."""


@dataclass(frozen=True)
class GradientSpec:
    """Exponential conductivity profile through the detector thickness."""

    sigma_low: float
    sigma_up: float
    y_min: float = 0.0
    y_max: float = 10.0

    def __post_init__(self):
        if not (self.sigma_low > 0 and self.sigma_up > 0):
            raise ConfigurationError(
                f"conductivities must be positive, got sigma_low={self.sigma_low}, "
                f"sigma_up={self.sigma_up}")
        if not self.y_max > self.y_min:
            raise ConfigurationError("y_max must exceed y_min")

    def __call__(self, y):
        t = (np.asarray(y, dtype=float) - self.y_min) / (self.y_max - self.y_min)
        return self.sigma_low * (self.sigma_up / self.sigma_low) ** t


@dataclass(frozen=True)
class ElectrodeLayout:
    """Square grid of circular electrodes on the bottom face.

    Electrodes are numbered row-major with x running fastest, starting at the
    (-x, -y) corner.  ``pitch=None`` spreads the grid evenly over the face,
    i.e. pitch = width / count.
    """

    count: int = 4
    diameter: float = 4.0
    pitch: float | None = None

    @property
    def n_electrodes(self) -> int:
        return self.count * self.count

    def centers(self, width: float, depth: float) -> np.ndarray:
        px = self.pitch if self.pitch is not None else width / self.count
        py = self.pitch if self.pitch is not None else depth / self.count
        off = np.arange(self.count) - (self.count - 1) / 2
        xs, ys = off * px, off * py
        gx, gy = np.meshgrid(xs, ys)  # x fastest in ravel order
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class ContactSpec:
    center: tuple[float, float] = (0.0, 0.0)
    diameter: float = 4.0
    sigma_drv: float = 1.0

    def __post_init__(self):
        if self.sigma_drv < 0:
            raise ConfigurationError("sigma_drv must be non-negative")
        if self.diameter <= 0:
            raise ConfigurationError("contact diameter must be positive")


@dataclass(frozen=True)
class AdhesionSpec:
    """Dot-pattern conductive bonding between two stacked layers.

    ``layer`` is the index (counted from the bottom) of the element layer
    that carries the dot mask.  ``None`` picks the middle layer.
    """

    n: int = 5
    diameter: float = 7.22
    sigma_in: float = 1.0
    sigma_out: float = 1e-9
    layer: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("dot grid needs n >= 1")
        if self.diameter <= 0:
            raise ConfigurationError("dot diameter must be positive")

    def pitch(self, width: float) -> float:
        return width / self.n

    def full_coverage_diameter(self, width: float) -> float:
        return self.pitch(width) * math.sqrt(2.0)


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable structured mesh.

    Attributes
    ----------
    flavor : str
        ``"shell2D"`` (triangles) or ``"volume3D"`` (trilinear hexahedra).
    nodes : (N, 3) float array, mm
    elements : (E, 3) or (E, 8) int array
    sigma : (E,) float array, S/m
    electrodes : tuple of int arrays
        Node ids of each electrode in canonical order.
    divisions : tuple of int
        ``(nx, ny)`` for shells, ``(nx, ny, nz)`` for volumes.
    extent : tuple of float
        ``(width, depth)`` or ``(width, depth, height)`` in mm.
    node_tags, element_tags : dict
        Named node/element sets (``"drive"``, ``"contact"``, ``"interface"``).
    """

    flavor: str
    nodes: np.ndarray
    elements: np.ndarray
    sigma: np.ndarray
    electrodes: tuple
    divisions: tuple
    extent: tuple
    node_tags: dict = field(default_factory=dict)
    element_tags: dict = field(default_factory=dict)
    layout: ElectrodeLayout | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_electrodes(self) -> int:
        return len(self.electrodes)

    @property
    def width(self) -> float:
        return self.extent[0]

    @property
    def is_shell(self) -> bool:
        return self.flavor == SHELL

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def measures(self) -> np.ndarray:
        """Element areas (shell, mm^2) or volumes (hexahedra, mm^3)."""
        if self.is_shell:
            p = self.nodes[self.elements]
            d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
            return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        p = self.nodes[self.elements]
        span = p[:, 6] - p[:, 0]
        return np.prod(span, axis=1)

    def with_sigma(self, sigma) -> "Mesh":
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (self.n_elements,))
        return dataclasses.replace(self, sigma=_frozen(sigma))

    def top_nodes(self) -> np.ndarray:
        if self.is_shell:
            return np.arange(self.n_nodes)
        nx, ny, nz = self.divisions
        per = (nx + 1) * (ny + 1)
        return np.arange(nz * per, (nz + 1) * per)

    def bottom_nodes(self) -> np.ndarray:
        if self.is_shell:
            return np.arange(self.n_nodes)
        nx, ny, _ = self.divisions
        return np.arange((nx + 1) * (ny + 1))

    def layer_elements(self, k: int) -> np.ndarray:
        """Element ids of horizontal layer ``k`` (0 = bottom) of a volume mesh."""
        if self.is_shell:
            raise ConfigurationError("shell meshes have no element layers")
        nx, ny, nz = self.divisions
        if not 0 <= k < nz:
            raise ConfigurationError(f"layer {k} outside 0..{nz - 1}")
        per = nx * ny
        return np.arange(k * per, (k + 1) * per)

    def layout_fingerprint(self) -> str:
        """Identity of the sensor plane and electrode arrangement, independent of meshing."""
        from .serialization import fingerprint_config
        lay = self.layout
        return fingerprint_config({
            "plane": [round(v, 9) for v in self.extent[:2]],
            "layout": None if lay is None else dataclasses.asdict(lay),
        })

    def fingerprint(self) -> str:
        from .serialization import fingerprint_arrays
        return fingerprint_arrays(
            self.flavor, self.nodes, self.elements, self.sigma,
            *self.electrodes, *(self.node_tags[k] for k in sorted(self.node_tags)))


def _disc_nodes(xy: np.ndarray, candidates: np.ndarray, center, radius: float) -> np.ndarray:
    d = np.hypot(xy[candidates, 0] - center[0], xy[candidates, 1] - center[1])
    return candidates[d <= radius + _DISC_EPS]


def _electrode_sets(nodes, candidates, layout: ElectrodeLayout, width, depth):
    centers = layout.centers(width, depth)
    half_w, half_d = width / 2, depth / 2
    r = layout.diameter / 2
    sets = []
    for i, c in enumerate(centers):
        if abs(c[0]) + r >= half_w or abs(c[1]) + r >= half_d:
            raise ConfigurationError(f"electrode {i} at {tuple(c)} is not inside the bottom face")
        ids = _disc_nodes(nodes, candidates, c, r)
        if ids.size == 0:
            raise ConfigurationError(
                f"electrode {i} at ({c[0]:g}, {c[1]:g}) mm covers no mesh node; "
                "refine the mesh or enlarge the electrode")
        sets.append(_frozen(ids))
    return tuple(sets)


def build_shell_mesh(width: float = 60.0, depth: float = 60.0, divisions: int = 45,
                     layout: ElectrodeLayout | None = None, sigma: float = 1.0) -> Mesh:
    """Triangulated thin-shell model of the sensor plane.

    Each of the ``divisions**2`` grid squares is split into two triangles
    along its (i, j)-(i+1, j+1) diagonal.
    """
    if divisions < 1:
        raise ConfigurationError("divisions must be >= 1")
    if width <= 0 or depth <= 0:
        raise ConfigurationError("width and depth must be positive")
    if sigma <= 0:
        raise ConfigurationError("shell conductivity must be positive")
    layout = layout or ElectrodeLayout()
    n = divisions
    xs = np.linspace(-width / 2, width / 2, n + 1)
    ys = np.linspace(-depth / 2, depth / 2, n + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    n00 = j * (n + 1) + i
    n10, n01, n11 = n00 + 1, n00 + n + 1, n00 + n + 2
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    # two triangles per square, adjacent in element numbering
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)

    electrodes = _electrode_sets(nodes, np.arange(len(nodes)), layout, width, depth)
    return Mesh(
        flavor=SHELL,
        nodes=_frozen(nodes),
        elements=_frozen(elements),
        sigma=_frozen(np.full(len(elements), float(sigma))),
        electrodes=electrodes,
        divisions=(n, n),
        extent=(float(width), float(depth)),
        layout=layout,
    )


def build_volume_mesh(width: float = 60.0, depth: float = 60.0, height: float = 10.0,
                      divisions=(30, 30, 5), grad: GradientSpec | None = None,
                      layout: ElectrodeLayout | None = None) -> Mesh:
    """Hexahedral detector block with exponential conductivity grading.

    Element conductivity is the grading profile evaluated at the element
    centroid height.  When ``grad`` is omitted a uniform 1 S/m block over
    ``[0, height]`` is produced.
    """
    nx, ny, nz = (int(d) for d in divisions)
    if min(nx, ny, nz) < 1:
        raise ConfigurationError("all divisions must be >= 1")
    if min(width, depth, height) <= 0:
        raise ConfigurationError("detector extents must be positive")
    grad = grad or GradientSpec(1.0, 1.0, 0.0, height)
    layout = layout or ElectrodeLayout()

    xs = np.linspace(-width / 2, width / 2, nx + 1)
    ys = np.linspace(-depth / 2, depth / 2, ny + 1)
    zs = np.linspace(0.0, height, nz + 1)
    gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    k, j, i = (a.ravel() for a in np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                                              indexing="ij"))
    oi, oj, ok = _HEX_OFFSETS.T
    elements = ((k[:, None] + ok) * (ny + 1) + (j[:, None] + oj)) * (nx + 1) + (i[:, None] + oi)

    zc = 0.5 * (zs[:-1] + zs[1:])[k]
    sigma = grad(zc)
    if not np.all(sigma > 0):
        raise ConfigurationError("graded conductivity must be positive everywhere")

    per = (nx + 1) * (ny + 1)
    electrodes = _electrode_sets(nodes, np.arange(per), layout, width, depth)
    return Mesh(
        flavor=VOLUME,
        nodes=_frozen(nodes),
        elements=_frozen(elements),
        sigma=_frozen(sigma),
        electrodes=electrodes,
        divisions=(nx, ny, nz),
        extent=(float(width), float(depth), float(height)),
        layout=layout,
    )


def dot_mask(mesh: Mesh, adhesion: AdhesionSpec, element_ids: np.ndarray) -> np.ndarray:
    """Boolean mask of ``element_ids`` whose centroid lies inside a dot."""
    width, depth = mesh.extent[:2]
    px, py = width / adhesion.n, depth / adhesion.n
    c = mesh.centroids()[element_ids]
    # nearest dot centre per element; dots sit at cell centres of an n x n grid
    ix = np.clip(np.floor((c[:, 0] + width / 2) / px), 0, adhesion.n - 1)
    iy = np.clip(np.floor((c[:, 1] + depth / 2) / py), 0, adhesion.n - 1)
    dx = c[:, 0] - (-width / 2 + (ix + 0.5) * px)
    dy = c[:, 1] - (-depth / 2 + (iy + 0.5) * py)
    return np.hypot(dx, dy) <= adhesion.diameter / 2 + _DISC_EPS


def apply_regions(mesh: Mesh, contact: ContactSpec | None,
                  adhesion: AdhesionSpec | None = None) -> Mesh:
    """Tag drive nodes, contact elements and an optional adhesion layer.

    Drive nodes are the top-face nodes inside the contact disc.  Contact
    elements are the top-layer elements incident to a drive node; they get
    ``contact.sigma_drv`` so every drive current passes through them.  With
    ``adhesion``, the interface layer receives in-dot/out-of-dot
    conductivities.
    """
    sigma = np.array(mesh.sigma, dtype=float)
    node_tags = dict(mesh.node_tags)
    element_tags = dict(mesh.element_tags)
    width, depth = mesh.extent[:2]

    if adhesion is not None:
        if mesh.is_shell:
            raise ConfigurationError("adhesion layers need a volume mesh")
        nz = mesh.divisions[2]
        layer = adhesion.layer if adhesion.layer is not None else nz // 2
        ids = mesh.layer_elements(layer)
        inside = dot_mask(mesh, adhesion, ids)
        if not inside.any():
            logger.warning("adhesion mask with %dx%d dots of %.3g mm covers no element",
                           adhesion.n, adhesion.n, adhesion.diameter)
        sigma[ids] = np.where(inside, adhesion.sigma_in, adhesion.sigma_out)
        element_tags["interface"] = _frozen(ids)
        element_tags["dots"] = _frozen(ids[inside])

    if contact is not None:
        cx, cy = contact.center
        r = contact.diameter / 2
        if abs(cx) + r > width / 2 or abs(cy) + r > depth / 2:
            raise ConfigurationError(f"contact disc at {contact.center} leaves the top face")
        top = mesh.top_nodes()
        drive = _disc_nodes(mesh.nodes, top, (cx, cy), r)
        if drive.size == 0:
            raise ConfigurationError(
                f"contact disc at ({cx:g}, {cy:g}) mm with diameter {contact.diameter:g} "
                "covers no mesh node")
        if mesh.is_shell:
            candidates = np.arange(mesh.n_elements)
        else:
            candidates = mesh.layer_elements(mesh.divisions[2] - 1)
        hit = np.isin(mesh.elements[candidates], drive).any(axis=1)
        contact_ids = candidates[hit]
        sigma[contact_ids] = contact.sigma_drv
        node_tags["drive"] = _frozen(drive)
        element_tags["contact"] = _frozen(contact_ids)

    return dataclasses.replace(mesh, sigma=_frozen(sigma), node_tags=node_tags,
                               element_tags=element_tags)


def write_mesh_csv(mesh: Mesh, path) -> None:
    """Debug dump with NODES, ELEMENTS and ELECTRODES sections."""
    from .serialization import fmt
    with open(path, "w") as fh:
        fh.write("NODES\nid,x,y,z\n")
        for i, (x, y, z) in enumerate(mesh.nodes):
            fh.write(f"{i},{fmt(x)},{fmt(y)},{fmt(z)}\n")
        k = mesh.elements.shape[1]
        fh.write("ELEMENTS\nid," + ",".join(f"n{j}" for j in range(k)) + ",sigma\n")
        for i, (conn, s) in enumerate(zip(mesh.elements, mesh.sigma)):
            fh.write(f"{i}," + ",".join(str(int(n)) for n in conn) + f",{fmt(s)}\n")
        fh.write("ELECTRODES\nid,node_ids\n")
        for i, ids in enumerate(mesh.electrodes):
            fh.write(f"{i}," + ",".join(str(int(n)) for n in ids) + "\n")

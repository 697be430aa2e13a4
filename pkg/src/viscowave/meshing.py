"""Cross-section meshes: 1-D through-thickness spectral elements for
laminates and 9-node quadrilaterals for general 2-D cross-sections.

Coordinates are physical (meters); nondimensionalization happens at
assembly time.  Line elements carry Gauss-Lobatto-Legendre (GLL) nodes
with collocated quadrature; quad9 elements use 3x3 Gauss quadrature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

from .materials import LaminateSpec

LINE = "line"
QUAD9 = "quad9"

DOF_PER_NODE = 3


class MeshError(ValueError):
    pass


def gll_points_weights(order: int):
    """GLL nodes and quadrature weights on [-1, 1] for a given element order.

    order p yields p+1 nodes: the endpoints plus the roots of P_p'.
    """
    if order < 1:
        raise MeshError("element order must be >= 1")
    if order == 1:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    coeffs = np.zeros(order + 1)
    coeffs[order] = 1.0
    interior = legendre.legroots(legendre.legder(coeffs))
    pts = np.concatenate(([-1.0], np.real(interior), [1.0]))
    lp = legendre.legval(pts, coeffs)
    wts = 2.0 / (order * (order + 1) * lp**2)
    return pts, wts


def lagrange_diff_matrix(pts: np.ndarray) -> np.ndarray:
    """D[q, i] = derivative of the i-th Lagrange basis at node q."""
    n = len(pts)
    d = np.zeros((n, n))
    # barycentric weights
    w = np.ones(n)
    for i in range(n):
        for j in range(n):
            if i != j:
                w[i] /= pts[i] - pts[j]
    for q in range(n):
        for i in range(n):
            if i != q:
                d[q, i] = (w[i] / w[q]) / (pts[q] - pts[i])
        d[q, q] = -np.sum(d[q, [i for i in range(n) if i != q]])
    return d


@dataclass(frozen=True)
class Element:
    kind: str
    nodes: tuple[int, ...]
    material: str
    order: int = 1  # line elements only
    angle_deg: float = 0.0  # in-plane rotation applied to the material


@dataclass
class Mesh:
    """Nodes (y, z in meters) plus elements referencing them."""

    nodes: np.ndarray
    elements: list[Element]

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        if self.nodes.shape[1] != 2:
            raise MeshError("nodes must be (N, 2) coordinates")
        n = len(self.nodes)
        for el in self.elements:
            if min(el.nodes) < 0 or max(el.nodes) >= n:
                raise MeshError("element references node out of range")
            if el.kind == LINE and len(el.nodes) != el.order + 1:
                raise MeshError("line element node count must be order + 1")
            if el.kind == QUAD9 and len(el.nodes) != 9:
                raise MeshError("quad9 element must have 9 nodes")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return DOF_PER_NODE * len(self.nodes)

    @property
    def is_line_mesh(self) -> bool:
        return all(el.kind == LINE for el in self.elements)

    def check_duplicates(self, char_length: float):
        tol = 1e-12 * char_length
        order = np.lexsort((self.nodes[:, 1], self.nodes[:, 0]))
        pts = self.nodes[order]
        d = np.abs(np.diff(pts, axis=0)).sum(axis=1)
        if len(d) and d.min() < tol:
            raise MeshError("duplicate nodes within tolerance")

    def material_names(self) -> set[str]:
        return {el.material for el in self.elements}


def build_laminate_mesh(spec: LaminateSpec, elems_per_ply: int, order: int) -> Mesh:
    """1-D through-thickness mesh centered on the laminate mid-plane.

    Each ply is split into elems_per_ply GLL elements of the given order;
    interface nodes are shared, so the DOF count is
    3 * (n_elements * order + 1).
    """
    if elems_per_ply < 1:
        raise MeshError("elems_per_ply must be >= 1")
    ref_pts, _ = gll_points_weights(order)
    z_nodes = []
    elements = []
    h = spec.total_thickness
    z_lo = -0.5 * h
    next_index = 0
    for ply in spec.plies:
        dz = ply.thickness / elems_per_ply
        angle = ply.angle_deg - spec.propagation_angle
        for e in range(elems_per_ply):
            z0 = z_lo + e * dz
            zs = z0 + 0.5 * (ref_pts + 1.0) * dz
            if not z_nodes:
                z_nodes.extend(zs)
                idx = tuple(range(order + 1))
                next_index = order + 1
            else:
                # first node shared with the previous element
                z_nodes.extend(zs[1:])
                idx = tuple([next_index - 1] + list(range(next_index, next_index + order)))
                next_index += order
            elements.append(Element(LINE, idx, ply.material, order=order,
                                    angle_deg=angle))
        z_lo += ply.thickness
    coords = np.column_stack([np.zeros(len(z_nodes)), np.asarray(z_nodes)])
    return Mesh(coords, elements)


def build_rect_quad9(y_range, z_range, ny: int, nz: int, material: str,
                     node_lookup=None, nodes=None):
    """quad9 elements tiling a rectangle; shares nodes via node_lookup."""
    if node_lookup is None:
        node_lookup = {}
        nodes = []
    y0, y1 = y_range
    z0, z1 = z_range
    ys = np.linspace(y0, y1, 2 * ny + 1)
    zs = np.linspace(z0, z1, 2 * nz + 1)

    def node_id(iy, iz):
        key = (round(ys[iy], 12), round(zs[iz], 12))
        if key not in node_lookup:
            node_lookup[key] = len(nodes)
            nodes.append(key)
        return node_lookup[key]

    elements = []
    for ez in range(nz):
        for ey in range(ny):
            iy0, iz0 = 2 * ey, 2 * ez
            # tensor ordering: local (a, b) -> 3*b + a
            conn = tuple(node_id(iy0 + a, iz0 + b) for b in range(3) for a in range(3))
            elements.append(Element(QUAD9, conn, material))
    return elements, node_lookup, nodes


def build_lbar_mesh(long_leg: float, short_leg: float, thickness: float,
                    elem_size: float, material: str = "aluminum") -> Mesh:
    """L-shaped cross-section: a horizontal arm [0, long_leg] x [0, thickness]
    plus a vertical arm [0, thickness] x [thickness, short_leg]."""
    ny1 = max(1, round(long_leg / elem_size))
    nz1 = max(1, round(thickness / elem_size))
    ny2 = max(1, round(thickness / elem_size))
    nz2 = max(1, round((short_leg - thickness) / elem_size))
    lookup, nodes = {}, []
    els1, lookup, nodes = build_rect_quad9((0.0, long_leg), (0.0, thickness),
                                           ny1, nz1, material, lookup, nodes)
    els2, lookup, nodes = build_rect_quad9((0.0, thickness), (thickness, short_leg),
                                           ny2, nz2, material, lookup, nodes)
    return Mesh(np.array(nodes), els1 + els2)


def mesh_to_json(mesh: Mesh) -> dict:
    return {
        "nodes": [[float(y), float(z)] for y, z in mesh.nodes],
        "elements": [
            {"kind": el.kind, "nodes": list(el.nodes), "material": el.material,
             "order": el.order, "angle_deg": el.angle_deg}
            for el in mesh.elements
        ],
    }


def mesh_from_json(doc) -> Mesh:
    if isinstance(doc, (str, bytes)) or hasattr(doc, "__fspath__"):
        with open(doc, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    elements = [
        Element(e["kind"], tuple(e["nodes"]), e["material"], order=e.get("order", 1),
                angle_deg=e.get("angle_deg", 0.0))
        for e in doc["elements"]
    ]
    return Mesh(np.asarray(doc["nodes"], dtype=float), elements)

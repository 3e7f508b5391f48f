"""Triangulation of the layered rectangular domain with heated bottom segments.

The mesh is a structured, locally graded grid of quadrilateral cells split
into triangles.  Grid lines are forced through the layer interfaces and the
endpoints of every heated bottom segment ("alveolus"), so element region tags
and boundary-edge tags are exact.  Construction is fully deterministic for a
given config.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# boundary edge tags
TAG_TOP = 0        # traction-loaded top boundary
TAG_ALVEOLUS = 1   # heated segments on the bottom boundary
TAG_LATERAL = 2    # x = 0 and x = width
TAG_BOTTOM = 3     # bottom boundary outside the alveoli

# material layer codes (bottom to top)
REGION_UA = 0
REGION_UT = 1
REGION_USC = 2

REGION_NAMES = ("UA", "UT", "USC")

_GEOM_TOL = 1e-12

# Symmetric degree-4 quadrature on the reference triangle (two 3-point
# orbits); barycentric weights sum to one so physical weights are w * |D_k|.
_QUAD_A = 0.445948490915965
_QUAD_B = 0.091576213509771
_QUAD_WA = 0.223381589678011
_QUAD_WB = 0.109951743655322


def reference_quadrature():
    """Quadrature points (in reference coordinates) and weights, degree 4."""
    pts = []
    wts = []
    for a, w in ((_QUAD_A, _QUAD_WA), (_QUAD_B, _QUAD_WB)):
        bary = [(1.0 - 2.0 * a, a, a), (a, 1.0 - 2.0 * a, a), (a, a, 1.0 - 2.0 * a)]
        for l1, l2, l3 in bary:
            pts.append((l2, l3))
            wts.append(w)
    return np.array(pts), np.array(wts)


@dataclass
class MeshConfig:
    """Geometry and grading parameters for :func:`build_mesh`.

    Lengths are nondimensional (domain height = ``height``).  The default
    alveolus layout places two segments of physical width 3.09 m symmetric
    about the domain centre with 6.18 m centre spacing, scaled by the 77.3 m
    reference height.  ``refinement_factor`` is the coarse/fine grid-spacing
    ratio inside the band around the alveoli.
    """

    width: float = 1.0
    height: float = 1.0
    layer_fractions: tuple[float, float] = (1.3 / 4.0, 2.5 / 4.0)
    alveolus_centers: tuple[float, ...] = (0.5 - 3.09 / 77.3, 0.5 + 3.09 / 77.3)
    alveolus_width: float = 3.09 / 77.3
    h_coarse: float = 0.08
    refinement_factor: float = 4.0
    band_pad: float = 0.05
    band_height: float = 0.08

    def alveolus_intervals(self):
        half = 0.5 * self.alveolus_width
        return [(c - half, c + half) for c in sorted(self.alveolus_centers)]

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("domain dimensions must be positive")
        if self.h_coarse <= 0:
            raise ValueError("h_coarse must be positive")
        if self.refinement_factor < 1.0:
            raise ValueError("refinement_factor must be >= 1")
        lo, hi = self.layer_fractions
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("layer fractions must satisfy 0 < f1 < f2 < 1")
        if self.alveolus_centers and self.alveolus_width <= 0:
            raise ValueError("alveolus_width must be positive")
        ivs = self.alveolus_intervals()
        for a, b in ivs:
            if a < _GEOM_TOL or b > self.width - _GEOM_TOL:
                raise ValueError("alveolus outside the bottom edge")
        for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
            if b0 >= a1 - _GEOM_TOL:
                raise ValueError("alveoli overlap")


@dataclass
class Mesh:
    """Triangulation with per-element quadrature and boundary tagging.

    ``elements`` holds vertex connectivity (counter-clockwise).  Boundary
    edges are stored as ``(element, local_edge)`` pairs so Neumann terms can
    be attributed to the owning element.  Geometric derived data (areas,
    quadrature, gradient maps) is rebuilt deterministically from nodes and
    connectivity.
    """

    nodes: np.ndarray            # (n_nodes, 2)
    elements: np.ndarray         # (n_elems, 3) int
    element_region: np.ndarray   # (n_elems,) int
    boundary_edges: np.ndarray   # (n_bedges, 2) int: [element, local_edge]
    boundary_tags: np.ndarray    # (n_bedges,) int
    config: MeshConfig | None = None

    element_areas: np.ndarray = field(init=False)
    grad_map: np.ndarray = field(init=False)       # (n_elems, 2, 2), J^{-T}
    quad_points: np.ndarray = field(init=False)    # (n_elems, n_q, 2)
    quad_weights: np.ndarray = field(init=False)   # (n_elems, n_q)
    quad_ref: np.ndarray = field(init=False)
    quad_ref_w: np.ndarray = field(init=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.element_region = np.asarray(self.element_region, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype=np.int64)
        if self.elements.min(initial=0) < 0 or self.elements.max(initial=-1) >= len(self.nodes):
            raise ValueError("connectivity index out of range")
        v0 = self.nodes[self.elements[:, 0]]
        e1 = self.nodes[self.elements[:, 1]] - v0
        e2 = self.nodes[self.elements[:, 2]] - v0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            raise ValueError("degenerate or inverted element")
        self.element_areas = 0.5 * det
        inv = np.empty((len(det), 2, 2))
        inv[:, 0, 0] = e2[:, 1] / det
        inv[:, 0, 1] = -e1[:, 1] / det
        inv[:, 1, 0] = -e2[:, 0] / det
        inv[:, 1, 1] = e1[:, 0] / det
        # rows of inv are the reference-gradient directions: grad_map = J^{-T}
        self.grad_map = inv
        ref, w = reference_quadrature()
        self.quad_ref = ref
        self.quad_ref_w = w
        # x_q = v0 + J @ xi
        jmat = np.stack([e1, e2], axis=-1)            # (ne, 2, 2)
        self.quad_points = v0[:, None, :] + np.einsum("eij,qj->eqi", jmat, ref)
        self.quad_weights = w[None, :] * self.element_areas[:, None]

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_quad(self):
        return self.quad_ref.shape[0]

    def edges_with_tag(self, tag):
        sel = self.boundary_tags == tag
        return self.boundary_edges[sel]

    def edge_nodes(self, elem, local_edge):
        conn = self.elements[elem]
        return conn[local_edge], conn[(local_edge + 1) % 3]

    def to_json(self, path):
        payload = {
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "element_region": self.element_region.tolist(),
            "boundary_edges": self.boundary_edges.tolist(),
            "boundary_tags": self.boundary_tags.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            nodes=np.array(payload["nodes"], dtype=float),
            elements=np.array(payload["elements"], dtype=np.int64),
            element_region=np.array(payload["element_region"], dtype=np.int64),
            boundary_edges=np.array(payload["boundary_edges"], dtype=np.int64).reshape(-1, 2),
            boundary_tags=np.array(payload["boundary_tags"], dtype=np.int64),
        )


def _graded_segment(a, b, h_start, h_end):
    """Interior spacing from ``h_start`` at ``a`` to ``h_end`` at ``b``.

    Returns the points strictly inside (a, b); endpoints are handled by the
    caller.  Spacings follow a geometric progression.
    """
    length = b - a
    if length <= _GEOM_TOL:
        return np.empty(0)
    h_avg = 0.5 * (h_start + h_end)
    n = max(1, int(np.ceil(length / h_avg)))
    if n == 1:
        return np.empty(0)
    if abs(h_end - h_start) < 1e-14 * h_avg:
        steps = np.ones(n)
    else:
        q = (h_end / h_start) ** (1.0 / (n - 1))
        steps = q ** np.arange(n)
    cum = np.cumsum(steps)
    return a + length * cum[:-1] / cum[-1]


def _axis_points(features, spans):
    """Assemble sorted axis coordinates from per-span grading specs.

    ``features`` are mandatory coordinates; ``spans`` maps each consecutive
    feature interval to (h_start, h_end).
    """
    pts = [features[0]]
    for (a, b), (h0, h1) in zip(zip(features, features[1:]), spans):
        pts.extend(_graded_segment(a, b, h0, h1).tolist())
        pts.append(b)
    return np.array(pts)


def build_mesh(config: MeshConfig) -> Mesh:
    """Build the layered, alveolus-refined triangulation."""
    config.validate()
    w, h = config.width, config.height
    h_coarse = config.h_coarse
    h_fine = h_coarse / config.refinement_factor
    intervals = config.alveolus_intervals()

    # x features: domain ends, alveolus endpoints and refinement band edges
    xf = {0.0, w}
    bands = []
    for a, b in intervals:
        xf.update((a, b))
        lo, hi = max(0.0, a - config.band_pad), min(w, b + config.band_pad)
        xf.update((lo, hi))
        bands.append((lo, hi))
    xfeat = np.array(sorted(xf))
    # drop features that collide (e.g. touching bands)
    keep = np.concatenate([[True], np.diff(xfeat) > 10 * _GEOM_TOL])
    xfeat = xfeat[keep]

    def in_band(x):
        return any(lo - _GEOM_TOL <= x <= hi + _GEOM_TOL for lo, hi in bands)

    xspans = []
    for a, b in zip(xfeat, xfeat[1:]):
        mid = 0.5 * (a + b)
        if intervals and in_band(mid):
            xspans.append((h_fine, h_fine))
        else:
            ha = h_fine if (intervals and in_band(a)) else h_coarse
            hb = h_fine if (intervals and in_band(b)) else h_coarse
            xspans.append((ha, hb))
    xs = _axis_points(xfeat, xspans)

    # y features: bottom, refinement band top, layer interfaces, top
    y1 = config.layer_fractions[0] * h
    y2 = config.layer_fractions[1] * h
    yf = {0.0, y1, y2, h}
    if intervals:
        yb = min(config.band_height, 0.9 * y1)
        yf.add(yb)
    yfeat = np.array(sorted(yf))
    keep = np.concatenate([[True], np.diff(yfeat) > 10 * _GEOM_TOL])
    yfeat = yfeat[keep]
    yspans = []
    for a, b in zip(yfeat, yfeat[1:]):
        if intervals and b <= config.band_height + _GEOM_TOL:
            yspans.append((h_fine, h_fine))
        elif intervals and a <= config.band_height + _GEOM_TOL:
            yspans.append((h_fine, h_coarse))
        else:
            yspans.append((h_coarse, h_coarse))
    ys = _axis_points(yfeat, yspans)

    nx, ny = len(xs), len(ys)
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(i, j):
        return j * nx + i

    elements = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            n00, n10 = nid(i, j), nid(i + 1, j)
            n01, n11 = nid(i, j + 1), nid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                elements.append((n00, n10, n11))
                elements.append((n00, n11, n01))
            else:
                elements.append((n00, n10, n01))
                elements.append((n10, n11, n01))
    elements = np.array(elements, dtype=np.int64)

    centroids_y = nodes[elements, 1].mean(axis=1)
    region = np.where(centroids_y < y1, REGION_UA,
                      np.where(centroids_y < y2, REGION_UT, REGION_USC))

    bedges = []
    btags = []
    tol = 10 * _GEOM_TOL * max(w, h, 1.0)
    for e, conn in enumerate(elements):
        for le in range(3):
            p = nodes[conn[le]]
            q = nodes[conn[(le + 1) % 3]]
            if abs(p[1]) < tol and abs(q[1]) < tol:
                xm = 0.5 * (p[0] + q[0])
                tag = TAG_BOTTOM
                for a, b in intervals:
                    if a - tol < xm < b + tol:
                        tag = TAG_ALVEOLUS
                        break
                bedges.append((e, le))
                btags.append(tag)
            elif abs(p[1] - h) < tol and abs(q[1] - h) < tol:
                bedges.append((e, le))
                btags.append(TAG_TOP)
            elif (abs(p[0]) < tol and abs(q[0]) < tol) or (
                abs(p[0] - w) < tol and abs(q[0] - w) < tol
            ):
                bedges.append((e, le))
                btags.append(TAG_LATERAL)

    return Mesh(
        nodes=nodes,
        elements=elements,
        element_region=region,
        boundary_edges=np.array(bedges, dtype=np.int64).reshape(-1, 2),
        boundary_tags=np.array(btags, dtype=np.int64),
        config=config,
    )


def restrict(mesh: Mesh, k: int, values: np.ndarray) -> np.ndarray:
    """Gather vertex-based coefficients of element ``k`` (one row per node)."""
    if not 0 <= k < mesh.n_elements:
        raise IndexError(f"element index {k} out of range")
    vals = np.asarray(values)
    return vals[mesh.elements[k]]

def alveolus_edge_groups(mesh: Mesh):
    """Connected groups of alveolus edges, one per heated segment."""
    edges = mesh.edges_with_tag(TAG_ALVEOLUS)
    segs = []
    for e, le in edges:
        a, b = mesh.edge_nodes(e, le)
        xs = sorted((mesh.nodes[a, 0], mesh.nodes[b, 0]))
        segs.append(tuple(xs))
    segs.sort()
    groups = []
    for seg in segs:
        if groups and abs(seg[0] - groups[-1][-1][1]) < 1e-9:
            groups[-1].append(seg)
        else:
            groups.append([seg])
    return groups

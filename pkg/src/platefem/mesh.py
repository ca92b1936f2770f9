"""Conforming triangulations with labeled boundary edges and refinement.

The mesh stores vertices, counterclockwise triangles and boundary edge
labels (clamped / simply supported / free).  Refinement comes in two
flavours: exact red (midpoint quadrisection) refinement, used for the
h/2 reference solutions, and newest-vertex bisection for the adaptive
loop.  Meshes are immutable after construction; refinement returns a
new mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

CORNER_ANGLE_TOL = 1e-9


class BoundaryLabel(Enum):
    CLAMPED = "C"
    SIMPLY_SUPPORTED = "S"
    FREE = "F"


# Dirichlet precedence at vertices shared by differently labeled edges.
LABEL_PRECEDENCE = {
    BoundaryLabel.CLAMPED: 0,
    BoundaryLabel.SIMPLY_SUPPORTED: 1,
    BoundaryLabel.FREE: 2,
}


class MeshError(Exception):
    """Malformed mesh file or non-conforming topology."""


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of a polygonal domain.

    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_labels : dict mapping sorted vertex pairs to BoundaryLabel
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_labels: dict
    generation: int = 0
    parent_triangles: np.ndarray | None = None
    # True when the vertex ordering already encodes the bisection
    # refinement edge (local edge 1-2); lets successive adaptive calls
    # keep the newest-vertex structure instead of re-deriving it.
    nvb_oriented: bool = False
    # Derived topology, filled by __post_init__.
    edges: np.ndarray = field(default=None, repr=False)
    tri_edges: np.ndarray = field(default=None, repr=False)
    tri_edge_sign: np.ndarray = field(default=None, repr=False)
    edge_tris: np.ndarray = field(default=None, repr=False)
    edge_label_idx: np.ndarray = field(default=None, repr=False)
    corner_set: frozenset = field(default=None, repr=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if not np.all(np.isfinite(verts)):
            raise MeshError("non-finite vertex coordinates")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("triangle with non-positive signed area")
        self._build_edges()
        object.__setattr__(self, "corner_set", self._find_corners())

    # -- topology -----------------------------------------------------

    def _build_edges(self):
        tris = self.triangles
        nt = len(tris)
        # Local edge e of a triangle connects vertices (e, (e+1) % 3).
        raw = np.stack(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1
        ).reshape(-1, 2)
        lo = raw.min(axis=1)
        hi = raw.max(axis=1)
        keys = np.stack([lo, hi], axis=1)
        uniq, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two triangles")
        tri_edges = inverse.reshape(nt, 3)
        tri_edge_sign = np.where(raw[:, 0] == lo, 1, -1).reshape(nt, 3)

        ne = len(uniq)
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        for t in range(nt):
            for le in range(3):
                e = tri_edges[t, le]
                if edge_tris[e, 0] < 0:
                    edge_tris[e, 0] = 3 * t + le
                else:
                    edge_tris[e, 1] = 3 * t + le

        # Labels: -1 interior, otherwise index into BoundaryLabel order.
        label_idx = -np.ones(ne, dtype=np.int64)
        labeled = dict(self.boundary_labels)
        order = [BoundaryLabel.CLAMPED, BoundaryLabel.SIMPLY_SUPPORTED,
                 BoundaryLabel.FREE]
        for e in range(ne):
            pair = (int(uniq[e, 0]), int(uniq[e, 1]))
            on_boundary = counts[e] == 1
            if pair in labeled:
                if not on_boundary:
                    raise MeshError(f"label on interior edge {pair}")
                label_idx[e] = order.index(labeled.pop(pair))
            elif on_boundary:
                raise MeshError(f"unlabeled boundary edge {pair}")
        if labeled:
            raise MeshError(f"labels refer to nonexistent edges: {sorted(labeled)}")

        object.__setattr__(self, "edges", uniq)
        object.__setattr__(self, "tri_edges", tri_edges)
        object.__setattr__(self, "tri_edge_sign", tri_edge_sign)
        object.__setattr__(self, "edge_tris", edge_tris)
        object.__setattr__(self, "edge_label_idx", label_idx)

    def _find_corners(self):
        """Vertices where two free edges meet at an interior angle != pi."""
        free = [e for e in range(len(self.edges))
                if self.edge_label(e) is BoundaryLabel.FREE]
        incident = {}
        for e in free:
            for v in self.edges[e]:
                incident.setdefault(int(v), []).append(e)
        corners = []
        for v, es in incident.items():
            if len(es) != 2:
                continue
            d = []
            for e in es:
                a, b = self.edges[e]
                other = int(b) if int(a) == v else int(a)
                vec = self.vertices[other] - self.vertices[v]
                d.append(vec / np.linalg.norm(vec))
            angle = np.arccos(np.clip(np.dot(d[0], d[1]), -1.0, 1.0))
            if abs(angle - np.pi) > CORNER_ANGLE_TOL:
                corners.append(v)
        return frozenset(corners)

    # -- queries ------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_label(self, e: int) -> BoundaryLabel | None:
        idx = self.edge_label_idx[e]
        if idx < 0:
            return None
        return [BoundaryLabel.CLAMPED, BoundaryLabel.SIMPLY_SUPPORTED,
                BoundaryLabel.FREE][idx]

    def boundary_edges(self, label: BoundaryLabel | None = None):
        """Edge indices on the boundary, optionally restricted to a label."""
        if label is None:
            return np.nonzero(self.edge_label_idx >= 0)[0]
        order = [BoundaryLabel.CLAMPED, BoundaryLabel.SIMPLY_SUPPORTED,
                 BoundaryLabel.FREE]
        return np.nonzero(self.edge_label_idx == order.index(label))[0]

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def element_diameters(self):
        """h_K: the longest edge of each triangle."""
        p = self.vertices[self.triangles]
        l01 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        l12 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
        l20 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
        return np.max(np.stack([l01, l12, l20]), axis=0)

    def edge_lengths(self):
        v = self.vertices
        return np.linalg.norm(v[self.edges[:, 1]] - v[self.edges[:, 0]], axis=1)

    def min_angle(self):
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosv = np.sum(a * b, axis=1) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cosv, -1.0, 1.0)))
        return float(np.min(angles))

    def outward_normal(self, tri: int, local_edge: int):
        """Unit outward normal and ccw tangent of a local edge of `tri`."""
        a = self.vertices[self.triangles[tri, local_edge]]
        b = self.vertices[self.triangles[tri, (local_edge + 1) % 3]]
        t = b - a
        t = t / np.linalg.norm(t)
        # Triangles are ccw, so (t_y, -t_x) points outward.
        n = np.array([t[1], -t[0]])
        return n, t


def mesh_stats(m: Mesh):
    """(h_max, h_min, n_tri, n_dof_estimate).

    The DOF estimate is the vertex count, a proxy for system size.
    """
    h = m.element_diameters()
    return float(h.max()), float(h.min()), m.n_triangles, m.n_vertices


# ---------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------

def load_mesh(path) -> Mesh:
    """Read the ASCII mesh format.

    Sections $Nodes, $Triangles, $BoundaryEdges with 1-based consecutive
    ids; '#' starts a comment line.
    """
    with open(path) as f:
        tokens = []
        for line in f:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(tokens):
            raise MeshError("unexpected end of mesh file")
        t = tokens[pos]
        pos += 1
        return t

    def expect(section):
        t = take()
        if t != section:
            raise MeshError(f"expected {section}, got {t!r}")

    expect("$Nodes")
    n = int(take())
    verts = np.empty((n, 2))
    for i in range(n):
        idx = int(take())
        if idx != i + 1:
            raise MeshError(f"node ids must be 1-based consecutive, got {idx}")
        verts[i] = float(take()), float(take())

    expect("$Triangles")
    mcount = int(take())
    tris = np.empty((mcount, 3), dtype=np.int64)
    for i in range(mcount):
        idx = int(take())
        if idx != i + 1:
            raise MeshError(f"triangle ids must be 1-based consecutive, got {idx}")
        tris[i] = int(take()) - 1, int(take()) - 1, int(take()) - 1

    expect("$BoundaryEdges")
    b = int(take())
    labels = {}
    for i in range(b):
        idx = int(take())
        if idx != i + 1:
            raise MeshError(f"edge ids must be 1-based consecutive, got {idx}")
        v1, v2 = int(take()) - 1, int(take()) - 1
        code = take()
        try:
            lab = BoundaryLabel(code)
        except ValueError:
            raise MeshError(f"unknown boundary label {code!r}") from None
        key = (min(v1, v2), max(v1, v2))
        if key in labels:
            raise MeshError(f"duplicate boundary edge {key}")
        labels[key] = lab

    if np.any(tris < 0) or np.any(tris >= n):
        raise MeshError("triangle vertex index out of range")

    # Reorient clockwise triangles.
    p = verts[tris]
    area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    if np.any(area2 == 0.0):
        raise MeshError("degenerate triangle")
    flip = area2 < 0.0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    return Mesh(verts, tris, labels)


def save_mesh(m: Mesh, path):
    """Write the ASCII mesh format (inverse of load_mesh)."""
    with open(path, "w") as f:
        f.write("$Nodes\n%d\n" % m.n_vertices)
        for i, (x, y) in enumerate(m.vertices):
            f.write("%d %.17g %.17g\n" % (i + 1, x, y))
        f.write("$Triangles\n%d\n" % m.n_triangles)
        for i, t in enumerate(m.triangles):
            f.write("%d %d %d %d\n" % (i + 1, t[0] + 1, t[1] + 1, t[2] + 1))
        bnd = [(int(m.edges[e, 0]), int(m.edges[e, 1]), m.edge_label(e).value)
               for e in m.boundary_edges()]
        f.write("$BoundaryEdges\n%d\n" % len(bnd))
        for i, (a, b, c) in enumerate(bnd):
            f.write("%d %d %d %s\n" % (i + 1, a + 1, b + 1, c))


# ---------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------

def uniform_refine(m: Mesh) -> Mesh:
    """Red refinement: split every triangle into four by edge midpoints.

    Child boundary edges inherit the parent's label; every parent vertex
    persists with identical coordinates and index.
    """
    nv = m.n_vertices
    mid = nv + np.arange(m.n_edges)
    midpoints = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    verts = np.vstack([m.vertices, midpoints])

    t = m.triangles
    # Local edge e is (e, e+1): midpoint opposite local vertex (e+2)%3.
    m01 = mid[m.tri_edges[:, 0]]
    m12 = mid[m.tri_edges[:, 1]]
    m20 = mid[m.tri_edges[:, 2]]
    children = np.stack(
        [
            np.stack([t[:, 0], m01, m20], axis=1),
            np.stack([m01, t[:, 1], m12], axis=1),
            np.stack([m20, m12, t[:, 2], ], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(m.n_triangles), 4)

    labels = {}
    for e in m.boundary_edges():
        a, b = int(m.edges[e, 0]), int(m.edges[e, 1])
        c = int(mid[e])
        lab = m.edge_label(e)
        labels[(min(a, c), max(a, c))] = lab
        labels[(min(b, c), max(b, c))] = lab

    return Mesh(verts, children, labels, generation=m.generation + 1,
                parent_triangles=parent)


def _initial_nvb_orientation(m: Mesh):
    """Rotate triangle indices so the refinement edge (local 1-2) is longest."""
    p = m.vertices[m.triangles]
    lengths = np.stack([
        np.linalg.norm(p[:, 2] - p[:, 1], axis=1),  # opposite vertex 0
        np.linalg.norm(p[:, 0] - p[:, 2], axis=1),  # opposite vertex 1
        np.linalg.norm(p[:, 1] - p[:, 0], axis=1),  # opposite vertex 2
    ], axis=1)
    peak = np.argmax(lengths, axis=1)
    tris = m.triangles.copy()
    rolled = tris.copy()
    for k in (1, 2):
        sel = peak == k
        rolled[sel] = np.roll(tris[sel], -k, axis=1)
    return rolled


def bisect_marked(m: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked triangles with closure.

    The refinement edge of each triangle is initially its longest edge;
    children keep the newest vertex as local vertex 0, which bounds the
    minimum angle over repeated application.
    """
    marked = set(int(t) for t in marked)
    if not marked:
        return m
    if not marked <= set(range(m.n_triangles)):
        raise ValueError("marked ids outside triangle range")

    verts = [tuple(v) for v in m.vertices]
    # Triangles as (v0, v1, v2) with refinement edge (v1, v2).
    ordered = m.triangles if m.nvb_oriented else _initial_nvb_orientation(m)
    tris = [tuple(int(v) for v in row) for row in ordered]
    alive = [True] * len(tris)
    midpoint_of = {}

    boundary = {}
    for e in m.boundary_edges():
        a, b = int(m.edges[e, 0]), int(m.edges[e, 1])
        boundary[(min(a, b), max(a, b))] = m.edge_label(e)

    # Undirected edge -> set of live incident triangles.
    incident = {}

    def ekey(a, b):
        return (a, b) if a < b else (b, a)

    def tri_keys(i):
        v0, v1, v2 = tris[i]
        return (ekey(v0, v1), ekey(v1, v2), ekey(v2, v0))

    def register(i):
        for key in tri_keys(i):
            incident.setdefault(key, set()).add(i)

    def unregister(i):
        for key in tri_keys(i):
            incident[key].discard(i)

    for i in range(len(tris)):
        register(i)

    def midpoint(a, b):
        key = ekey(a, b)
        if key not in midpoint_of:
            va = np.asarray(verts[a])
            vb = np.asarray(verts[b])
            verts.append(tuple(0.5 * (va + vb)))
            midpoint_of[key] = len(verts) - 1
            lab = boundary.pop(key, None)
            if lab is not None:
                c = midpoint_of[key]
                boundary[ekey(a, c)] = lab
                boundary[ekey(b, c)] = lab
        return midpoint_of[key]

    def bisect(i):
        """Bisect triangle i across its refinement edge (v1, v2)."""
        v0, v1, v2 = tris[i]
        alive[i] = False
        unregister(i)
        c = midpoint(v1, v2)
        for child in ((c, v0, v1), (c, v2, v0)):
            tris.append(child)
            alive.append(True)
            register(len(tris) - 1)

    def refine(i):
        """Bisect i, first making the neighbor across its refinement
        edge compatible (classical recursive newest-vertex scheme)."""
        stack = [i]
        while stack:
            j = stack[-1]
            if not alive[j]:
                stack.pop()
                continue
            v0, v1, v2 = tris[j]
            key = ekey(v1, v2)
            if key in boundary or key in midpoint_of:
                stack.pop()
                bisect(j)
                continue
            nbrs = [s for s in incident.get(key, ()) if s != j and alive[s]]
            if not nbrs:
                stack.pop()
                bisect(j)
                continue
            nb = nbrs[0]
            if ekey(tris[nb][1], tris[nb][2]) == key:
                # Compatible pair: bisect both across the shared edge.
                stack.pop()
                bisect(j)
                bisect(nb)
            else:
                if len(stack) > 4 * len(tris):
                    raise MeshError("bisection closure does not terminate")
                stack.append(nb)

    for t in sorted(marked):
        if alive[t]:
            refine(t)

    # Closure: remove hanging nodes left on live triangles whose
    # non-refinement edge was split from the other side.
    changed = True
    while changed:
        changed = False
        for key in list(midpoint_of):
            for i in [s for s in incident.get(key, ()) if alive[s]]:
                refine(i)
                changed = True

    final = np.array([tris[i] for i in range(len(tris)) if alive[i]],
                     dtype=np.int64)
    return Mesh(np.array(verts), final, boundary, generation=m.generation + 1,
                nvb_oriented=True)


# ---------------------------------------------------------------------
# Built-in domains
# ---------------------------------------------------------------------

def unit_square_mesh(n: int, labels="CCCC") -> Mesh:
    """n-by-n structured triangulation of the unit square.

    `labels` gives the boundary condition on (bottom, right, top, left)
    as characters C, S or F.
    """
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    lab = {}
    sides = [BoundaryLabel(ch) for ch in labels]
    for i in range(n):
        lab[tuple(sorted((vid(i, 0), vid(i + 1, 0))))] = sides[0]
        lab[tuple(sorted((vid(n, i), vid(n, i + 1))))] = sides[1]
        lab[tuple(sorted((vid(i, n), vid(i + 1, n))))] = sides[2]
        lab[tuple(sorted((vid(0, i), vid(0, i + 1))))] = sides[3]
    return Mesh(verts, np.array(tris, dtype=np.int64), lab)


def lshape_mesh() -> Mesh:
    """L-shaped domain (unit square minus the upper-right quadrant).

    Six boundary segments, all clamped; reentrant corner at (0.5, 0.5).
    """
    verts = np.array([
        [0.0, 0.0], [0.5, 0.0], [1.0, 0.0],
        [0.0, 0.5], [0.5, 0.5], [1.0, 0.5],
        [0.0, 1.0], [0.5, 1.0],
    ])
    tris = np.array([
        [0, 1, 4], [0, 4, 3],
        [1, 2, 5], [1, 5, 4],
        [3, 4, 7], [3, 7, 6],
    ], dtype=np.int64)
    lab = {}
    ring = [0, 1, 2, 5, 4, 7, 6, 3]
    for a, b in zip(ring, ring[1:] + ring[:1]):
        lab[(min(a, b), max(a, b))] = BoundaryLabel.CLAMPED
    return Mesh(verts, tris, lab)

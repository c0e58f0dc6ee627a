"""Discrete metric-measure spaces and triangle meshes.

Meshes are piecewise-linear (P1) simplicial surfaces in the plane or in
3-space, optionally periodic (flat torus) and optionally carrying a
piecewise-constant conformal factor per triangle.  Distances on the derived
metric-measure space are graph-geodesic along mesh edges; the measure is the
lumped vertex measure (one third of the incident triangle area).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


def _wrap(disp: np.ndarray) -> np.ndarray:
    """Minimal-image displacement for a unit-periodic fundamental domain."""
    return disp - np.round(disp)


class Mesh:
    """Triangle mesh with optional periodicity and conformal factor.

    Parameters
    ----------
    vertices : (n, 2) or (n, 3) float array
        Vertex coordinates (length units).
    triangles : (m, 3) int array
        Corner indices into ``vertices``.
    periodic : bool
        If True, coordinates live on the unit torus and per-triangle
        displacements use the minimal image (period 1 in each coordinate).
    conformal_factor : (m,) positive float array or None
        Per-triangle metric factor: the metric on triangle T is
        ``factor[T]`` times the flat metric, so areas scale by the factor
        and squared gradients of linear functions by its inverse.
    """

    def __init__(self, vertices, triangles, periodic=False, conformal_factor=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise MeshError("vertices must be (n, 2) or (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (m, 3)")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index exceeds vertex count")
        if self.triangles.size and self.triangles.min() < 0:
            raise MeshError("negative triangle index")
        self.periodic = bool(periodic)
        if conformal_factor is None:
            self.conformal_factor = None
        else:
            factor = np.broadcast_to(
                np.asarray(conformal_factor, dtype=float), (len(self.triangles),)
            ).copy()
            if np.any(factor <= 0):
                raise MeshError("conformal factor must be positive")
            self.conformal_factor = factor

        t = self.triangles
        v = self.vertices
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        if self.periodic:
            e1 = _wrap(e1)
            e2 = _wrap(e2)
        self._e1 = e1
        self._e2 = e2
        # Gram matrix of the triangle frame; works for planar and embedded.
        g11 = np.einsum("ij,ij->i", e1, e1)
        g12 = np.einsum("ij,ij->i", e1, e2)
        g22 = np.einsum("ij,ij->i", e2, e2)
        det = g11 * g22 - g12 * g12
        if np.any(det <= 0):
            raise MeshError("degenerate triangle (zero area)")
        self._gram = (g11, g12, g22, det)
        self.base_areas = 0.5 * np.sqrt(det)

        self._edges = None
        self._boundary = None
        self._adjacency = None

    # ------------------------------------------------------------------
    # derived quantities
    # ------------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def triangle_areas(self) -> np.ndarray:
        """Metric areas (base areas times the conformal factor, if any)."""
        if self.conformal_factor is None:
            return self.base_areas
        return self.base_areas * self.conformal_factor

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    def lumped_vertex_measure(self, metric="conformal") -> np.ndarray:
        """Per-vertex measure: one third of the incident (metric) area."""
        areas = self.triangle_areas if metric == "conformal" else self.base_areas
        w = np.zeros(self.n_vertices)
        for c in range(3):
            np.add.at(w, self.triangles[:, c], areas / 3.0)
        return w

    def _edge_table(self):
        if self._edges is None:
            t = self.triangles
            pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            pairs.sort(axis=1)
            tri_of_pair = np.tile(np.arange(len(t)), 3)
            uniq, inv, counts = np.unique(
                pairs, axis=0, return_inverse=True, return_counts=True
            )
            # mean conformal factor over incident triangles, per edge
            fac = np.ones(len(uniq))
            if self.conformal_factor is not None:
                acc = np.zeros(len(uniq))
                np.add.at(acc, inv, self.conformal_factor[tri_of_pair])
                fac = acc / counts
            disp = self.vertices[uniq[:, 1]] - self.vertices[uniq[:, 0]]
            if self.periodic:
                disp = _wrap(disp)
            base_len = np.linalg.norm(disp, axis=1)
            self._edges = (uniq, base_len, counts, fac)
        return self._edges

    def edges(self, metric="base"):
        """Unique undirected edges and their lengths.

        ``metric='conformal'`` scales each edge length by the square root
        of the mean incident conformal factor (ambiguity of the piecewise
        constant factor across an edge is resolved by averaging).
        """
        uniq, base_len, _, fac = self._edge_table()
        if metric == "conformal" and self.conformal_factor is not None:
            return uniq, base_len * np.sqrt(fac)
        return uniq, base_len

    @property
    def boundary_vertices(self) -> np.ndarray:
        """Boolean flags; a vertex is boundary if it lies on an edge with
        exactly one incident triangle."""
        if self._boundary is None:
            uniq, _, counts, _ = self._edge_table()
            flags = np.zeros(self.n_vertices, dtype=bool)
            bd = uniq[counts == 1]
            flags[bd.ravel()] = True
            self._boundary = flags
        return self._boundary

    @property
    def is_closed(self) -> bool:
        return not bool(self.boundary_vertices.any())

    def vertex_adjacency(self) -> sparse.csr_matrix:
        """Symmetric boolean vertex adjacency along mesh edges."""
        if self._adjacency is None:
            uniq, _, _, _ = self._edge_table()
            n = self.n_vertices
            data = np.ones(2 * len(uniq), dtype=bool)
            rows = np.concatenate([uniq[:, 0], uniq[:, 1]])
            cols = np.concatenate([uniq[:, 1], uniq[:, 0]])
            self._adjacency = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
        return self._adjacency

    def scaled(self, s: float) -> "Mesh":
        """Mesh with coordinates multiplied by ``s`` (not for periodic meshes)."""
        if self.periodic:
            raise MeshError("cannot scale a periodic mesh")
        return Mesh(self.vertices * s, self.triangles,
                    conformal_factor=self.conformal_factor)

    def gradient_squared(self, values: np.ndarray, metric="conformal") -> np.ndarray:
        """Per-triangle squared gradient norm of the linear interpolant."""
        u = np.asarray(values, dtype=float)
        t = self.triangles
        du1 = u[t[:, 1]] - u[t[:, 0]]
        du2 = u[t[:, 2]] - u[t[:, 0]]
        g11, g12, g22, det = self._gram
        grad2 = (g22 * du1 * du1 - 2.0 * g12 * du1 * du2 + g11 * du2 * du2) / det
        if metric == "conformal" and self.conformal_factor is not None:
            grad2 = grad2 / self.conformal_factor
        return grad2


def conformal_rescale(mesh: Mesh, factor) -> Mesh:
    """Return ``mesh`` carrying the given per-triangle conformal factor.

    The factor replaces any factor already set.  All factors must be
    strictly positive.
    """
    factor = np.broadcast_to(np.asarray(factor, dtype=float),
                             (len(mesh.triangles),)).copy()
    if np.any(factor <= 0):
        raise MeshError("conformal factor must be positive")
    return Mesh(mesh.vertices, mesh.triangles, periodic=mesh.periodic,
                conformal_factor=factor)


# ----------------------------------------------------------------------
# structured mesh builders
# ----------------------------------------------------------------------


def _square_mesh(res: int) -> Mesh:
    xs = np.linspace(0.0, 1.0, res + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (res + 1) + i

    tris = []
    for j in range(res):
        for i in range(res):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return Mesh(verts, np.array(tris))


def _disk_mesh(res: int) -> Mesh:
    # resolution counts subdivisions across the diameter, so ring count is
    # res // 2 and the radial spacing is 2 / res.
    rings = max(1, res // 2)
    verts = [(0.0, 0.0)]
    ring_index = [np.array([0])]
    for j in range(1, rings + 1):
        m = 6 * j
        ang = 2.0 * np.pi * np.arange(m) / m
        r = j / rings
        start = len(verts)
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        ring_index.append(start + np.arange(m))

    tris = []
    for t in range(6):
        tris.append((0, ring_index[1][t], ring_index[1][(t + 1) % 6]))
    for j in range(2, rings + 1):
        inner, outer = ring_index[j - 1], ring_index[j]
        mi, mo = len(inner), len(outer)
        i = o = 0
        while i < mi or o < mo:
            adv_outer = o < mo and (i == mi or (o + 1) * mi <= (i + 1) * mo)
            if adv_outer:
                tris.append((inner[i % mi], outer[o % mo], outer[(o + 1) % mo]))
                o += 1
            else:
                tris.append((inner[i % mi], outer[o % mo], inner[(i + 1) % mi]))
                i += 1
    return Mesh(np.array(verts), np.array(tris))


def _icosphere_mesh(res: int) -> Mesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
         (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
         (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    level = max(1, int(np.ceil(np.log2(max(res, 4)))) - 2)
    verts = list(map(tuple, verts))
    for _ in range(level):
        cache: dict = {}
        new_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = np.array(verts[a]) + np.array(verts[b])
                p /= np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(verts), np.array(faces))


def _torus_mesh(res: int) -> Mesh:
    xs = np.arange(res) / res
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return (j % res) * res + (i % res)

    tris = []
    for j in range(res):
        for i in range(res):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return Mesh(verts, np.array(tris), periodic=True)


_BUILDERS = {
    "unit_square": _square_mesh,
    "unit_disk": _disk_mesh,
    "sphere": _icosphere_mesh,
    "flat_torus": _torus_mesh,
}


def build_structured_mesh(shape: str, resolution: int) -> Mesh:
    """Build one of the canonical test meshes.

    ``resolution`` counts subdivisions across the shape's extent (side of
    the square, diameter of the disk, period of the torus); for the sphere
    it selects the icosphere subdivision level.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    try:
        builder = _BUILDERS[shape]
    except KeyError:
        raise ValueError(f"unknown shape {shape!r}") from None
    return builder(int(resolution))


# ----------------------------------------------------------------------
# discrete metric-measure space
# ----------------------------------------------------------------------


class DiscreteSpace:
    """Finite metric-measure space: vertex ids, distances, vertex weights.

    The distance matrix must be symmetric with zero diagonal and strictly
    positive off-diagonal entries (infinite entries are allowed and mark
    pairs in different components).
    """

    def __init__(self, dist, measure, adjacency=None):
        D = np.asarray(dist, dtype=float)
        w = np.asarray(measure, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ValueError("distance matrix must be square")
        if len(w) != D.shape[0]:
            raise ValueError("measure length mismatch")
        if np.any(np.diag(D) != 0.0):
            raise ValueError("nonzero self-distance")
        if not np.array_equal(D, D.T):
            raise ValueError("asymmetric distance matrix")
        off = D[~np.eye(len(w), dtype=bool)]
        if off.size and np.nanmin(off) <= 0:
            raise ValueError("distances must be positive off the diagonal")
        if np.any(w < 0):
            raise ValueError("negative vertex measure")
        if w.sum() <= 0:
            raise ValueError("total measure must be positive")
        self.dist_matrix = D
        self.measure = w
        self.adjacency = adjacency
        self._sorted = None

    @property
    def n(self) -> int:
        return len(self.measure)

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def total_measure(self) -> float:
        return float(self.measure.sum())

    @property
    def diameter(self) -> float:
        finite = self.dist_matrix[np.isfinite(self.dist_matrix)]
        return float(finite.max())

    def dist(self, i: int, j: int) -> float:
        return float(self.dist_matrix[i, j])

    def sorted_structure(self):
        """Per-row sorted distances with cumulative ball measures.

        Returns ``(sorted_dist, order, cum_ball)`` where ``cum_ball[a, j]``
        is the measure of the closed set of the ``j+1`` nearest vertices of
        ``a`` (the center itself included at position 0).
        """
        if self._sorted is None:
            order = np.argsort(self.dist_matrix, axis=1, kind="stable").astype(np.int32)
            sd = np.take_along_axis(self.dist_matrix, order, axis=1)
            cum = np.cumsum(self.measure[order], axis=1)
            self._sorted = (sd, order, cum)
        return self._sorted

    def one_ring(self, members: np.ndarray) -> np.ndarray:
        """Members plus their mesh neighbors (identity if no adjacency)."""
        if self.adjacency is None or len(members) == 0:
            return np.asarray(members, dtype=np.int64)
        nbrs = self.adjacency[members].indices
        return np.union1d(np.asarray(members, dtype=np.int64), nbrs)


def space_from_mesh(mesh: Mesh, edge_metric: str = "base") -> DiscreteSpace:
    """Metric-measure space of a mesh: graph-geodesic distance along edges,
    lumped vertex measure.

    Distances default to base (unrescaled) edge lengths; the measure always
    uses the current metric (conformal factor included).  Pass
    ``edge_metric='conformal'`` to measure distances in the rescaled metric
    as well.
    """
    pairs, lengths = mesh.edges(metric=edge_metric)
    n = mesh.n_vertices
    graph = sparse.csr_matrix(
        (lengths, (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != 1:
        raise ValueError("disconnected domain")
    D = dijkstra(graph, directed=False)
    D = np.minimum(D, D.T)  # enforce exact symmetry against per-source rounding
    w = mesh.lumped_vertex_measure()
    return DiscreteSpace(D, w, adjacency=mesh.vertex_adjacency())


def disjoint_union(a: DiscreteSpace, b: DiscreteSpace) -> DiscreteSpace:
    """Disjoint union of two spaces; cross-component distances are infinite."""
    na, nb = a.n, b.n
    D = np.full((na + nb, na + nb), np.inf)
    D[:na, :na] = a.dist_matrix
    D[na:, na:] = b.dist_matrix
    w = np.concatenate([a.measure, b.measure])
    adjacency = None
    if a.adjacency is not None and b.adjacency is not None:
        adjacency = sparse.block_diag([a.adjacency, b.adjacency]).tocsr()
    return DiscreteSpace(D, w, adjacency=adjacency)


# ----------------------------------------------------------------------
# vertex sets, balls, annuli
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class VertexSet:
    """Sorted vertex-id list with its total measure."""

    members: np.ndarray
    measure: float

    @staticmethod
    def from_indices(space: DiscreteSpace, indices) -> "VertexSet":
        members = np.unique(np.asarray(indices, dtype=np.int64))
        return VertexSet(members, float(space.measure[members].sum()))

    @property
    def size(self) -> int:
        return len(self.members)

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.members] = True
        return m

    def issubset(self, other: "VertexSet") -> bool:
        return np.isin(self.members, other.members).all()

    def isdisjoint(self, other: "VertexSet") -> bool:
        return len(np.intersect1d(self.members, other.members)) == 0


def ball(space: DiscreteSpace, center: int, r: float) -> VertexSet:
    """Open metric ball ``{v : dist(center, v) < r}``."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    members = np.flatnonzero(space.dist_matrix[center] < r)
    return VertexSet(members.astype(np.int64), float(space.measure[members].sum()))


def annulus_set(space: DiscreteSpace, a: int, r: float, R: float) -> VertexSet:
    """Open annulus ``{v : r < dist(a, v) < R}``; ``r = 0`` punctures the
    center only."""
    if not 0 <= r < R:
        raise ValueError("annulus radii must satisfy 0 <= r < R")
    d = space.dist_matrix[a]
    members = np.flatnonzero((d > r) & (d < R))
    return VertexSet(members.astype(np.int64), float(space.measure[members].sum()))


def covering_number(space: DiscreteSpace, s: float) -> int:
    """Greedy witness for "every 5s-ball is covered by N balls of radius s".

    Returns the worst greedy net size over all centers.  The witness is
    valid but not necessarily minimal.
    """
    if s <= 0:
        raise ValueError("scale must be positive")
    D = space.dist_matrix
    worst = 0
    for a in range(space.n):
        S = np.flatnonzero(D[a] < 5.0 * s)
        uncovered = np.ones(len(S), dtype=bool)
        count = 0
        while uncovered.any():
            u = S[np.argmax(uncovered)]
            uncovered &= D[u, S] >= s
            count += 1
        worst = max(worst, count)
    return worst


# ----------------------------------------------------------------------
# OFF import/export
# ----------------------------------------------------------------------


def write_off(mesh: Mesh, path) -> None:
    """Write the mesh in ASCII OFF format.

    Periodicity is recorded in a comment line (OFF itself has no notion of
    it); the conformal factor is not serialized.
    """
    with open(path, "w") as fh:
        fh.write("OFF\n")
        if mesh.periodic:
            fh.write("# plap periodic 1\n")
        fh.write(f"{mesh.n_vertices} {len(mesh.triangles)} 0\n")
        verts = mesh.vertices
        if verts.shape[1] == 2:
            verts = np.column_stack([verts, np.zeros(len(verts))])
        for x, y, z in verts:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")


def read_off(path) -> Mesh:
    """Read an ASCII OFF mesh written by :func:`write_off` (or any plain
    triangle OFF)."""
    periodic = False
    tokens: list[str] = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first != "OFF":
            raise MeshError("not an OFF file")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "periodic" in line:
                    periodic = True
                continue
            tokens.extend(line.split())
    nv, nf = int(tokens[0]), int(tokens[1])
    pos = 3
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nf):
        cnt = int(tokens[pos])
        if cnt != 3:
            raise MeshError("only triangle faces are supported")
        tris.append([int(x) for x in tokens[pos + 1:pos + 4]])
        pos += 4
    if np.all(verts[:, 2] == 0.0):
        verts = verts[:, :2]
    return Mesh(verts, np.array(tris), periodic=periodic)

"""Conforming triangulations of 2D polygonal domains.

Builds an initial triangulation of a simple polygon by ear clipping,
refines it uniformly by edge-midpoint subdivision (each triangle splits
into 4 similar children, so the shape-regularity constant is preserved
exactly), and exposes the induced boundary triangulation as an ordered
counterclockwise edge loop.
"""

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised for invalid polygons or malformed triangulations."""


def _signed_area(vertices):
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _segments_properly_intersect(p1, p2, q1, q2):
    """True if open segments (p1,p2) and (q1,q2) cross or overlap."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        scale = max(abs(b[0] - a[0]), abs(b[1] - a[1]), abs(c[0] - a[0]), abs(c[1] - a[1]), 1.0)
        if abs(v) < 1e-14 * scale * scale:
            return 0
        return 1 if v > 0 else -1

    def on_segment(a, b, c):
        return (min(a[0], b[0]) - 1e-14 <= c[0] <= max(a[0], b[0]) + 1e-14
                and min(a[1], b[1]) - 1e-14 <= c[1] <= max(a[1], b[1]) + 1e-14)

    o1 = orient(p1, p2, q1)
    o2 = orient(p1, p2, q2)
    o3 = orient(q1, q2, p1)
    o4 = orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    # collinear overlap
    if o1 == 0 and on_segment(p1, p2, q1):
        return True
    if o2 == 0 and on_segment(p1, p2, q2):
        return True
    if o3 == 0 and on_segment(q1, q2, p1):
        return True
    if o4 == 0 and on_segment(q1, q2, p2):
        return True
    return False


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with counterclockwise vertex order.

    Parameters
    ----------
    vertices : array_like, shape (n, 2)
        Corner coordinates in counterclockwise order.
    """

    vertices: np.ndarray

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise MeshError("polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise MeshError("polygon vertices must be finite")
        n = v.shape[0]
        for i in range(n):
            if np.allclose(v[i], v[(i + 1) % n], atol=1e-14):
                raise MeshError("polygon has repeated consecutive vertices")
        area = _signed_area(v)
        if area <= 1e-14:
            raise MeshError("polygon must have positive signed area (counterclockwise, nondegenerate)")
        # simplicity: no two non-adjacent edges may intersect
        for i in range(n):
            a1, a2 = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                b1, b2 = v[j], v[(j + 1) % n]
                if _segments_properly_intersect(a1, a2, b1, b2):
                    raise MeshError("polygon is self-intersecting")
        object.__setattr__(self, "vertices", v)

    @property
    def area(self):
        return float(_signed_area(self.vertices))

    @property
    def perimeter(self):
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.sum(np.hypot(d[:, 0], d[:, 1])))

    def contains(self, points, tol=1e-12):
        """Vectorized point-in-polygon test (boundary counts as inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        n = v.shape[0]
        x, y = pts[:, 0], pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        on_edge = np.zeros(len(pts), dtype=bool)
        for i in range(n):
            x1, y1 = v[i]
            x2, y2 = v[(i + 1) % n]
            cond = (y1 > y) != (y2 > y)
            xi = x1 + (y - y1) * (x2 - x1) / np.where(y2 == y1, 1.0, y2 - y1)
            inside ^= cond & (x < xi)
            ex, ey = x2 - x1, y2 - y1
            L2 = ex * ex + ey * ey
            t = np.clip(((x - x1) * ex + (y - y1) * ey) / L2, 0.0, 1.0)
            d2 = (x - (x1 + t * ex)) ** 2 + (y - (y1 + t * ey)) ** 2
            on_edge |= d2 <= tol * tol * max(1.0, L2)
        return inside | on_edge

    def boundary_distance(self, points):
        """Distance to the polygon boundary and the nearest boundary point.

        Returns (dist, nearest) with shapes (n,) and (n, 2).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        n = v.shape[0]
        best_d2 = np.full(len(pts), np.inf)
        nearest = np.zeros_like(pts)
        for i in range(n):
            a = v[i]
            b = v[(i + 1) % n]
            e = b - a
            L2 = float(e @ e)
            t = np.clip(((pts - a) @ e) / L2, 0.0, 1.0)
            proj = a + t[:, None] * e
            d2 = np.sum((pts - proj) ** 2, axis=1)
            closer = d2 < best_d2
            best_d2[closer] = d2[closer]
            nearest[closer] = proj[closer]
        return np.sqrt(best_d2), nearest


@dataclass(frozen=True)
class MeshQuality:
    """Shape statistics: h (max diameter), s (max h_K / rho_K), h_min."""

    h: float
    s: float
    h_min: float


@dataclass
class TriMesh:
    """Conforming 2D triangulation.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counterclockwise vertex triples
    boundary_edges : (B, 2) int array
        Ordered counterclockwise closed loop; edge b runs from
        ``boundary_edges[b, 0]`` to ``boundary_edges[b, 1]``.
    level : int
        Uniform refinement generation (0 for the initial triangulation).
    polygon : Polygon
        The domain this mesh covers.
    parent_edges : (V, 2) int array or None
        For meshes produced by :func:`refine`: vertex v of this mesh is
        the midpoint of parent vertices ``parent_edges[v]`` (a vertex
        carried over from the parent has both entries equal to its
        parent index).  None for initial meshes.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    level: int
    polygon: Polygon
    parent_edges: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        if "areas" not in self._cache:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["areas"]

    def boundary_normals(self):
        """Outward unit normal per boundary edge."""
        a = self.vertices[self.boundary_edges[:, 0]]
        b = self.vertices[self.boundary_edges[:, 1]]
        t = b - a
        L = np.hypot(t[:, 0], t[:, 1])
        # boundary loop is counterclockwise, so outward normal is (ty, -tx)
        return np.column_stack([t[:, 1], -t[:, 0]]) / L[:, None]

    def boundary_lengths(self):
        a = self.vertices[self.boundary_edges[:, 0]]
        b = self.vertices[self.boundary_edges[:, 1]]
        return np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])


def _edge_key(i, j):
    return (i, j) if i < j else (j, i)


def _validate_mesh(mesh):
    areas = mesh.triangle_areas()
    if np.any(areas <= 0):
        raise MeshError("mesh contains a degenerate or misoriented triangle")
    # conformity + boundary audit: every edge appears in 1 (boundary) or 2 triangles
    counts = {}
    for tri in mesh.triangles:
        for k in range(3):
            key = _edge_key(int(tri[k]), int(tri[(k + 1) % 3]))
            counts[key] = counts.get(key, 0) + 1
    if any(c > 2 for c in counts.values()):
        raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
    boundary = {key for key, c in counts.items() if c == 1}
    loop = {_edge_key(int(i), int(j)) for i, j in mesh.boundary_edges}
    if boundary != loop:
        raise MeshError("boundary edge loop does not match the single-triangle edges")


def _order_boundary_loop(edges, vertices, start_vertex=0):
    """Order directed boundary edges into a CCW closed loop from start_vertex."""
    nxt = {int(i): int(j) for i, j in edges}
    if start_vertex not in nxt:
        start_vertex = min(nxt.keys())
    loop = []
    v = start_vertex
    for _ in range(len(nxt)):
        w = nxt[v]
        loop.append((v, w))
        v = w
    if v != start_vertex or len(loop) != len(nxt):
        raise MeshError("boundary edges do not form a single closed loop")
    return np.array(loop, dtype=int)


def build_initial_triangulation(polygon):
    """Triangulate a simple polygon by ear clipping.

    All polygon vertices appear as mesh vertices; the triangles exactly
    cover the polygon.
    """
    if not isinstance(polygon, Polygon):
        polygon = Polygon(polygon)
    v = polygon.vertices
    n = v.shape[0]
    remaining = list(range(n))
    triangles = []

    def is_ear(idx_prev, idx_cur, idx_next):
        a, b, c = v[idx_prev], v[idx_cur], v[idx_next]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if cross <= 1e-14:
            return False
        # no other remaining vertex may lie inside the candidate ear
        for k in remaining:
            if k in (idx_prev, idx_cur, idx_next):
                continue
            p = v[k]
            d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
            d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
            if d1 >= -1e-14 and d2 >= -1e-14 and d3 >= -1e-14:
                return False
        return True

    guard = 0
    while len(remaining) > 3:
        n_rem = len(remaining)
        clipped = False
        for pos in range(n_rem):
            ip = remaining[(pos - 1) % n_rem]
            ic = remaining[pos]
            iq = remaining[(pos + 1) % n_rem]
            if is_ear(ip, ic, iq):
                triangles.append((ip, ic, iq))
                remaining.pop(pos)
                clipped = True
                break
        guard += 1
        if not clipped or guard > 2 * n * n:
            raise MeshError("ear clipping failed; polygon may be degenerate")
    triangles.append(tuple(remaining))

    tris = np.array(triangles, dtype=int)
    # directed boundary edges in polygon order (CCW by construction)
    edges = np.array([(i, (i + 1) % n) for i in range(n)], dtype=int)
    mesh = TriMesh(
        vertices=v.copy(),
        triangles=tris,
        boundary_edges=_order_boundary_loop(edges, v, start_vertex=0),
        level=0,
        polygon=polygon,
    )
    _validate_mesh(mesh)
    area = float(np.sum(mesh.triangle_areas()))
    if abs(area - polygon.area) > 1e-10 * max(1.0, polygon.area):
        raise MeshError("triangulation does not cover the polygon area")
    return mesh


def refine(mesh):
    """Uniform red refinement: split every triangle into 4 by edge midpoints.

    The four children are similar to the parent, so h halves exactly and
    the shape-regularity ratio of every child equals the parent's.
    """
    v = mesh.vertices
    midpoint_of = {}
    new_vertices = [v]
    parent_edges = [(i, i) for i in range(len(v))]
    next_idx = len(v)

    def midpoint(i, j):
        nonlocal next_idx
        key = _edge_key(i, j)
        if key not in midpoint_of:
            midpoint_of[key] = next_idx
            new_vertices.append(0.5 * (v[i] + v[j]))
            parent_edges.append(key)
            next_idx += 1
        return midpoint_of[key]

    tris = []
    for i, j, k in mesh.triangles:
        i, j, k = int(i), int(j), int(k)
        mij = midpoint(i, j)
        mjk = midpoint(j, k)
        mki = midpoint(k, i)
        tris.extend([(i, mij, mki), (mij, j, mjk), (mki, mjk, k), (mij, mjk, mki)])

    vertices = np.vstack([new_vertices[0]] + [p[None, :] for p in new_vertices[1:]])
    # each boundary edge splits into its two halves, preserving loop order
    b_edges = []
    for i, j in mesh.boundary_edges:
        m = midpoint(int(i), int(j))
        b_edges.append((int(i), m))
        b_edges.append((m, int(j)))

    child = TriMesh(
        vertices=vertices,
        triangles=np.array(tris, dtype=int),
        boundary_edges=np.array(b_edges, dtype=int),
        level=mesh.level + 1,
        polygon=mesh.polygon,
        parent_edges=np.array(parent_edges, dtype=int),
    )
    return child


def refine_to_level(mesh, level):
    """Refine repeatedly until the requested generation count."""
    if level < mesh.level:
        raise MeshError("cannot coarsen: requested level below current")
    while mesh.level < level:
        mesh = refine(mesh)
    return mesh


def mesh_quality(mesh):
    """Mesh size h, shape-regularity ratio s and minimum diameter.

    The diameter of a triangle is its longest edge; the inscribed-ball
    diameter is ``2 * area / semiperimeter``.
    """
    p = mesh.vertices[mesh.triangles]
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    h_K = np.maximum(e0, np.maximum(e1, e2))
    semi = 0.5 * (e0 + e1 + e2)
    rho_K = 2.0 * mesh.triangle_areas() / semi
    ratio = h_K / rho_K
    return MeshQuality(h=float(h_K.max()), s=float(ratio.max()), h_min=float(h_K.min()))


def boundary_triangulation(mesh):
    """Ordered CCW boundary edges with lengths and cumulative arc positions.

    Returns (edges, lengths, arc_positions); ``arc_positions[b]`` is the
    arclength from the loop start to the start vertex of edge b.
    """
    lengths = mesh.boundary_lengths()
    arc = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    return mesh.boundary_edges.copy(), lengths, arc


def dump_mesh(mesh, path):
    """Write the plain-text mesh format: header "V T B", vertices, triangles, boundary edges."""
    with open(path, "w") as f:
        f.write(f"{mesh.num_vertices} {mesh.num_triangles} {len(mesh.boundary_edges)}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
        for i, j in mesh.boundary_edges:
            f.write(f"{i} {j}\n")


def load_mesh(path, polygon=None, level=0):
    """Read a mesh written by :func:`dump_mesh`."""
    with open(path) as f:
        nv, nt, nb = (int(tok) for tok in f.readline().split())
        vertices = np.array([[float(t) for t in f.readline().split()] for _ in range(nv)])
        triangles = np.array([[int(t) for t in f.readline().split()] for _ in range(nt)], dtype=int)
        boundary = np.array([[int(t) for t in f.readline().split()] for _ in range(nb)], dtype=int)
    if polygon is None:
        loop_vertices = [int(i) for i, _ in boundary]
        corner = _corner_vertices(vertices, boundary)
        polygon = Polygon(vertices[[v for v in loop_vertices if v in corner]])
    mesh = TriMesh(vertices=vertices, triangles=triangles,
                   boundary_edges=boundary, level=level, polygon=polygon)
    _validate_mesh(mesh)
    return mesh


def _corner_vertices(vertices, boundary_edges):
    """Boundary vertices where the loop direction turns (polygon corners)."""
    corners = set()
    n = len(boundary_edges)
    for b in range(n):
        i = int(boundary_edges[b, 0])
        prev = int(boundary_edges[(b - 1) % n, 0])
        nxt = int(boundary_edges[b, 1])
        t1 = vertices[i] - vertices[prev]
        t2 = vertices[nxt] - vertices[i]
        cross = t1[0] * t2[1] - t1[1] * t2[0]
        if abs(cross) > 1e-12 * (np.linalg.norm(t1) * np.linalg.norm(t2)):
            corners.add(i)
    return corners


def check_conformity(mesh):
    """Exhaustive audit of the conformity invariants; raises on violation."""
    _validate_mesh(mesh)
    # two triangles sharing two vertices must share the full edge; with the
    # edge-count audit above, it remains to exclude vertex-inside-edge cases
    verts = mesh.vertices
    for b, (i, j) in enumerate(mesh.boundary_edges):
        nb = mesh.boundary_edges[(b + 1) % len(mesh.boundary_edges)]
        if int(j) != int(nb[0]):
            raise MeshError("boundary loop is not closed")
    used = np.unique(mesh.triangles)
    if len(used) != mesh.num_vertices:
        raise MeshError("mesh has unused vertices")
    interior_pts = verts[np.setdiff1d(np.arange(mesh.num_vertices),
                                      np.unique(mesh.boundary_edges))]
    if len(interior_pts) and not np.all(mesh.polygon.contains(interior_pts)):
        raise MeshError("interior vertex outside the polygon")
    return True

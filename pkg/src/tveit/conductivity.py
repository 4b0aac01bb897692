"""Conductivity fields and their regularization calculus.

Piecewise-linear conductivities (scalar or symmetric 2x2 tensor) with
ellipticity bounds, the exact total-variation seminorm of P1 fields,
raster-based mollification with a compactly supported radial bump, and
the two-step discretization (mollify at radius h^alpha, then interpolate
on the target mesh) that keeps fields admissible while converging in L1
with bounded total variation.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy import ndimage

from .mesh import mesh_quality


class FieldError(ValueError):
    """Raised for inadmissible fields or mismatched meshes."""


# degree-5 Gauss rule on the reference triangle (barycentric; weights sum to 1)
_Q_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [0.059715871789770, 0.470142064105115, 0.470142064105115],
    [0.470142064105115, 0.059715871789770, 0.470142064105115],
    [0.470142064105115, 0.470142064105115, 0.059715871789770],
    [0.797426985353087, 0.101286507323456, 0.101286507323456],
    [0.101286507323456, 0.797426985353087, 0.101286507323456],
    [0.101286507323456, 0.101286507323456, 0.797426985353087],
])
_Q_W = np.array([0.225, 0.132394152788506, 0.132394152788506, 0.132394152788506,
                 0.125939180544827, 0.125939180544827, 0.125939180544827])


def _sym2x2_specnorm(a, b, c):
    """Spectral norm of symmetric [[a, b], [b, c]], vectorized."""
    half_tr = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b**2)
    return np.maximum(np.abs(half_tr + rad), np.abs(half_tr - rad))


def _p1_gradients(mesh, nodal):
    """Per-triangle gradient (T, 2) of a scalar P1 field."""
    tri = mesh.triangles
    p = mesh.vertices[tri]
    areas = mesh.triangle_areas()
    v = np.asarray(nodal)[tri]
    gx = (v[:, 0] * (p[:, 1, 1] - p[:, 2, 1])
          + v[:, 1] * (p[:, 2, 1] - p[:, 0, 1])
          + v[:, 2] * (p[:, 0, 1] - p[:, 1, 1])) / (2 * areas)
    gy = (v[:, 0] * (p[:, 2, 0] - p[:, 1, 0])
          + v[:, 1] * (p[:, 0, 0] - p[:, 2, 0])
          + v[:, 2] * (p[:, 1, 0] - p[:, 0, 0])) / (2 * areas)
    return np.column_stack([gx, gy])


@dataclass
class NodalField:
    """P1 conductivity with ellipticity bounds [lam0, lam1].

    values has shape (V,) for scalars or (V, 2, 2) for symmetric tensors.
    """

    mesh: object
    values: np.ndarray
    lam0: float
    lam1: float
    kind: str = "scalar"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind == "scalar":
            if self.values.shape != (self.mesh.num_vertices,):
                raise FieldError("scalar field needs one value per vertex")
        elif self.kind == "tensor":
            if self.values.shape != (self.mesh.num_vertices, 2, 2):
                raise FieldError("tensor field needs a 2x2 matrix per vertex")
            if not np.allclose(self.values[:, 0, 1], self.values[:, 1, 0], atol=1e-12):
                raise FieldError("tensor field must be symmetric")
        else:
            raise FieldError("field kind must be 'scalar' or 'tensor'")
        if not (0 < self.lam0 <= self.lam1):
            raise FieldError("need 0 < lam0 <= lam1")

    @classmethod
    def constant(cls, mesh, value, lam0, lam1):
        return cls(mesh, np.full(mesh.num_vertices, float(value)), lam0, lam1)

    @classmethod
    def from_function(cls, mesh, f, lam0, lam1):
        v = mesh.vertices
        vals = np.asarray(f(v[:, 0], v[:, 1]), dtype=float)
        return cls(mesh, np.broadcast_to(vals, (mesh.num_vertices,)).copy(), lam0, lam1)

    def nodal_eigen_range(self):
        """Per-node (min eigenvalue, max eigenvalue)."""
        if self.kind == "scalar":
            return self.values, self.values
        a = self.values[:, 0, 0]
        b = self.values[:, 0, 1]
        c = self.values[:, 1, 1]
        half_tr = 0.5 * (a + c)
        rad = np.sqrt(0.25 * (a - c) ** 2 + b**2)
        return half_tr - rad, half_tr + rad

    def is_admissible(self, tol=1e-9):
        lo, hi = self.nodal_eigen_range()
        return bool(np.all(lo >= self.lam0 - tol) and np.all(hi <= self.lam1 + tol))

    def require_admissible(self):
        if not self.is_admissible():
            raise FieldError("field violates its ellipticity bounds")
        return self

    def eval(self, points):
        """P1 evaluation at points inside the domain (nearest-vertex fallback)."""
        import matplotlib.tri as mtri

        pts = np.atleast_2d(np.asarray(points, dtype=float))
        triang = self._triangulation()
        if self.kind == "scalar":
            interp = mtri.LinearTriInterpolator(triang, self.values)
            out = np.asarray(interp(pts[:, 0], pts[:, 1]))
            mask = ~np.isfinite(out)
            if mask.any():
                out[mask] = self.values[self._nearest_vertices(pts[mask])]
            return out
        comps = []
        for a in range(2):
            for b in range(2):
                interp = mtri.LinearTriInterpolator(triang, self.values[:, a, b])
                comp = np.asarray(interp(pts[:, 0], pts[:, 1]))
                mask = ~np.isfinite(comp)
                if mask.any():
                    comp[mask] = self.values[self._nearest_vertices(pts[mask]), a, b]
                comps.append(comp)
        return np.stack(comps, axis=1).reshape(-1, 2, 2)

    def _triangulation(self):
        import matplotlib.tri as mtri

        if "triang" not in self.mesh._cache:
            self.mesh._cache["triang"] = mtri.Triangulation(
                self.mesh.vertices[:, 0], self.mesh.vertices[:, 1], self.mesh.triangles)
        return self.mesh._cache["triang"]

    def _nearest_vertices(self, pts):
        from scipy.spatial import cKDTree

        if "kdtree" not in self.mesh._cache:
            self.mesh._cache["kdtree"] = cKDTree(self.mesh.vertices)
        return self.mesh._cache["kdtree"].query(pts)[1]


@dataclass
class Phantom:
    """Piecewise-constant ground-truth conductivity on a polygonal domain.

    A background value plus disk or polygon inclusions (later inclusions
    override earlier ones where they overlap).  Evaluable anywhere;
    ``exact_tv`` assumes inclusions are disjoint and interior.
    """

    polygon: object
    background: float
    lam0: float
    lam1: float
    inclusions: list = dataclass_field(default_factory=list)
    kind: str = "scalar"

    def add_disk(self, center, radius, value):
        self.inclusions.append(("disk", (np.asarray(center, dtype=float), float(radius)), float(value)))
        return self

    def add_polygon(self, vertices, value):
        from .mesh import Polygon

        self.inclusions.append(("polygon", Polygon(vertices), float(value)))
        return self

    def eval(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(pts), self.background)
        for shape, geom, value in self.inclusions:
            if shape == "disk":
                center, radius = geom
                inside = np.sum((pts - center) ** 2, axis=1) <= radius**2
            else:
                inside = geom.contains(pts)
            out[inside] = value
        return out

    def exact_tv(self):
        """Jump times interface perimeter, summed over disjoint inclusions."""
        tv = 0.0
        for shape, geom, value in self.inclusions:
            jump = abs(value - self.background)
            if shape == "disk":
                tv += jump * 2 * np.pi * geom[1]
            else:
                tv += jump * geom.perimeter
        return tv

    def to_nodal(self, mesh):
        vals = self.eval(mesh.vertices)
        return NodalField(mesh, vals, self.lam0, self.lam1)


@dataclass
class RasterField:
    """Values on a uniform node-registered grid covering the domain plus a collar."""

    origin: np.ndarray
    cell: float
    values: np.ndarray  # (ny, nx) scalar or (ny, nx, 2, 2)
    lam0: float
    lam1: float
    kind: str = "scalar"

    def eval(self, points):
        """Bilinear interpolation (points must lie within the raster)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        fx = (pts[:, 0] - self.origin[0]) / self.cell
        fy = (pts[:, 1] - self.origin[1]) / self.cell
        ny, nx = self.values.shape[:2]
        ix = np.clip(np.floor(fx).astype(int), 0, nx - 2)
        iy = np.clip(np.floor(fy).astype(int), 0, ny - 2)
        tx = np.clip(fx - ix, 0.0, 1.0)
        ty = np.clip(fy - iy, 0.0, 1.0)
        v = self.values
        if self.kind == "scalar":
            return ((1 - ty) * ((1 - tx) * v[iy, ix] + tx * v[iy, ix + 1])
                    + ty * ((1 - tx) * v[iy + 1, ix] + tx * v[iy + 1, ix + 1]))
        wx = np.stack([(1 - tx), tx], axis=1)
        wy = np.stack([(1 - ty), ty], axis=1)
        out = np.zeros((len(pts), 2, 2))
        for dy in range(2):
            for dx in range(2):
                out += (wy[:, dy] * wx[:, dx])[:, None, None] * v[iy + dy, ix + dx]
        return out


def project_to_admissible(field):
    """Clamp a field into its ellipticity window; idempotent.

    Scalars are clamped nodewise; tensors get a nodewise eigenvalue clamp.
    """
    if field.kind == "scalar":
        vals = np.clip(field.values, field.lam0, field.lam1)
        return NodalField(field.mesh, vals, field.lam0, field.lam1)
    a = field.values[:, 0, 0]
    b = field.values[:, 0, 1]
    c = field.values[:, 1, 1]
    half_tr = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b**2)
    lo = half_tr - rad
    hi = half_tr + rad
    lo_c = np.clip(lo, field.lam0, field.lam1)
    hi_c = np.clip(hi, field.lam0, field.lam1)
    # rebuild from the (orthonormal) eigenvectors of each nodal matrix
    theta = 0.5 * np.arctan2(2 * b, a - c)
    cos2 = np.cos(theta) ** 2
    sin2 = 1.0 - cos2
    sc = np.sin(theta) * np.cos(theta)
    new = np.zeros_like(field.values)
    new[:, 0, 0] = hi_c * cos2 + lo_c * sin2
    new[:, 1, 1] = hi_c * sin2 + lo_c * cos2
    new[:, 0, 1] = new[:, 1, 0] = (hi_c - lo_c) * sc
    return NodalField(field.mesh, new, field.lam0, field.lam1, kind="tensor")


def tv_seminorm(field):
    """Total variation of a P1 field (exact).

    Scalar: sum over triangles of |K| * |grad sigma|.  Tensor: the 2x2
    matrix of entrywise total variations, returned through its spectral
    norm.
    """
    mesh = field.mesh
    areas = mesh.triangle_areas()
    if field.kind == "scalar":
        g = _p1_gradients(mesh, field.values)
        return float(np.sum(areas * np.hypot(g[:, 0], g[:, 1])))
    tv_entries = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            g = _p1_gradients(mesh, field.values[:, a, b])
            tv_entries[a, b] = np.sum(areas * np.hypot(g[:, 0], g[:, 1]))
    return float(np.linalg.norm(tv_entries, 2))


def l1_distance(A, B):
    """L1 distance of two fields on the same mesh (pointwise spectral norm)."""
    if A.mesh is not B.mesh:
        if (A.mesh.num_vertices != B.mesh.num_vertices
                or not np.allclose(A.mesh.vertices, B.mesh.vertices)):
            raise FieldError("fields live on different meshes")
    mesh = A.mesh
    if A.kind != B.kind:
        raise FieldError("cannot mix scalar and tensor fields")
    tri = mesh.triangles
    areas = mesh.triangle_areas()
    total = 0.0
    if A.kind == "scalar":
        diff = (A.values - B.values)[tri]
        for q, w in zip(_Q_BARY, _Q_W):
            total += w * np.sum(areas * np.abs(diff @ q))
    else:
        diff = (A.values - B.values)[tri]  # (T, 3, 2, 2)
        for q, w in zip(_Q_BARY, _Q_W):
            d = np.einsum("k,tkab->tab", q, diff)
            total += w * np.sum(areas * _sym2x2_specnorm(d[:, 0, 0], d[:, 0, 1], d[:, 1, 1]))
    return float(total)


def l1_error(field, reference):
    """L1 distance between a scalar NodalField and an evaluable reference."""
    mesh = field.mesh
    tri = mesh.triangles
    p = mesh.vertices[tri]
    areas = mesh.triangle_areas()
    vals = field.values[tri]
    total = 0.0
    for q, w in zip(_Q_BARY, _Q_W):
        pts = np.einsum("k,tkd->td", q, p)
        ref = reference.eval(pts) if hasattr(reference, "eval") else reference(pts)
        total += w * np.sum(areas * np.abs(vals @ q - ref))
    return float(total)


def _bump_kernel(gamma, cell):
    """Discretized radial bump exp(-1/(1-r^2)) on radius gamma, unit mass."""
    n = int(np.floor(gamma / cell))
    offsets = np.arange(-n, n + 1) * cell
    X, Y = np.meshgrid(offsets, offsets)
    r2 = (X**2 + Y**2) / gamma**2
    w = np.zeros_like(r2)
    inside = r2 < 1.0
    w[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return w / w.sum()


def _blend_weight(dist, gamma):
    """Smooth transition 1 -> 0 over the collar [0, gamma]."""
    t = np.clip(dist / gamma, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def mollify(field, gamma, cell=None):
    """Convolve the constant-extended field with a radial bump of radius gamma.

    The field (NodalField or Phantom) is extended outside the domain by
    blending its nearest-boundary-point value into the midpoint value
    (lam0 + lam1)/2 over a collar of width gamma, then convolved on a
    uniform raster.  The output stays within [lam0, lam1].
    """
    if gamma <= 0:
        raise FieldError("mollification radius must be positive")
    if cell is None:
        cell = gamma / 8.0
    if cell > gamma / 4.0:
        raise FieldError("raster cell coarser than gamma/4 undersamples the kernel")
    polygon = field.polygon if hasattr(field, "polygon") else field.mesh.polygon
    scalar = getattr(field, "kind", "scalar") == "scalar"

    vmin = polygon.vertices.min(axis=0)
    vmax = polygon.vertices.max(axis=0)
    pad = 2.0 * gamma + 2.0 * cell
    origin = vmin - pad
    nx = int(np.ceil((vmax[0] - vmin[0] + 2 * pad) / cell)) + 1
    ny = int(np.ceil((vmax[1] - vmin[1] + 2 * pad) / cell)) + 1
    xs = origin[0] + cell * np.arange(nx)
    ys = origin[1] + cell * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])

    inside = polygon.contains(pts)
    mid = 0.5 * (field.lam0 + field.lam1)
    npts = len(pts)
    if scalar:
        vals = np.full(npts, mid)
        if inside.any():
            vals[inside] = field.eval(pts[inside])
        outside = ~inside
        if outside.any():
            dist, nearest = polygon.boundary_distance(pts[outside])
            w = _blend_weight(dist, gamma)
            need = w > 0
            boundary_vals = field.eval(nearest[need])
            vals[np.flatnonzero(outside)[need]] = (
                w[need] * boundary_vals + (1 - w[need]) * mid)
        grid = vals.reshape(ny, nx)
        kernel = _bump_kernel(gamma, cell)
        smooth = ndimage.convolve(grid, kernel, mode="nearest")
        smooth = np.clip(smooth, field.lam0, field.lam1)
        return RasterField(origin=origin, cell=cell, values=smooth,
                           lam0=field.lam0, lam1=field.lam1)

    vals = np.tile(mid * np.eye(2), (npts, 1, 1))
    if inside.any():
        vals[inside] = field.eval(pts[inside])
    outside = ~inside
    if outside.any():
        dist, nearest = polygon.boundary_distance(pts[outside])
        w = _blend_weight(dist, gamma)
        need = w > 0
        bvals = field.eval(nearest[need])
        vals[np.flatnonzero(outside)[need]] = (
            w[need][:, None, None] * bvals + (1 - w[need])[:, None, None] * mid * np.eye(2))
    grid = vals.reshape(ny, nx, 2, 2)
    kernel = _bump_kernel(gamma, cell)
    smooth = np.zeros_like(grid)
    for a in range(2):
        for b in range(2):
            smooth[:, :, a, b] = ndimage.convolve(grid[:, :, a, b], kernel, mode="nearest")
    return RasterField(origin=origin, cell=cell, values=smooth,
                       lam0=field.lam0, lam1=field.lam1, kind="tensor")


def discretize_bv(field, target_mesh, alpha, cell=None):
    """Mollify at radius h^alpha, then interpolate on the target mesh.

    Requires 0 < alpha < 1/2.  The result is admissible, converges to the
    field in L1 as h -> 0, and its total variation approaches the field's.
    """
    if not 0 < alpha < 0.5:
        raise FieldError("exponent alpha must lie in (0, 1/2)")
    h = mesh_quality(target_mesh).h
    gamma = h**alpha
    raster = mollify(field, gamma, cell=cell)
    vals = raster.eval(target_mesh.vertices)
    if raster.kind == "scalar":
        out = NodalField(target_mesh, vals, field.lam0, field.lam1)
    else:
        out = NodalField(target_mesh, vals, field.lam0, field.lam1, kind="tensor")
    return project_to_admissible(out)


def l1_distance_raster(func, raster, polygon, subsample=2):
    """L1 distance over the domain between an evaluable field and a raster.

    Midpoint rule on the raster subdivided ``subsample`` times per axis;
    serves the mollification convergence checks.
    """
    cell = raster.cell / subsample
    vmin = polygon.vertices.min(axis=0)
    vmax = polygon.vertices.max(axis=0)
    xs = np.arange(vmin[0] + cell / 2, vmax[0], cell)
    ys = np.arange(vmin[1] + cell / 2, vmax[1], cell)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = polygon.contains(pts)
    pts = pts[inside]
    f = func.eval(pts) if hasattr(func, "eval") else func(pts)
    g = raster.eval(pts)
    return float(np.sum(np.abs(f - g)) * cell * cell)

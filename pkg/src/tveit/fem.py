"""P1 finite element machinery on triangulations.

Stiffness assembly for a piecewise-linear (scalar or tensor) conductivity,
Neumann solves with the zero-boundary-mean constraint enforced by a single
Lagrange multiplier row, Dirichlet solves, interpolation and boundary
traces.  Boundary data may be piecewise linear (nodal on the boundary
loop) or piecewise constant per boundary edge; loads are integrated
exactly in both cases.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class FemError(ValueError):
    """Raised for incompatible data or violated solve preconditions."""


class FeSpace:
    """P1 space on a mesh with boundary bookkeeping.

    Attributes
    ----------
    mesh : TriMesh
    bnodes : (B,) int array
        Boundary vertex indices ordered along the counterclockwise loop
        (``bnodes[b]`` starts boundary edge b).
    boundary_mass : (B, B) csr matrix
        Exact P1 trace mass matrix on the boundary loop.
    boundary_weights : (B,) array
        Integrals of the boundary hat functions (row sums of the mass).
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.num_nodes = mesh.num_vertices
        tri = mesh.triangles
        p = mesh.vertices[tri]
        self.areas = mesh.triangle_areas()
        # gradients of the three barycentric basis functions per triangle
        b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                      p[:, 2, 1] - p[:, 0, 1],
                      p[:, 0, 1] - p[:, 1, 1]], axis=1)
        c = np.stack([p[:, 2, 0] - p[:, 1, 0],
                      p[:, 0, 0] - p[:, 2, 0],
                      p[:, 1, 0] - p[:, 0, 0]], axis=1)
        self.grads = np.stack([b, c], axis=2) / (2.0 * self.areas)[:, None, None]

        edges = mesh.boundary_edges
        self.bnodes = edges[:, 0].astype(int).copy()
        self.edge_lengths = mesh.boundary_lengths()
        self.boundary_length = float(self.edge_lengths.sum())
        nb = len(self.bnodes)
        self._bpos = {int(v): i for i, v in enumerate(self.bnodes)}
        rows, cols, vals = [], [], []
        for e in range(nb):
            i = e
            j = (e + 1) % nb
            L = self.edge_lengths[e]
            rows += [i, i, j, j]
            cols += [i, j, i, j]
            vals += [L / 3.0, L / 6.0, L / 6.0, L / 3.0]
        self.boundary_mass = sp.csr_matrix((vals, (rows, cols)), shape=(nb, nb))
        self.boundary_weights = np.asarray(self.boundary_mass.sum(axis=1)).ravel()

    def boundary_position(self, vertex):
        return self._bpos[int(vertex)]

    def domain_mass(self):
        """Consistent P1 mass matrix over the domain."""
        tri = self.mesh.triangles
        n = self.num_nodes
        local = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        vals = (self.areas[:, None, None] * local).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def boundary_mean(self, nodal_values):
        """Mean over the boundary of a P1 boundary function (nodal values per bnode)."""
        return float(self.boundary_weights @ nodal_values) / self.boundary_length


@dataclass
class BoundaryFunction:
    """Function on the boundary loop: nodal P1 or constant per edge.

    ``values`` has one entry per boundary node (kind="nodal", ordered as
    FeSpace.bnodes) or one entry per boundary edge (kind="edge").
    """

    values: np.ndarray
    kind: str = "nodal"
    zero_mean: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in ("nodal", "edge"):
            raise FemError("boundary function kind must be 'nodal' or 'edge'")
        if not np.all(np.isfinite(self.values)):
            raise FemError("boundary function has non-finite values")

    def integral(self, space):
        if self.kind == "nodal":
            return float(space.boundary_weights @ self.values)
        return float(space.edge_lengths @ self.values)

    def mean(self, space):
        return self.integral(space) / space.boundary_length

    def load_vector(self, space):
        """Exact load b_i = integral of (this function * hat_i) over the boundary."""
        nb = len(space.bnodes)
        if self.kind == "nodal":
            b_local = space.boundary_mass @ self.values
        else:
            b_local = np.zeros(nb)
            for e in range(nb):
                half = 0.5 * space.edge_lengths[e] * self.values[e]
                b_local[e] += half
                b_local[(e + 1) % nb] += half
        b = np.zeros(space.num_nodes)
        b[space.bnodes] = b_local
        return b


@dataclass
class FemSolution:
    """Nodal solution values together with the relative solve residual."""

    values: np.ndarray
    residual: float


def interpolate(f, space):
    """Nodal interpolation: evaluate f at every vertex."""
    v = space.mesh.vertices
    try:
        vals = np.asarray(f(v[:, 0], v[:, 1]), dtype=float)
        if vals.shape != (space.num_nodes,):
            vals = np.broadcast_to(vals, (space.num_nodes,)).astype(float)
    except Exception:
        vals = np.array([f(x, y) for x, y in v], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FemError("interpolated function produced non-finite values")
    return vals


def _triangle_mean_coefficient(A, space):
    """Per-triangle mean of the conductivity (exact for P1 coefficients).

    Returns an array of shape (T,) for scalars or (T, 2, 2) for tensors.
    The mean of the three vertex values equals the edge-midpoint rule, and
    both integrate an affine coefficient exactly.
    """
    tri = space.mesh.triangles
    vals = getattr(A, "values", A)
    if np.isscalar(vals):
        return float(vals) * np.ones(space.mesh.num_triangles)
    vals = np.asarray(vals, dtype=float)
    if vals.shape[0] != space.num_nodes:
        raise FemError("conductivity field does not match the mesh")
    return vals[tri].mean(axis=1)


def assemble_stiffness(A, space):
    """Sparse symmetric stiffness matrix for the bilinear form of A.

    Entries are integrals of (A grad phi_j) . grad phi_i, exact for P1
    conductivities since the integrand is affine per triangle.
    """
    tri = space.mesh.triangles
    coeff = _triangle_mean_coefficient(A, space)
    grads = space.grads  # (T, 3, 2)
    if coeff.ndim == 1:
        flux = coeff[:, None, None] * grads
    else:
        flux = np.einsum("tab,tib->tia", coeff, grads)
    local = np.einsum("tia,tja->tij", grads, flux) * space.areas[:, None, None]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = space.num_nodes
    K = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return 0.5 * (K + K.T)


class NeumannSolver:
    """Factorized zero-mean Neumann solver for a fixed conductivity.

    The zero-boundary-mean constraint is appended as one Lagrange
    multiplier row, which keeps the system symmetric and avoids pinning
    a node.  Repeated solves against different boundary data reuse the
    factorization.
    """

    def __init__(self, A, space, compat_tol=1e-8):
        self.space = space
        self.compat_tol = compat_tol
        K = assemble_stiffness(A, space)
        n = space.num_nodes
        m = np.zeros(n)
        m[space.bnodes] = space.boundary_weights
        sys = sp.bmat([[K, m[:, None]], [m[None, :], None]], format="csc")
        self._K = K
        self._m = m
        self._lu = spla.splu(sys)

    def solve_load(self, b):
        """Solve with an explicit load vector (must be compatible: sum ~ 0)."""
        total = float(b.sum())
        scale = float(np.abs(b).sum()) + 1.0
        if abs(total) > self.compat_tol * scale:
            raise FemError(f"incompatible Neumann load: total flux {total:.3e} != 0")
        rhs = np.concatenate([b, [0.0]])
        sol = self._lu.solve(rhs)
        v, lam = sol[:-1], sol[-1]
        res = self._K @ v + self._m * lam - b
        residual = float(np.linalg.norm(res) / (np.linalg.norm(b) + 1e-300))
        return FemSolution(values=v, residual=residual)

    def solve(self, g):
        """Solve with boundary data g (BoundaryFunction, zero mean required)."""
        if not isinstance(g, BoundaryFunction):
            raise FemError("solve expects a BoundaryFunction")
        return self.solve_load(g.load_vector(self.space))


def solve_neumann(A, g, space):
    """One-shot zero-mean Neumann solve; see NeumannSolver for batches."""
    return NeumannSolver(A, space).solve(g)


def solve_dirichlet(A, phi, space, F=None):
    """Dirichlet solve: trace fixed to phi, optional volume load F.

    phi is a nodal BoundaryFunction (or callable evaluated at boundary
    vertices); F a pointwise-evaluable volume load or None.
    """
    mesh = space.mesh
    if callable(phi):
        bv = mesh.vertices[space.bnodes]
        phi = BoundaryFunction(np.array([phi(x, y) for x, y in bv]), kind="nodal")
    if phi.kind != "nodal":
        raise FemError("Dirichlet data must be nodal")
    K = assemble_stiffness(A, space)
    n = space.num_nodes
    rhs = np.zeros(n)
    if F is not None:
        f_nodal = interpolate(F, space)
        rhs = space.domain_mass() @ f_nodal
    u = np.zeros(n)
    u[space.bnodes] = phi.values
    interior = np.setdiff1d(np.arange(n), space.bnodes)
    rhs_i = rhs[interior] - K[interior][:, space.bnodes] @ phi.values
    K_ii = K[interior][:, interior].tocsc()
    u[interior] = spla.spsolve(K_ii, rhs_i)
    res = K_ii @ u[interior] - rhs_i
    residual = float(np.linalg.norm(res) / (np.linalg.norm(rhs_i) + 1e-300))
    return FemSolution(values=u, residual=residual)


def trace(u, space):
    """Boundary trace of a nodal field as a nodal BoundaryFunction."""
    vals = getattr(u, "values", u)
    t = np.asarray(vals, dtype=float)[space.bnodes]
    return BoundaryFunction(t, kind="nodal",
                            zero_mean=abs(space.boundary_mean(t)) < 1e-10)


def energy(A, u, space):
    """Dirichlet energy of a nodal field: integral of A grad u . grad u."""
    vals = getattr(u, "values", u)
    K = assemble_stiffness(A, space)
    return float(np.asarray(vals) @ (K @ np.asarray(vals)))


def prolongation_matrix(fine_mesh, coarse_space):
    """P1 prolongation from a mesh's parent onto the mesh (sparse V_f x V_c).

    Fine vertices carried over from the parent copy their value; edge
    midpoints average the parent edge's endpoints.
    """
    pe = fine_mesh.parent_edges
    if pe is None:
        raise FemError("mesh has no refinement parent")
    nf = fine_mesh.num_vertices
    nc = coarse_space.num_nodes
    rows, cols, vals = [], [], []
    for v in range(nf):
        i, j = int(pe[v, 0]), int(pe[v, 1])
        if i == j:
            rows.append(v)
            cols.append(i)
            vals.append(1.0)
        else:
            rows += [v, v]
            cols += [i, j]
            vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))


def boundary_prolongation(fine_space, coarse_space, levels=1):
    """Boundary-restricted prolongation across one or more refinement levels.

    Returns a dense (B_f, B_c) matrix mapping coarse boundary nodal values
    to fine ones.  The fine mesh must be obtained from the coarse one by
    ``levels`` uniform refinements.
    """
    if len(fine_space.bnodes) != len(coarse_space.bnodes) * 2**levels:
        raise FemError("boundary sizes do not match the stated level gap")
    bc = len(coarse_space.bnodes)
    bf = len(fine_space.bnodes)
    P = np.zeros((bf, bc))
    step = 2**levels
    for i in range(bc):
        P[step * i, i] = 1.0
        # interior points of the refined coarse edge (i, i+1) interpolate linearly
        for r in range(1, step):
            t = r / step
            P[step * i + r, i] = 1.0 - t
            P[step * i + r, (i + 1) % bc] = t
    return P

"""Complete Electrode Model on polygonal boundaries.

Electrode layouts are unions of boundary edges: the boundary loop at a
coarser refinement generation provides the extended electrodes (disjoint,
covering the boundary), and each electrode occupies k of the 2^m fine
sub-edges of its parent, taken contiguously.  On top of the layouts sit
the vector/boundary-function identification Phi, the orthogonal
projections P_e, P_*, P, the averaging projection Q and the zero-mean
extension E, the coupled variational solve with contact impedances, and
the full and simplified resistance matrices.

Boundary functions are either nodal (continuous P1 on the loop) or
edge-wise constant; both embed exactly into the discontinuous piecewise
linear space on the loop, in which all L2 norms and operator norms are
evaluated (generalized singular values in mass geometry).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import BoundaryFunction, FemError, NeumannSolver, assemble_stiffness


class LayoutError(ValueError):
    """Raised for invalid electrode configurations."""


@dataclass(frozen=True)
class LayoutStats:
    """Electrode geometry: max diameter, measure ratio, extension ratio,
    shape ratio and electrode count."""

    delta: float
    mu: float
    theta: float
    eta: float
    M: int


class ElectrodeLayout:
    """Electrodes and extended electrodes as index sets of boundary edges.

    Parameters
    ----------
    space : FeSpace
        Finite element space whose boundary carries the electrodes.
    electrode_edges, extended_edges : list of int arrays
        Per electrode, the boundary-edge indices of e_m and of the
        extended electrode containing it.
    impedances : (M,) array
        Constant surface impedance per electrode.
    bounds : (Z1, Z2)
        Admissible impedance window.
    """

    def __init__(self, space, electrode_edges, extended_edges, impedances,
                 bounds=(0.01, 10.0)):
        self.space = space
        self.electrode_edges = [np.asarray(e, dtype=int) for e in electrode_edges]
        self.extended_edges = [np.asarray(e, dtype=int) for e in extended_edges]
        self.M = len(self.electrode_edges)
        self.z = np.asarray(impedances, dtype=float)
        self.Z1, self.Z2 = bounds
        if self.z.shape != (self.M,):
            raise LayoutError("need one impedance per electrode")
        if np.any(self.z < self.Z1) or np.any(self.z > self.Z2):
            raise LayoutError("impedance outside the admissible window")
        nb = len(space.bnodes)
        self._check_partition(nb)
        L = space.edge_lengths
        self.measures = np.array([L[e].sum() for e in self.electrode_edges])
        self.ext_measures = np.array([L[e].sum() for e in self.extended_edges])

    def _check_partition(self, nb):
        seen = np.zeros(nb, dtype=int)
        for e, ee in zip(self.electrode_edges, self.extended_edges):
            if not np.all(np.isin(e, ee)):
                raise LayoutError("electrode not contained in its extended electrode")
            seen[ee] += 1
        if np.any(seen > 1):
            raise LayoutError("extended electrodes overlap")
        if np.any(seen == 0):
            raise LayoutError("extended electrodes do not cover the boundary")
        flat = np.concatenate(self.electrode_edges)
        if len(np.unique(flat)) != len(flat):
            raise LayoutError("electrodes overlap")

    def _edge_endpoints(self, edge_indices):
        mesh = self.space.mesh
        pts = mesh.vertices[mesh.boundary_edges[edge_indices]].reshape(-1, 2)
        return np.unique(pts, axis=0)

    def stats(self):
        def diam(edge_indices):
            pts = self._edge_endpoints(edge_indices)
            d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
            return float(np.sqrt(d2.max()))

        delta = max(diam(e) for e in self.electrode_edges)
        mu = float(self.measures.max() / self.measures.min())
        theta = float((self.ext_measures / self.measures).max())
        eta = max(diam(ee) / self.ext_measures[m]
                  for m, ee in enumerate(self.extended_edges))
        stats = LayoutStats(delta=delta, mu=mu, theta=theta, eta=eta, M=self.M)
        bound = eta * theta * mu * self.space.boundary_length / delta
        if self.M > bound + 1e-9:
            raise LayoutError("electrode count exceeds the geometric bound")
        return stats

    def electrode_integrals(self, f):
        """Integrals of a BoundaryFunction over each electrode (exact)."""
        return self._integrals(f, self.electrode_edges)

    def extended_integrals(self, f):
        return self._integrals(f, self.extended_edges)

    def _integrals(self, f, groups):
        space = self.space
        L = space.edge_lengths
        nb = len(space.bnodes)
        if f.kind == "nodal":
            v = f.values
            edge_int = 0.5 * L * (v + np.roll(v, -1))
        else:
            edge_int = L * f.values
        return np.array([edge_int[g].sum() for g in groups])


def layout_from_mesh(space, m, k, impedance=0.1, bounds=(0.01, 10.0)):
    """Build the dyadic layout: extended electrodes are the boundary edges
    m generations coarser; each electrode takes the first k of the 2^m
    fine sub-edges of its parent.
    """
    if m < 0 or k < 1 or k > 2**m:
        raise LayoutError(f"need 1 <= k <= 2^m, got m={m}, k={k}")
    nb = len(space.bnodes)
    group = 2**m
    if nb % group != 0 or nb // group < 2:
        raise LayoutError("boundary is too coarse for the requested grouping")
    M = nb // group
    electrodes = [np.arange(j * group, j * group + k) for j in range(M)]
    extended = [np.arange(j * group, (j + 1) * group) for j in range(M)]
    z = np.full(M, float(impedance))
    return ElectrodeLayout(space, electrodes, extended, z, bounds=bounds)


# ---------------------------------------------------------------------------
# vector <-> piecewise-constant identification and the projection algebra


def phi(I, layout):
    """Phi(I): edge-wise constant density I_m / |e_m| on each electrode."""
    I = np.asarray(I, dtype=float)
    vals = np.zeros(len(layout.space.bnodes))
    for m, edges in enumerate(layout.electrode_edges):
        vals[edges] = I[m] / layout.measures[m]
    return BoundaryFunction(vals, kind="edge", zero_mean=abs(I.sum()) < 1e-12)


def phi_inv(f, layout):
    """Inverse identification: integrate an edge function over each electrode."""
    if f.kind != "edge":
        raise FemError("phi_inv expects an edge-wise constant function")
    return layout.electrode_integrals(f)


def project_e(f, layout):
    """Orthogonal projection onto PC: average over each electrode."""
    ints = layout.electrode_integrals(f)
    vals = np.zeros(len(layout.space.bnodes))
    for m, edges in enumerate(layout.electrode_edges):
        vals[edges] = ints[m] / layout.measures[m]
    return BoundaryFunction(vals, kind="edge")


def project_star(f, space):
    """Remove the boundary mean (orthogonal projection onto zero-mean)."""
    mean = f.mean(space)
    return BoundaryFunction(f.values - mean, kind=f.kind, zero_mean=True)


def project_pc_star(f, layout):
    """P = P_{e*} o P_e: electrode averages, recentred to zero sum over e."""
    ints = layout.electrode_integrals(f)
    c0 = ints.sum() / layout.measures.sum()
    vals = np.zeros(len(layout.space.bnodes))
    for m, edges in enumerate(layout.electrode_edges):
        vals[edges] = ints[m] / layout.measures[m] - c0
    return BoundaryFunction(vals, kind="edge")


def q_operator(f, layout):
    """Q(f): integral over each extended electrode spread over the electrode."""
    ints = layout.extended_integrals(f)
    vals = np.zeros(len(layout.space.bnodes))
    for m, edges in enumerate(layout.electrode_edges):
        vals[edges] = ints[m] / layout.measures[m]
    return BoundaryFunction(vals, kind="edge")


def e_operator(V, layout):
    """E(V): V_m / |e_m| on each extended electrode, recentred to zero mean."""
    V = np.asarray(V, dtype=float)
    vals = np.zeros(len(layout.space.bnodes))
    for m, edges in enumerate(layout.extended_edges):
        vals[edges] = V[m] / layout.measures[m]
    f = BoundaryFunction(vals, kind="edge")
    return project_star(f, layout.space)


def boundary_inner(f, g, space):
    """Exact L2 inner product on the boundary for nodal/edge functions."""
    nb = len(space.bnodes)
    L = space.edge_lengths
    fv, gv = f.values, g.values
    if f.kind == "nodal" and g.kind == "nodal":
        return float(fv @ (space.boundary_mass @ gv))
    if f.kind == "edge" and g.kind == "edge":
        return float(np.sum(L * fv * gv))
    if f.kind == "edge":
        f, g = g, f
        fv, gv = gv, fv
    # nodal x edge: integral over edge b of the P1 part is the trapezoid value
    mean_per_edge = 0.5 * (fv + np.roll(fv, -1))
    return float(np.sum(L * mean_per_edge * gv))


# ---------------------------------------------------------------------------
# dense representations in the discontinuous P1 boundary space


class BoundaryOperators:
    """Dense matrices of the electrode operator algebra on one layout.

    Nodal functions (B nodal dofs) and edge functions (B edge dofs) embed
    into the edge-wise linear discontinuous space (2B dofs) where norms
    are exact.  All norms are generalized singular values in the
    corresponding mass geometries.
    """

    def __init__(self, layout):
        self.layout = layout
        space = layout.space
        nb = len(space.bnodes)
        L = space.edge_lengths
        self.nodal_mass = space.boundary_mass.toarray()
        self.p0_mass = np.diag(L)
        blocks = [l / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]]) for l in L]
        self.dg_mass = scipy.linalg.block_diag(*blocks)
        self.nodal_to_dg = np.zeros((2 * nb, nb))
        self.p0_to_dg = np.zeros((2 * nb, nb))
        for b in range(nb):
            self.nodal_to_dg[2 * b, b] = 1.0
            self.nodal_to_dg[2 * b + 1, (b + 1) % nb] = 1.0
            self.p0_to_dg[2 * b, b] = 1.0
            self.p0_to_dg[2 * b + 1, b] = 1.0
        # integration functionals against nodal data
        w = np.asarray(space.boundary_weights)
        self.nodal_weights = w
        self.q_int = np.zeros((layout.M, nb))       # extended-electrode integrals
        self.e_int = np.zeros((layout.M, nb))       # electrode integrals
        half = 0.5 * L
        for m in range(layout.M):
            for e in layout.extended_edges[m]:
                self.q_int[m, e] += half[e]
                self.q_int[m, (e + 1) % nb] += half[e]
            for e in layout.electrode_edges[m]:
                self.e_int[m, e] += half[e]
                self.e_int[m, (e + 1) % nb] += half[e]
        # edge-valued indicator spreaders
        self.spread_e = np.zeros((nb, layout.M))    # 1/|e_m| on electrode edges
        self.spread_ext = np.zeros((nb, layout.M))  # 1/|e_m| on extended edges
        for m in range(layout.M):
            self.spread_e[layout.electrode_edges[m], m] = 1.0 / layout.measures[m]
            self.spread_ext[layout.extended_edges[m], m] = 1.0 / layout.measures[m]
        self.star_nodal = np.eye(nb) - np.outer(np.ones(nb), w) / space.boundary_length
        self.star_p0 = np.eye(nb) - np.outer(np.ones(nb), L) / space.boundary_length

    def q_matrix(self):
        """Q as nodal -> edge values."""
        return self.spread_e @ self.q_int

    def p_matrix(self):
        """P = P_{e*} o P_e as nodal -> edge values."""
        P_e = self.spread_e @ self.e_int
        chi_e = np.zeros(len(self.layout.space.bnodes))
        for edges in self.layout.electrode_edges:
            chi_e[edges] = 1.0
        total = self.layout.measures.sum()
        return P_e - np.outer(chi_e, self.e_int.sum(axis=0)) / total

    def e_matrix(self):
        """E as electrode-pattern vector V -> edge values."""
        return self.star_p0 @ self.spread_ext

    def e_matrix_pc(self):
        """E as a map on PC coefficients (values on electrodes) -> edge values.

        A PC function with coefficients c corresponds to the pattern
        V = c * |e_m|; this is the representation whose norm the theory
        bounds by sqrt(theta).
        """
        return self.e_matrix() @ np.diag(self.layout.measures)

    def one_minus_ep_matrix(self):
        """(1 - E o P) as nodal -> DG values.

        P's recentring term is constant on the electrode union and E kills
        constants, so E o P = E o Phi^{-1} o P_e here.
        """
        EP = self.e_matrix() @ self.e_int
        return self.nodal_to_dg - self.p0_to_dg @ EP

    def composite_matrix(self, R):
        """E o (Phi R Phi^{-1}) o Q as nodal -> edge values."""
        return self.e_matrix() @ R @ self.q_int

    def norm_nodal_to_edge(self, T, zero_mean_input=True):
        Tt = T @ self.star_nodal if zero_mean_input else T
        return generalized_norm(Tt, self.p0_mass, self.nodal_mass)

    def norm_nodal_to_dg(self, T, zero_mean_input=True):
        Tt = T @ self.star_nodal if zero_mean_input else T
        return generalized_norm(Tt, self.dg_mass, self.nodal_mass)

    def norm_pc_to_edge(self, T):
        """Input in PC coefficients (values on electrodes), mass diag(|e_m|)."""
        return generalized_norm(T, self.p0_mass, np.diag(self.layout.measures))

    def dg_norm(self, dg_values):
        return float(np.sqrt(dg_values @ (self.dg_mass @ dg_values)))


def generalized_norm(T, M_out, M_in):
    """Largest generalized singular value of T between mass geometries."""
    A = T.T @ M_out @ T
    A = 0.5 * (A + A.T)
    vals = scipy.linalg.eigh(A, M_in, eigvals_only=True)
    return float(np.sqrt(max(vals[-1], 0.0)))


def spectral_norm_zero_sum(R):
    """Euclidean operator norm of a matrix restricted to zero-sum vectors."""
    M = R.shape[0]
    C = np.eye(M) - np.ones((M, M)) / M
    return float(np.linalg.norm(R @ C, 2))


# ---------------------------------------------------------------------------
# the coupled CEM solve and resistance matrices


@dataclass
class ResistanceMatrix:
    """M x M current -> voltage map with zero row and column sums."""

    matrix: np.ndarray
    provenance: str = "full"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)

    def check_invariants(self, tol=1e-10):
        scale = max(1.0, float(np.abs(self.matrix).max()))
        ok_rows = np.max(np.abs(self.matrix @ np.ones(self.matrix.shape[0]))) <= tol * scale
        ok_cols = np.max(np.abs(self.matrix.T @ np.ones(self.matrix.shape[0]))) <= tol * scale
        return bool(ok_rows and ok_cols)


@dataclass
class CemSolution:
    """Interior potential, electrode potentials and solver residual."""

    u: np.ndarray
    U: np.ndarray
    residual: float


class CemSolver:
    """Factorized coupled solver for one conductivity and layout.

    Unknowns are (u, U, lambda): the stiffness block plus the impedance
    coupling, a Lagrange row forcing the zero boundary mean of u, then a
    constant shift to meet the standard normalization
    sum_m(|e_m| U_m - z_m I_m) = 0.
    """

    def __init__(self, A, layout):
        self.layout = layout
        space = layout.space
        self.space = space
        n = space.num_nodes
        M = layout.M
        K = assemble_stiffness(A, space).tolil()
        L = space.edge_lengths
        nb = len(space.bnodes)
        D = np.zeros((n, M))
        G = np.zeros(M)
        for m in range(M):
            zm = layout.z[m]
            for e in layout.electrode_edges[m]:
                i = int(space.bnodes[e])
                j = int(space.bnodes[(e + 1) % nb])
                le = L[e]
                K[i, i] += le / (3.0 * zm)
                K[j, j] += le / (3.0 * zm)
                K[i, j] += le / (6.0 * zm)
                K[j, i] += le / (6.0 * zm)
                D[i, m] -= le / (2.0 * zm)
                D[j, m] -= le / (2.0 * zm)
            G[m] = layout.measures[m] / zm
        w = np.zeros(n)
        w[space.bnodes] = space.boundary_weights
        top = sp.hstack([K.tocsr(), sp.csr_matrix(D), sp.csr_matrix(w[:, None])])
        mid = sp.hstack([sp.csr_matrix(D.T), sp.diags(G), sp.csr_matrix((M, 1))])
        bot = sp.hstack([sp.csr_matrix(w[None, :]), sp.csr_matrix((1, M)),
                         sp.csr_matrix((1, 1))])
        self._sys = sp.vstack([top, mid, bot]).tocsc()
        self._lu = spla.splu(self._sys)
        self._n = n
        self._M = M

    def solve(self, I):
        I = np.asarray(I, dtype=float)
        if abs(I.sum()) > 1e-10 * (np.abs(I).sum() + 1.0):
            raise LayoutError("current pattern must have zero sum")
        rhs = np.concatenate([np.zeros(self._n), I, [0.0]])
        sol = self._lu.solve(rhs)
        res = self._sys @ sol - rhs
        residual = float(np.linalg.norm(res) / (np.linalg.norm(rhs) + 1e-300))
        u = sol[:self._n]
        U = sol[self._n:self._n + self._M]
        # shift so that sum(|e_m| U_m - z_m I_m) = 0
        c = (self.layout.z @ I - self.layout.measures @ U) / self.layout.measures.sum()
        return CemSolution(u=u + c, U=U + c, residual=residual)

    def recovered_currents(self, sol):
        """I_m = (1/z_m) integral over e_m of (U_m - u)."""
        from .fem import trace

        t = trace(sol.u, self.space)
        ints = self.layout.electrode_integrals(t)
        return (self.layout.measures * sol.U - ints) / self.layout.z


def solve_cem(A, I, layout):
    """One-shot CEM solve; use CemSolver for repeated patterns."""
    return CemSolver(A, layout).solve(I)


def pattern_basis(M):
    """The M-1 zero-sum patterns e_j - e_M."""
    out = []
    for j in range(M - 1):
        p = np.zeros(M)
        p[j] = 1.0
        p[M - 1] = -1.0
        out.append(p)
    return out


def _complete_from_basis_voltages(V_list):
    """Assemble R from voltages of the e_j - e_M basis, with R[1] = 0."""
    M = len(V_list) + 1
    V = np.column_stack(V_list)  # (M, M-1)
    vbar = V.sum(axis=1) / M
    R = np.empty((M, M))
    R[:, :M - 1] = V - vbar[:, None]
    R[:, M - 1] = -vbar
    return R


def _voltages_from_trace(t, layout):
    """Electrode-averaged, zero-sum voltage pattern from a boundary trace."""
    ints = layout.electrode_integrals(t)
    c = -ints.sum() / layout.measures.sum()
    return ints + c * layout.measures


def resistance_matrix(A, layout):
    """Full CEM resistance matrix (contact impedances included)."""
    from .fem import trace

    solver = CemSolver(A, layout)
    V_list = []
    for p in pattern_basis(layout.M):
        sol = solver.solve(p)
        V_list.append(_voltages_from_trace(trace(sol.u, layout.space), layout))
    return ResistanceMatrix(_complete_from_basis_voltages(V_list), provenance="full")


def simplified_resistance_matrix(A, layout):
    """Simplified resistance matrix: electrode-averaged zero-mean Neumann
    solves with the current density Phi(I); no contact impedance."""
    from .fem import trace

    solver = NeumannSolver(A, layout.space)
    V_list = []
    for p in pattern_basis(layout.M):
        sol = solver.solve(phi(p, layout))
        V_list.append(_voltages_from_trace(trace(sol.values, layout.space), layout))
    return ResistanceMatrix(_complete_from_basis_voltages(V_list), provenance="simplified")


def lift_to_operator(R, layout):
    """PC-space representation of Phi o R o Phi^{-1} (coefficients on electrodes).

    Returns the M x M matrix acting on PC coefficient vectors; its natural
    mass is diag(|e_m|).
    """
    mat = getattr(R, "matrix", R)
    D = np.diag(layout.measures)
    Dinv = np.diag(1.0 / layout.measures)
    return Dinv @ mat @ D


def operator_norm_pc(R_pc, layout, zero_mean=True):
    """L2 operator norm on PC (optionally restricted to PC_*)."""
    D = np.diag(layout.measures)
    T = R_pc
    if zero_mean:
        # mass-orthogonal projection onto zero-integral PC functions
        meas = layout.measures
        P = np.eye(layout.M) - np.outer(np.ones(layout.M), meas) / meas.sum()
        T = R_pc @ P
    return generalized_norm(T, D, D)


def save_resistance_csv(R, path):
    mat = getattr(R, "matrix", R)
    with open(path, "w") as f:
        for row in mat:
            f.write(",".join(repr(float(x)) for x in row) + "\n")


def load_resistance_csv(path, provenance="loaded"):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    return ResistanceMatrix(np.array(rows), provenance=provenance)


def dump_layout(layout, path):
    """Text dump: one line per electrode 'm : z : e-edges : ext-edges'."""
    with open(path, "w") as f:
        for m in range(layout.M):
            e = " ".join(str(i) for i in layout.electrode_edges[m])
            ee = " ".join(str(i) for i in layout.extended_edges[m])
            f.write(f"{m} : {layout.z[m]!r} : {e} : {ee}\n")

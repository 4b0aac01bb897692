"""Discrete Neumann-to-Dirichlet operators and their L2-L2 geometry.

An operator is represented densely on the boundary nodal basis: the
column for basis function i is the boundary trace of the zero-mean
Neumann solve whose load is the mean-removed basis density.  Distances
between representations are largest generalized singular values in the
boundary mass geometry; operators on different refinement levels are
compared by lifting the coarse one to the fine boundary (exact, since
the boundary spaces are nested).
"""

from dataclasses import dataclass, field

import numpy as np

from .cem import generalized_norm
from .fem import FemError, NeumannSolver, boundary_prolongation
from .conductivity import l1_distance


@dataclass
class NtDRep:
    """Dense NtD matrix on the boundary nodal basis of one space."""

    matrix: np.ndarray
    space: object
    level: int
    _solver: object = field(default=None, repr=False)

    def check_invariants(self, tol_mean=1e-10, tol_sym=1e-9):
        """Constants annihilated (input and output) and mass self-adjointness."""
        B = self.matrix.shape[0]
        scale = max(1.0, float(np.abs(self.matrix).max()))
        const_in = np.max(np.abs(self.matrix @ np.ones(B)))
        w = self.space.boundary_weights
        const_out = np.max(np.abs(w @ self.matrix)) / self.space.boundary_length
        MN = self.space.boundary_mass.toarray() @ self.matrix
        sym_defect = np.max(np.abs(MN - MN.T))
        return (const_in <= tol_mean * scale
                and const_out <= tol_mean * scale
                and sym_defect <= tol_sym * max(1.0, np.abs(MN).max()))


def ntd_assemble(A, space):
    """Assemble the NtD representation for an admissible conductivity."""
    solver = NeumannSolver(A, space)
    nb = len(space.bnodes)
    M_b = space.boundary_mass.toarray()
    w = space.boundary_weights
    L = space.boundary_length
    star = np.eye(nb) - np.outer(np.ones(nb), w) / L
    loads_local = M_b @ star
    N = np.empty((nb, nb))
    for i in range(nb):
        b = np.zeros(space.num_nodes)
        b[space.bnodes] = loads_local[:, i]
        sol = solver.solve_load(b)
        N[:, i] = sol.values[space.bnodes]
    return NtDRep(matrix=N, space=space, level=space.mesh.level, _solver=solver)


def lift_ntd(rep, fine_space):
    """Lift an NtD representation onto a finer nested boundary.

    For a fine boundary density g the coarse operator sees the loads of g
    against the coarse boundary basis; the coarse trace then prolongs
    linearly onto the fine boundary.
    """
    levels = fine_space.mesh.level - rep.level
    if levels < 0:
        raise FemError("target space is coarser than the representation")
    if levels == 0:
        return rep
    if rep._solver is None:
        raise FemError("representation was built without its solver; reassemble")
    P_b = boundary_prolongation(fine_space, rep.space, levels=levels)
    nb_f = len(fine_space.bnodes)
    M_f = fine_space.boundary_mass.toarray()
    w_f = fine_space.boundary_weights
    star_f = np.eye(nb_f) - np.outer(np.ones(nb_f), w_f) / fine_space.boundary_length
    loads = P_b.T @ (M_f @ star_f)  # (B_c, B_f), each column a compatible load
    space_c = rep.space
    N = np.empty((nb_f, nb_f))
    for j in range(nb_f):
        b = np.zeros(space_c.num_nodes)
        b[space_c.bnodes] = loads[:, j]
        sol = rep._solver.solve_load(b)
        N[:, j] = P_b @ sol.values[space_c.bnodes]
    return NtDRep(matrix=N, space=fine_space, level=fine_space.mesh.level)


def l2l2_distance(rep1, rep2):
    """L2-L2 operator distance (largest generalized singular value).

    Representations on different levels are lifted to the finer boundary
    first; incompatible boundaries are rejected.
    """
    if rep1.level > rep2.level:
        rep1, rep2 = rep2, rep1
    if rep1.level != rep2.level:
        rep1 = lift_ntd(rep1, rep2.space)
    if rep1.matrix.shape != rep2.matrix.shape:
        raise FemError("boundary bases are incompatible")
    M_b = rep2.space.boundary_mass.toarray()
    return generalized_norm(rep1.matrix - rep2.matrix, M_b, M_b)


def l2l2_norm(rep):
    M_b = rep.space.boundary_mass.toarray()
    return generalized_norm(rep.matrix, M_b, M_b)


def holder_check(A1, A2, space, ts=(0.25, 0.5, 0.75, 1.0)):
    """Continuity of the NtD map along the homotopy A1 + t (A2 - A1).

    Returns (slope, l1_dists, ntd_dists): the fitted log-log slope of the
    operator distance against the L1 coefficient distance, and both
    distance sequences.  The theory guarantees Hoelder continuity with an
    unknown exponent, so callers assert slope > 0, not a specific value.
    """
    from .conductivity import NodalField

    N1 = ntd_assemble(A1.values, space)
    l1s, ntds = [], []
    for t in ts:
        vals = A1.values + t * (A2.values - A1.values)
        At = NodalField(space.mesh if hasattr(space, "mesh") else A1.mesh,
                        vals, A1.lam0, A1.lam1, kind=A1.kind)
        At.require_admissible()
        l1s.append(l1_distance(At, A1))
        ntds.append(l2l2_distance(ntd_assemble(At.values, space), N1))
    lx = np.log(l1s)
    ly = np.log(ntds)
    design = np.vstack([lx, np.ones_like(lx)]).T
    slope = float(np.linalg.lstsq(design, ly, rcond=None)[0][0])
    return slope, np.array(l1s), np.array(ntds)


def fem_convergence_check(sigma, spaces, ref_space):
    """NtD error against a fine reference across nested refinements.

    sigma is evaluated pointwise on each level's vertices.  Returns
    (hs, errors, slope); errors must decrease monotonically for nested
    spaces and smooth coefficients.
    """
    if len(spaces) < 3:
        raise FemError("need at least 3 levels for a rate")
    from .fem import interpolate
    from .mesh import mesh_quality

    N_ref = ntd_assemble(interpolate(sigma, ref_space), ref_space)
    hs, errors = [], []
    for sp in spaces:
        N_h = ntd_assemble(interpolate(sigma, sp), sp)
        errors.append(l2l2_distance(N_h, N_ref))
        hs.append(mesh_quality(sp.mesh).h)
    lx = np.log(hs)
    ly = np.log(errors)
    design = np.vstack([lx, np.ones_like(lx)]).T
    slope = float(np.linalg.lstsq(design, ly, rcond=None)[0][0])
    return np.array(hs), np.array(errors), slope


def save_ntd_csv(rep, path):
    with open(path, "w") as f:
        for row in rep.matrix:
            f.write(",".join(repr(float(x)) for x in row) + "\n")

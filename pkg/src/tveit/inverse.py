"""Regularized fully discrete inversion.

The objective is the squared Frobenius misfit of the simplified
resistance matrix against the measured one, divided by the regularization
weight, plus the exact total variation of the P1 conductivity.  Its data
term is differentiated by the adjoint method (one extra Neumann solve per
current pattern); the TV term uses a Huber-smoothed gradient with
continuation.  Noise-driven parameter schedules tie the regularization
weight, the mesh size and the electrode size to the noise level through
power laws with validity inequalities.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cem import (
    NeumannSolver,
    layout_from_mesh,
    pattern_basis,
    phi,
    resistance_matrix,
    ResistanceMatrix,
    simplified_resistance_matrix,
    spectral_norm_zero_sum,
    _complete_from_basis_voltages,
    _voltages_from_trace,
)
from .conductivity import (
    NodalField,
    _p1_gradients,
    l1_error,
    project_to_admissible,
    tv_seminorm,
)
from .fem import BoundaryFunction, FeSpace, trace
from .mesh import build_initial_triangulation, mesh_quality, refine


class ScheduleError(ValueError):
    """Raised when a schedule cannot be realized on the dyadic families."""


@dataclass(frozen=True)
class Schedule:
    """Power-law parameter rule a = c eps^gamma, h <= c0 eps^a1,
    c1 eps^a2 <= delta <= c2 eps^a2, with assumed theory exponents."""

    gamma: float
    a1: float
    a2: float
    c: float = 1.0
    c0: float = 1.0
    c1: float = 0.2
    c2: float = 1.0
    alpha1: float = 0.5
    beta1: float = 0.1
    dim: int = 2
    mode: str = "absolute"


def validate_schedule(s):
    """Evaluate the schedule inequalities; returns a list of violations."""
    bad = []
    for name in ("gamma", "a1", "a2", "c", "c0", "c1", "c2"):
        if getattr(s, name) <= 0:
            bad.append(f"{name} must be positive")
    if s.c1 >= s.c2:
        bad.append("need c1 < c2")
    if s.mode not in ("absolute", "relative"):
        bad.append("mode must be 'absolute' or 'relative'")
    if bad:
        return bad
    if not s.gamma < s.a2:
        bad.append("gamma < a2 violated")
    if s.mode == "absolute":
        if not s.gamma + 2 * (s.dim - 1) * s.a2 < 2:
            bad.append("gamma + 2(N-1) a2 < 2 violated")
    else:
        if not s.gamma < 2:
            bad.append("gamma < 2 violated")
    if not s.gamma < 2 * s.a1 * s.alpha1:
        bad.append("gamma < 2 a1 alpha1 violated")
    if not s.gamma < s.beta1:
        bad.append("gamma < beta1 violated")
    return bad


class DyadicFamily:
    """Nested meshes of one polygon with the matching electrode family.

    Electrode level le means: extended electrodes are the boundary edges
    of generation le - m, each electrode the first k of its 2^m fine
    sub-edges at generation le.  A layout at level le can be realized on
    any mesh of generation >= le by splitting edges, which keeps the same
    physical electrodes across meshes.
    """

    def __init__(self, polygon, m=1, k=1, impedance=0.1, bounds=(0.01, 10.0),
                 max_level=9):
        self.polygon = polygon
        self.m = m
        self.k = k
        self.impedance = impedance
        self.bounds = bounds
        self.max_level = max_level
        self._meshes = [build_initial_triangulation(polygon)]
        self._spaces = {}

    def mesh(self, level):
        if level > self.max_level:
            raise ScheduleError(f"level {level} exceeds the configured maximum "
                                f"{self.max_level}")
        while len(self._meshes) <= level:
            self._meshes.append(refine(self._meshes[-1]))
        return self._meshes[level]

    def space(self, level):
        if level not in self._spaces:
            self._spaces[level] = FeSpace(self.mesh(level))
        return self._spaces[level]

    def h(self, level):
        return mesh_quality(self.mesh(level)).h

    def layout(self, electrode_level, solve_level=None):
        if electrode_level < self.m:
            raise ScheduleError("electrode level below the coarsening depth")
        if solve_level is None:
            solve_level = electrode_level
        if solve_level < electrode_level:
            raise ScheduleError("solving mesh coarser than the electrodes")
        gap = solve_level - electrode_level
        return layout_from_mesh(self.space(solve_level), m=self.m + gap,
                                k=self.k * 2**gap, impedance=self.impedance,
                                bounds=self.bounds)

    def delta(self, electrode_level):
        return self.layout(electrode_level).stats().delta


@dataclass(frozen=True)
class SchedulePoint:
    """Concrete schedule outcome for one noise level."""

    eps: float
    a: float
    mesh_level: int
    h: float
    electrode_level: int
    delta: float
    M: int


def schedule_apply(schedule, eps, family):
    """Realize the schedule at a noise level on the dyadic family.

    Picks the coarsest mesh with h <= c0 eps^a1 and the coarsest electrode
    level with delta <= c2 eps^a2, then verifies the lower bracket
    c1 eps^a2 <= delta (absolute mode only; the relative-noise rule has no
    lower bracket).
    """
    bad = validate_schedule(schedule)
    if bad:
        raise ScheduleError("; ".join(bad))
    if not 0 < eps <= 1:
        raise ScheduleError("noise level must lie in (0, 1]")
    a = schedule.c * eps**schedule.gamma
    h_target = schedule.c0 * eps**schedule.a1
    level = None
    for n in range(family.max_level + 1):
        if family.h(n) <= h_target:
            level = n
            break
    if level is None:
        raise ScheduleError(f"mesh target h <= {h_target:.3e} needs a level beyond "
                            f"the maximum {family.max_level}")
    d_target = schedule.c2 * eps**schedule.a2
    e_level = None
    for le in range(family.m, family.max_level + 1):
        if family.delta(le) <= d_target:
            e_level = le
            break
    if e_level is None:
        raise ScheduleError(f"electrode target delta <= {d_target:.3e} needs a level "
                            f"beyond the maximum {family.max_level}")
    delta = family.delta(e_level)
    if schedule.mode == "absolute" and delta < schedule.c1 * eps**schedule.a2:
        raise ScheduleError("dyadic electrode sizes skip the bracket "
                            f"[{schedule.c1 * eps**schedule.a2:.3e}, {d_target:.3e}]")
    level = max(level, e_level)
    layout = family.layout(e_level, solve_level=level)
    return SchedulePoint(eps=eps, a=a, mesh_level=level, h=family.h(level),
                         electrode_level=e_level, delta=delta, M=layout.M)


def noise_inject(R0, eps, seed, mode="absolute"):
    """Perturb a resistance matrix, keeping zero row and column sums.

    Absolute mode rescales the projected uniform perturbation so that its
    Frobenius norm equals M * eps exactly; relative mode pins the spectral
    norm to eps.  Deterministic given the seed.
    """
    if not 0 < eps <= 1:
        raise ScheduleError("noise level must lie in (0, 1]")
    mat = getattr(R0, "matrix", R0)
    M = mat.shape[0]
    rng = np.random.default_rng(seed)
    C = np.eye(M) - np.ones((M, M)) / M
    noise = None
    for _ in range(16):
        E = rng.uniform(-1.0, 1.0, size=(M, M))
        E = C @ E @ C
        size = np.linalg.norm(E) if mode == "absolute" else np.linalg.norm(E, 2)
        if size > 1e-12:
            noise = E / size
            break
    target = M * eps if mode == "absolute" else eps
    out = mat + target * noise
    return ResistanceMatrix(out, provenance="measured")


# ---------------------------------------------------------------------------
# objective and adjoint gradient


def _huber_value(t, tau):
    return np.where(t <= tau, t**2 / (2 * tau), t - tau / 2)


def tv_huber(field, tau):
    """Huber-smoothed total variation."""
    mesh = field.mesh
    areas = mesh.triangle_areas()
    if field.kind == "scalar":
        g = _p1_gradients(mesh, field.values)
        t = np.hypot(g[:, 0], g[:, 1])
        return float(np.sum(areas * _huber_value(t, tau)))
    tvs = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            g = _p1_gradients(mesh, field.values[:, i, j])
            t = np.hypot(g[:, 0], g[:, 1])
            tvs[i, j] = np.sum(areas * _huber_value(t, tau))
    return float(np.linalg.norm(tvs, 2))


def _forward_simplified(values, layout):
    """Traces and voltage patterns of all basis solves for one conductivity."""
    solver = NeumannSolver(values, layout.space)
    traces, V_list = [], []
    for p in pattern_basis(layout.M):
        sol = solver.solve(phi(p, layout))
        t = trace(sol.values, layout.space)
        traces.append(sol.values)
        V_list.append(_voltages_from_trace(t, layout))
    Rhat = _complete_from_basis_voltages(V_list)
    return solver, traces, Rhat


def objective(field, R_meas, a, layout):
    """Objective value with its parts: misfit^2 / a + tv (exact TV).

    Returns (value, misfit_frobenius, tv).
    """
    meas = getattr(R_meas, "matrix", R_meas)
    _, _, Rhat = _forward_simplified(field.values, layout)
    misfit = float(np.linalg.norm(Rhat - meas))
    tv = tv_seminorm(field)
    return misfit**2 / a + tv, misfit, tv


def tv_gradient_huber(field, tau):
    """Nodal gradient of the Huber-smoothed total variation (exact per triangle)."""
    mesh = field.mesh
    tri = mesh.triangles
    areas = mesh.triangle_areas()
    p = mesh.vertices[tri]
    # gradients of the three hat functions on each triangle
    b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                  p[:, 2, 1] - p[:, 0, 1],
                  p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0],
                  p[:, 0, 0] - p[:, 2, 0],
                  p[:, 1, 0] - p[:, 0, 0]], axis=1)
    hat_grads = np.stack([b, c], axis=2) / (2.0 * areas)[:, None, None]

    if field.kind == "scalar":
        g = _p1_gradients(mesh, field.values)
        t = np.hypot(g[:, 0], g[:, 1])
        weight = areas / np.maximum(t, tau)
        contrib = weight[:, None] * np.einsum("tka,ta->tk", hat_grads, g)
        out = np.zeros(mesh.num_vertices)
        np.add.at(out, tri.ravel(), contrib.ravel())
        return out

    # tensor: spectral norm of the matrix of Huberized entrywise TVs,
    # differentiated through the leading eigenpair
    tvs = np.zeros((2, 2))
    grads_ab = {}
    ts_ab = {}
    for i in range(2):
        for j in range(2):
            g = _p1_gradients(mesh, field.values[:, i, j])
            t = np.hypot(g[:, 0], g[:, 1])
            tvs[i, j] = np.sum(areas * _huber_value(t, tau))
            grads_ab[(i, j)] = g
            ts_ab[(i, j)] = t
    evals, evecs = np.linalg.eigh(tvs)
    idx = int(np.argmax(np.abs(evals)))
    sgn = np.sign(evals[idx]) if evals[idx] != 0 else 1.0
    v = evecs[:, idx]
    out = np.zeros((mesh.num_vertices, 2, 2))
    for i in range(2):
        for j in range(2):
            dnorm = sgn * v[i] * v[j]
            g = grads_ab[(i, j)]
            t = ts_ab[(i, j)]
            weight = areas / np.maximum(t, tau)
            contrib = dnorm * weight[:, None] * np.einsum("tka,ta->tk", hat_grads, g)
            acc = np.zeros(mesh.num_vertices)
            np.add.at(acc, tri.ravel(), contrib.ravel())
            out[:, i, j] += acc
    return 0.5 * (out + np.transpose(out, (0, 2, 1)))


def gradient(field, R_meas, a, tau, layout, state=None):
    """Adjoint gradient of the Huber-smoothed objective, plus parts.

    One forward and one adjoint Neumann solve per current pattern,
    sharing a single factorization; pass the forward state to reuse
    solves already performed.  Returns (grad, value, misfit, tv) where
    value and tv are the exact-TV objective and seminorm.
    """
    meas = getattr(R_meas, "matrix", R_meas)
    space = layout.space
    mesh = space.mesh
    tri = mesh.triangles
    areas = mesh.triangle_areas()
    solver, forwards, Rhat = state if state is not None else _forward_simplified(
        field.values, layout)
    delta = Rhat - meas
    misfit = float(np.linalg.norm(delta))
    gamma_cols = (2.0 / a) * delta
    gamma_bar = gamma_cols.mean(axis=1)
    meas_weights = layout.measures
    total = meas_weights.sum()

    scalar = field.kind == "scalar"
    if scalar:
        data_grad = np.zeros(mesh.num_vertices)
    else:
        data_grad = np.zeros((mesh.num_vertices, 2, 2))
    nb = len(space.bnodes)
    for j in range(layout.M - 1):
        W = gamma_cols[:, j] - gamma_bar
        What = W - (W @ meas_weights) / total
        adj_vals = np.zeros(nb)
        for m, edges in enumerate(layout.electrode_edges):
            adj_vals[edges] = What[m]
        g_adj = BoundaryFunction(adj_vals, kind="edge")
        w_sol = solver.solve_load(g_adj.load_vector(space))
        gv = _p1_gradients(mesh, forwards[j])
        gw = _p1_gradients(mesh, w_sol.values)
        if scalar:
            coef = -(areas / 3.0) * np.sum(gv * gw, axis=1)
            np.add.at(data_grad, tri.ravel(), np.repeat(coef, 3))
        else:
            outer = -(areas / 3.0)[:, None, None] * (
                0.5 * (gw[:, :, None] * gv[:, None, :]
                       + gv[:, :, None] * gw[:, None, :]))
            for kvert in range(3):
                np.add.at(data_grad, tri[:, kvert], outer)

    tv = tv_seminorm(field)
    grad = data_grad + tv_gradient_huber(field, tau)
    return grad, misfit**2 / a + tv, misfit, tv


# ---------------------------------------------------------------------------
# projected descent


@dataclass(frozen=True)
class OptimizerSettings:
    max_iters: int = 60
    tol: float = 1e-9
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 30
    tau: float = 1e-3
    tau_floor: float = 1e-12
    ridge: float = 1e-12


@dataclass
class InversionResult:
    field: NodalField
    objective_trace: list
    misfit_frobenius: float
    misfit_spectral: float
    tv: float
    l1_error: float | None
    iterations: int
    converged: bool
    warning: str | None = None


def _scatter_matrix(mesh):
    """Sparse (T, V) map: per-triangle value -> one third of |K| at each vertex."""
    import scipy.sparse as sp

    tri = mesh.triangles
    areas = mesh.triangle_areas()
    T = mesh.num_triangles
    rows = np.repeat(np.arange(T), 3)
    cols = tri.ravel()
    vals = np.repeat(areas / 3.0, 3)
    return sp.csr_matrix((vals, (rows, cols)), shape=(T, mesh.num_vertices))


def _misfit_jacobian(field, layout, state):
    """Jacobian of vec(Rhat) with respect to the nodal conductivity (scalar).

    One adjoint solve per electrode functional; the per-triangle products
    of forward and adjoint gradients assemble every entry at once.
    """
    space = layout.space
    mesh = space.mesh
    solver, forwards, _ = state
    M = layout.M
    nb = len(space.bnodes)
    L_e = layout.measures.sum()

    adj_grads = []
    for m in range(M):
        vals = np.full(nb, -layout.measures[m] / L_e)
        vals[layout.electrode_edges[m]] += 1.0
        g_adj = BoundaryFunction(vals, kind="edge")  # recentred indicator of e_m
        w_sol = solver.solve_load(g_adj.load_vector(space))
        adj_grads.append(_p1_gradients(mesh, w_sol.values))
    fw_grads = [_p1_gradients(mesh, v) for v in forwards]

    S = _scatter_matrix(mesh)
    A_w = np.stack(adj_grads)            # (M, T, 2)
    A_v = np.stack(fw_grads)             # (M-1, T, 2)
    dots = np.einsum("mta,jta->mjt", A_w, A_v)
    J_tilde = -(dots.reshape(M * (M - 1), -1) @ S).reshape(M, M - 1, -1)

    # the centring constant and the column completion are linear in V
    meas = layout.measures
    dV = J_tilde - (J_tilde.sum(axis=0) / L_e) * meas[:, None, None]
    vbar = dV.sum(axis=1) / M            # (M, n)
    n = dV.shape[2]
    J = np.empty((M, M, n))
    J[:, :M - 1, :] = dV - vbar[:, None, :]
    J[:, M - 1, :] = -vbar
    return J.reshape(M * M, n)


def _tv_weighted_stiffness(field, tau):
    """Lagged-diffusivity matrix: its product with the nodal values is the
    exact gradient of the Huberized TV at the current field."""
    import scipy.sparse as sp

    mesh = field.mesh
    tri = mesh.triangles
    areas = mesh.triangle_areas()
    p = mesh.vertices[tri]
    b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                  p[:, 2, 1] - p[:, 0, 1],
                  p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0],
                  p[:, 0, 0] - p[:, 2, 0],
                  p[:, 1, 0] - p[:, 0, 0]], axis=1)
    hat_grads = np.stack([b, c], axis=2) / (2.0 * areas)[:, None, None]
    g = _p1_gradients(mesh, field.values)
    t = np.hypot(g[:, 0], g[:, 1])
    w = areas / np.maximum(t, tau)
    local = np.einsum("t,tia,tja->tij", w, hat_grads, hat_grads)
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.num_vertices
    K = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return 0.5 * (K + K.T)


def descend(start, R_meas, a, layout, opts=OptimizerSettings(), reference=None):
    """Projected Gauss-Newton descent on the Huberized misfit^2/a + tv_tau.

    The data term carries its full Jacobian (cheap: one extra Neumann
    solve per electrode); the TV term enters through its lagged-
    diffusivity matrix, which is simultaneously the Hessian model and the
    exact Huber-TV gradient.  Steps are Armijo-backtracked on the smoothed
    objective and projected into the admissible window; the Huber
    parameter halves when the search stalls.  An accepted step must stay
    at or below the last logged value, so the recorded objective trace is
    non-increasing by construction, including across continuation rounds.
    """
    if start.kind != "scalar":
        raise ScheduleError("the Gauss-Newton path reconstructs scalar fields")
    meas = getattr(R_meas, "matrix", R_meas)

    def smoothed(fld, tau, state=None):
        st = state if state is not None else _forward_simplified(fld.values, layout)
        misfit = float(np.linalg.norm(st[2] - meas))
        return misfit**2 / a + tv_huber(fld, tau), misfit, st

    field = project_to_admissible(start)
    tau = opts.tau
    f_cur, misfit, state = smoothed(field, tau)
    history = [f_cur]
    warning = None
    converged = False
    iterations = 0
    n = field.mesh.num_vertices

    for it in range(opts.max_iters):
        iterations = it + 1
        J = _misfit_jacobian(field, layout, state)
        r = (state[2] - meas).reshape(-1)
        L_w = _tv_weighted_stiffness(field, tau)
        g = (2.0 / a) * (J.T @ r) + L_w @ field.values
        gnorm = float(np.linalg.norm(g))
        if gnorm <= opts.tol:
            converged = True
            break
        H = (2.0 / a) * (J.T @ J) + L_w.toarray()
        H[np.diag_indices(n)] += opts.ridge
        try:
            direction = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            direction = -g
        accepted = False
        trial = 1.0
        cand = cand_state = f_new = misfit_new = None
        for _ in range(opts.max_backtracks):
            cand_vals = field.values + trial * direction
            cand = project_to_admissible(replace(field, values=cand_vals))
            d = (cand.values - field.values).ravel()
            dnorm2 = float(d @ d)
            if dnorm2 == 0.0:
                break
            f_new, misfit_new, cand_state = smoothed(cand, tau)
            if (f_new <= f_cur - (opts.armijo / max(trial, 1e-300)) * dnorm2
                    and f_new <= history[-1]):
                accepted = True
                break
            trial *= opts.backtrack
        if not accepted:
            if tau > opts.tau_floor:
                tau = max(tau / 2.0, opts.tau_floor)
                f_cur, misfit, state = smoothed(field, tau, state)
                continue
            warning = "line search failed at the Huber floor; returning best iterate"
            break
        field, state = cand, cand_state
        f_cur, misfit = f_new, misfit_new
        history.append(f_cur)

    mis_spec = spectral_norm_zero_sum(state[2] - meas)
    l1 = l1_error(field, reference) if reference is not None else None
    return InversionResult(field=field, objective_trace=history,
                           misfit_frobenius=misfit, misfit_spectral=mis_spec,
                           tv=tv_seminorm(field), l1_error=l1, iterations=iterations,
                           converged=converged, warning=warning)


@dataclass
class InversionConfig:
    """Everything one reconstruction needs; see the CLI for the JSON schema."""

    polygon: object
    phantom: object
    schedule: Schedule
    epsilon: float
    layout_m: int = 1
    layout_k: int = 1
    impedance: float = 0.1
    impedance_bounds: tuple = (0.01, 10.0)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    seed: int = 0
    max_level: int = 9
    data_level_offset: int = 2
    noise_mode: str = "absolute"
    data_model: str = "cem_fine"  # or "inverse_crime": simplified matrix, same mesh


def make_family(config):
    return DyadicFamily(config.polygon, m=config.layout_m, k=config.layout_k,
                        impedance=config.impedance, bounds=config.impedance_bounds,
                        max_level=config.max_level)


def simulate_measurement(config, family=None, point=None):
    """Simulated data for the scheduled layout, plus injected noise.

    Returns (R0, R_eps, point).  The default data model is the full CEM
    matrix on a mesh data_level_offset levels above the inversion mesh
    (same physical electrodes), which avoids the inverse crime; the
    "inverse_crime" model instead uses the simplified matrix on the
    inversion mesh itself and exists for noise-free self-tests.
    """
    family = family or make_family(config)
    point = point or schedule_apply(config.schedule, config.epsilon, family)
    if config.data_model == "inverse_crime":
        layout = family.layout(point.electrode_level, solve_level=point.mesh_level)
        truth = config.phantom.to_nodal(family.mesh(point.mesh_level))
        R0 = simplified_resistance_matrix(truth.values, layout)
    elif config.data_model == "cem_fine":
        data_level = point.mesh_level + config.data_level_offset
        data_layout = family.layout(point.electrode_level, solve_level=data_level)
        truth = config.phantom.to_nodal(family.mesh(data_level))
        R0 = resistance_matrix(truth.values, data_layout)
    else:
        raise ScheduleError(f"unknown data model {config.data_model!r}")
    R_eps = noise_inject(R0, config.epsilon, config.seed, mode=config.noise_mode)
    return R0, R_eps, point


def minimize(config, R_meas, family=None, point=None):
    """Reconstruct from a measured matrix under the config's schedule."""
    family = family or make_family(config)
    point = point or schedule_apply(config.schedule, config.epsilon, family)
    layout = family.layout(point.electrode_level, solve_level=point.mesh_level)
    mat = getattr(R_meas, "matrix", R_meas)
    if mat.shape != (layout.M, layout.M):
        raise ScheduleError("measurement size does not match the scheduled layout")
    mesh = family.mesh(point.mesh_level)
    mid = 0.5 * (config.phantom.lam0 + config.phantom.lam1)
    start = NodalField.constant(mesh, mid, config.phantom.lam0, config.phantom.lam1)
    return descend(start, R_meas, point.a, layout, opts=config.optimizer,
                   reference=config.phantom)


STUDY_COLUMNS = ["eps", "a", "h", "delta", "M", "iterations", "misfit_frobenius",
                 "misfit_spectral", "tv", "l1_error", "wall_time_s"]


@dataclass
class StudyReport:
    rows: list
    failures: list
    l1_monotone_ok: bool

    def column(self, name):
        return np.array([row[name] for row in self.rows])


def convergence_study(config, epsilons, seeds=None, slack=0.10):
    """Run the schedule across decreasing noise levels and record errors.

    One row per noise level; failures are recorded and the study
    continues.  l1_monotone_ok reports whether consecutive L1 errors are
    non-increasing within the slack.
    """
    epsilons = list(epsilons)
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ScheduleError("noise levels must be strictly decreasing")
    if seeds is None:
        seeds = [config.seed + i for i in range(len(epsilons))]
    family = make_family(config)
    rows, failures = [], []
    for eps, seed in zip(epsilons, seeds):
        cfg = replace(config, epsilon=eps, seed=seed)
        t0 = time.perf_counter()
        try:
            point = schedule_apply(cfg.schedule, eps, family)
            _, R_eps, _ = simulate_measurement(cfg, family=family, point=point)
            result = minimize(cfg, R_eps, family=family, point=point)
            rows.append({
                "eps": eps, "a": point.a, "h": point.h, "delta": point.delta,
                "M": point.M, "iterations": result.iterations,
                "misfit_frobenius": result.misfit_frobenius,
                "misfit_spectral": result.misfit_spectral,
                "tv": result.tv, "l1_error": result.l1_error,
                "wall_time_s": time.perf_counter() - t0,
            })
        except Exception as exc:  # record and continue with the next level
            failures.append({"eps": eps, "error": f"{type(exc).__name__}: {exc}"})
    l1 = [row["l1_error"] for row in rows]
    ok = all(b <= a * (1 + slack) for a, b in zip(l1, l1[1:]))
    return StudyReport(rows=rows, failures=failures, l1_monotone_ok=ok)


def write_study_csv(report, path):
    with open(path, "w") as f:
        f.write(",".join(STUDY_COLUMNS) + "\n")
        for row in report.rows:
            f.write(",".join(_csv_cell(row[c]) for c in STUDY_COLUMNS) + "\n")


def _csv_cell(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))

import numpy as np
import pytest

from oracles import fit_loglog_slope

from tveit.cem import (
    BoundaryOperators,
    CemSolver,
    LayoutError,
    boundary_inner,
    dump_layout,
    e_operator,
    layout_from_mesh,
    lift_to_operator,
    load_resistance_csv,
    operator_norm_pc,
    pattern_basis,
    phi,
    phi_inv,
    project_pc_star,
    project_star,
    q_operator,
    resistance_matrix,
    save_resistance_csv,
    simplified_resistance_matrix,
    solve_cem,
    spectral_norm_zero_sum,
)
from tveit.fem import BoundaryFunction, FeSpace, interpolate
from tveit.mesh import Polygon, build_initial_triangulation, refine_to_level

SQUARE = Polygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def square_space(level):
    return FeSpace(refine_to_level(build_initial_triangulation(SQUARE), level))


def random_zero_mean_nodal(space, rng):
    v = rng.standard_normal(len(space.bnodes))
    f = BoundaryFunction(v, kind="nodal")
    return project_star(f, space)


def pc_star_function(layout, rng):
    """Random element of PC_*: electrode-constant, zero boundary integral."""
    I = rng.standard_normal(layout.M)
    I -= I.sum() / layout.M
    return phi(I, layout)


def test_layout_square_stats():
    space = square_space(1)  # 8 boundary edges
    layout = layout_from_mesh(space, m=1, k=1)
    stats = layout.stats()
    assert stats.M == 4
    assert stats.delta == pytest.approx(0.5)
    assert stats.mu == pytest.approx(1.0)
    assert stats.theta == pytest.approx(2.0)


def test_layout_gap_free():
    space = square_space(1)
    layout = layout_from_mesh(space, m=0, k=1)
    assert layout.stats().theta == pytest.approx(1.0)
    assert all(np.array_equal(a, b) for a, b in
               zip(layout.electrode_edges, layout.extended_edges))


def test_layout_rejects_bad_k():
    space = square_space(1)
    with pytest.raises(LayoutError):
        layout_from_mesh(space, m=1, k=3)
    with pytest.raises(LayoutError):
        layout_from_mesh(space, m=1, k=0)


def test_layout_count_bound_various():
    for level, m, k in [(2, 1, 1), (3, 2, 1), (3, 2, 3), (4, 1, 1)]:
        layout = layout_from_mesh(square_space(level), m=m, k=k)
        stats = layout.stats()  # raises if the geometric bound fails
        assert stats.M <= stats.eta * stats.theta * stats.mu * 4.0 / stats.delta + 1e-9


def test_phi_zero_and_norm():
    space = square_space(1)
    layout = layout_from_mesh(space, m=2, k=1)  # 2 electrodes of measure 1/2
    assert layout.M == 2
    assert np.allclose(layout.measures, 0.5)
    z = phi(np.zeros(2), layout)
    assert np.allclose(z.values, 0.0)
    f = phi(np.array([1.0, -1.0]), layout)
    norm = np.sqrt(boundary_inner(f, f, space))
    assert norm == pytest.approx(2.0, rel=1e-12)


def test_phi_roundtrip():
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    rng = np.random.default_rng(0)
    I = rng.standard_normal(layout.M)
    back = phi_inv(phi(I, layout), layout)
    assert np.max(np.abs(back - I)) < 1e-14


def test_projection_kills_constants():
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    c = BoundaryFunction(np.full(len(space.bnodes), 3.3), kind="nodal")
    p = project_pc_star(c, layout)
    assert np.max(np.abs(p.values)) < 1e-12


def test_projection_identity_on_pc_star():
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    rng = np.random.default_rng(1)
    f = pc_star_function(layout, rng)
    p = project_pc_star(f, layout)
    assert np.max(np.abs(p.values - f.values)) < 1e-12


def test_projection_idempotent():
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    rng = np.random.default_rng(2)
    f = BoundaryFunction(rng.standard_normal(len(space.bnodes)), kind="nodal")
    p1 = project_pc_star(f, layout)
    p2 = project_pc_star(p1, layout)
    assert np.max(np.abs(p2.values - p1.values)) < 1e-12


def test_q_identity_on_pc_star():
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    rng = np.random.default_rng(3)
    f = pc_star_function(layout, rng)
    q = q_operator(f, layout)
    assert np.max(np.abs(q.values - f.values)) < 1e-12


def test_adjointness_ep_q():
    space = square_space(4)
    layout = layout_from_mesh(space, m=1, k=1)
    rng = np.random.default_rng(4)
    for _ in range(20):
        f = random_zero_mean_nodal(space, rng)
        g = random_zero_mean_nodal(space, rng)
        Pf = project_pc_star(f, layout)
        EPf = e_operator(phi_inv(Pf, layout), layout)
        lhs = boundary_inner(EPf, g, space)
        rhs = boundary_inner(f, q_operator(g, layout), space)
        assert abs(lhs - rhs) < 1e-12


def test_q_e_norm_bounds():
    for level, m, k in [(2, 1, 1), (3, 2, 1), (3, 1, 1), (4, 2, 3)]:
        space = square_space(level)
        layout = layout_from_mesh(space, m=m, k=k)
        ops = BoundaryOperators(layout)
        theta = layout.stats().theta
        q_norm = ops.norm_nodal_to_edge(ops.q_matrix(), zero_mean_input=False)
        assert q_norm <= np.sqrt(theta) + 1e-9
        e_norm = ops.norm_pc_to_edge(ops.e_matrix_pc())
        assert e_norm <= np.sqrt(theta) + 1e-9


def test_cem_zero_current():
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    sol = solve_cem(1.0, np.zeros(layout.M), layout)
    assert np.max(np.abs(sol.u)) < 1e-12
    assert np.max(np.abs(sol.U)) < 1e-12


def test_cem_normalization_and_current_recovery():
    space = square_space(3)
    layout = layout_from_mesh(space, m=1, k=1)
    solver = CemSolver(np.ones(space.num_nodes), layout)
    rng = np.random.default_rng(5)
    I = rng.standard_normal(layout.M)
    I -= I.mean()
    sol = solver.solve(I)
    norm_check = layout.measures @ sol.U - layout.z @ I
    assert abs(norm_check) < 1e-10
    I_rec = solver.recovered_currents(sol)
    assert np.max(np.abs(I_rec - I)) < 1e-8


def test_cem_rejects_unbalanced_current():
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    with pytest.raises(LayoutError):
        solve_cem(1.0, np.ones(layout.M), layout)


def test_cem_square_rotation_symmetry():
    # rotating the current pattern by a quarter turn must not change the
    # dissipated power I . U on the symmetric square with sigma = 1
    space = square_space(3)
    layout = layout_from_mesh(space, m=1, k=1)
    solver = CemSolver(1.0, layout)
    rng = np.random.default_rng(6)
    I = rng.standard_normal(layout.M)
    I -= I.mean()
    shift = layout.M // 4
    I_rot = np.roll(I, shift)
    e1 = I @ solver.solve(I).U
    e2 = I_rot @ solver.solve(I_rot).U
    assert abs(e1 - e2) < 1e-10 * max(1.0, abs(e1))


def test_resistance_invariants_and_symmetries():
    space = square_space(3)
    layout = layout_from_mesh(space, m=3, k=2)  # 4 electrodes on the square
    assert layout.M == 4
    R = resistance_matrix(1.0, layout)
    assert R.check_invariants(tol=1e-10)
    mat = R.matrix
    adjacent = [mat[j, (j + 1) % 4] for j in range(4)]
    opposite = [mat[j, (j + 2) % 4] for j in range(4)]
    assert np.max(np.abs(np.diff(adjacent))) < 1e-8
    assert np.max(np.abs(np.diff(opposite))) < 1e-8


def test_reciprocity_equal_measures():
    space = square_space(3)
    layout = layout_from_mesh(space, m=1, k=1)
    R = resistance_matrix(1.0, layout).matrix
    rng = np.random.default_rng(7)
    for _ in range(5):
        I = rng.standard_normal(layout.M)
        I -= I.mean()
        J = rng.standard_normal(layout.M)
        J -= J.mean()
        assert abs(I @ (R @ J) - J @ (R @ I)) < 1e-8


def test_simplified_scaling():
    space = square_space(3)
    layout = layout_from_mesh(space, m=1, k=1)
    c = 2.5
    R1 = simplified_resistance_matrix(np.ones(space.num_nodes), layout).matrix
    Rc = simplified_resistance_matrix(c * np.ones(space.num_nodes), layout).matrix
    assert np.max(np.abs(Rc - R1 / c)) < 1e-10


def test_simplified_weighted_self_adjoint():
    space = square_space(3)
    layout = layout_from_mesh(space, m=2, k=1)
    sigma = 1.0 + 0.5 * space.mesh.vertices[:, 0]
    R = simplified_resistance_matrix(sigma, layout).matrix
    w = 1.0 / layout.measures
    rng = np.random.default_rng(8)
    for _ in range(5):
        I = rng.standard_normal(layout.M)
        I -= I.mean()
        J = rng.standard_normal(layout.M)
        J -= J.mean()
        lhs = np.sum(w * (R @ I) * J)
        rhs = np.sum(w * (R @ J) * I)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def delta_sweep_layouts(space, levels=(2, 3, 4, 5)):
    """Same physical electrode family at shrinking electrode levels,
    realized on one fixed fine boundary (m=1, k=1 per electrode level)."""
    n = space.mesh.level
    out = []
    for le in levels:
        layout = layout_from_mesh(space, m=n - le + 1, k=2 ** (n - le))
        out.append(layout)
    return out


def test_simplified_vs_full_delta_rate():
    space = square_space(5)
    deltas, gaps = [], []
    for layout in delta_sweep_layouts(space):
        R = resistance_matrix(1.0, layout).matrix
        Rhat = simplified_resistance_matrix(np.ones(space.num_nodes), layout).matrix
        deltas.append(layout.stats().delta)
        gaps.append(spectral_norm_zero_sum(Rhat - R))
    slope = fit_loglog_slope(deltas, gaps)
    assert slope >= 0.4, (deltas, gaps, slope)


def test_one_minus_ep_delta_rate():
    space = square_space(5)
    f = interpolate(lambda x, y: np.cos(2 * np.pi * x) + 0.5 * y, FeSpace(space.mesh))
    f_b = project_star(BoundaryFunction(f[space.bnodes], kind="nodal"), space)
    deltas, errs = [], []
    for layout in delta_sweep_layouts(space):
        ops = BoundaryOperators(layout)
        T = ops.one_minus_ep_matrix()
        err = ops.dg_norm(T @ f_b.values)
        deltas.append(layout.stats().delta)
        errs.append(err)
    slope = fit_loglog_slope(deltas, errs)
    assert slope >= 0.4, (deltas, errs, slope)


def test_lift_zero_and_sandwich():
    space = square_space(3)
    layout = layout_from_mesh(space, m=1, k=1)
    zero = lift_to_operator(np.zeros((layout.M, layout.M)), layout)
    assert np.max(np.abs(zero)) == 0.0
    rng = np.random.default_rng(9)
    M = layout.M
    C = np.eye(M) - np.ones((M, M)) / M
    for _ in range(5):
        S = rng.standard_normal((M, M))
        R = C @ (S + S.T) @ C
        R_pc = lift_to_operator(R, layout)
        norm_R = spectral_norm_zero_sum(R)
        norm_pc = operator_norm_pc(R_pc, layout)
        mu = layout.stats().mu
        assert norm_R <= np.sqrt(mu) * norm_pc + 1e-9
        assert norm_pc <= np.sqrt(mu) * norm_R + 1e-9
        # equal measures: the sandwich degenerates to equality
        assert abs(norm_R - norm_pc) < 1e-9 * max(1.0, norm_R)


def test_layout_dump_and_resistance_csv(tmp_path):
    space = square_space(2)
    layout = layout_from_mesh(space, m=1, k=1)
    dump_layout(layout, tmp_path / "layout.txt")
    text = (tmp_path / "layout.txt").read_text().splitlines()
    assert len(text) == layout.M
    assert text[0].count(":") == 3

    R = resistance_matrix(1.0, layout)
    save_resistance_csv(R, tmp_path / "R.csv")
    back = load_resistance_csv(tmp_path / "R.csv")
    assert np.array_equal(back.matrix, R.matrix)


def test_pattern_basis_spans_zero_sum():
    basis = pattern_basis(5)
    assert len(basis) == 4
    stacked = np.array(basis)
    assert np.allclose(stacked.sum(axis=1), 0.0)
    assert np.linalg.matrix_rank(stacked) == 4

import numpy as np
import pytest

from oracles import fit_loglog_slope

from tveit.conductivity import (
    FieldError,
    NodalField,
    Phantom,
    discretize_bv,
    l1_distance,
    l1_distance_raster,
    l1_error,
    mollify,
    project_to_admissible,
    tv_seminorm,
)
from tveit.mesh import Polygon, build_initial_triangulation, refine_to_level

SQUARE = Polygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def square_mesh(level):
    return refine_to_level(build_initial_triangulation(SQUARE), level)


def disk_phantom(background=1.0, value=1.4, lam0=0.5, lam1=1.5):
    # bounds chosen so the extension midpoint equals the background, which
    # keeps the mollification rate tests free of collar effects
    ph = Phantom(SQUARE, background, lam0, lam1)
    ph.add_disk((0.5, 0.5), 0.25, value)
    return ph


def radial_conv_profile(rho, radius, gamma, n_s=400):
    """Oracle: (bump_gamma * indicator_{B_radius})(x) at |x| = rho, 1D quadrature."""
    s = (np.arange(n_s) + 0.5) * (gamma / n_s)
    w = np.exp(-1.0 / (1.0 - (s / gamma) ** 2))
    norm = np.sum(w * s) * 2 * np.pi * (gamma / n_s)
    out = np.zeros_like(rho)
    for i, r0 in enumerate(np.atleast_1d(rho)):
        if r0 < 1e-12:
            ang = np.where(s <= radius, 2 * np.pi, 0.0)
        else:
            t = (s**2 + r0**2 - radius**2) / (2 * s * r0)
            ang = 2 * np.arccos(np.clip(t, -1.0, 1.0))
        out[i] = np.sum(w * s * ang) * (gamma / n_s) / norm
    return out


def oracle_disk_l1(radius, gamma, jump):
    """Exact L1 smearing of a disk step under radial mollification."""
    rho = np.linspace(max(radius - gamma, 0), radius + gamma, 600)
    K = radial_conv_profile(rho, radius, gamma)
    chi = (rho <= radius).astype(float)
    return jump * np.trapezoid(np.abs(chi - K) * 2 * np.pi * rho, rho)


def test_tv_constant_zero():
    mesh = square_mesh(2)
    assert tv_seminorm(NodalField.constant(mesh, 2.0, 0.5, 3.0)) == 0.0


def test_tv_linear_is_area():
    for level in (1, 3):
        mesh = square_mesh(level)
        f = NodalField(mesh, mesh.vertices[:, 0] + 0.5, 0.1, 2.0)
        assert tv_seminorm(f) == pytest.approx(1.0, rel=1e-12)


def test_tv_homogeneity():
    mesh = square_mesh(2)
    rng = np.random.default_rng(1)
    vals = rng.uniform(1.0, 2.0, mesh.num_vertices)
    f = NodalField(mesh, vals, 0.5, 3.0)
    fc = NodalField(mesh, -2.5 * vals, -10.0 if False else 0.1, 10.0) if False else None
    base = tv_seminorm(f)
    scaled = tv_seminorm(NodalField(mesh, 2.5 * vals, 0.5, 10.0))
    assert scaled == pytest.approx(2.5 * base, rel=1e-12)


def test_tv_tensor_diagonal():
    mesh = square_mesh(2)
    n = mesh.num_vertices
    x = mesh.vertices[:, 0]
    tensor = np.zeros((n, 2, 2))
    tensor[:, 0, 0] = 1.0 + x
    tensor[:, 1, 1] = 1.0 + x
    f = NodalField(mesh, tensor, 0.5, 3.0, kind="tensor")
    # entrywise TV matrix is diag(1, 1); spectral norm 1
    assert tv_seminorm(f) == pytest.approx(1.0, rel=1e-12)


def test_project_clamp_and_idempotence():
    mesh = square_mesh(1)
    vals = np.full(mesh.num_vertices, 10.0)
    f = NodalField(mesh, vals, 1.0, 5.0)
    p = project_to_admissible(f)
    assert np.allclose(p.values, 5.0)
    p2 = project_to_admissible(p)
    assert np.array_equal(p2.values, p.values)
    in_range = NodalField(mesh, np.full(mesh.num_vertices, 2.0), 1.0, 5.0)
    assert np.array_equal(project_to_admissible(in_range).values, in_range.values)


def test_project_tensor_eigen_clamp():
    mesh = square_mesh(1)
    n = mesh.num_vertices
    tensor = np.tile(np.array([[6.0, 1.0], [1.0, 4.0]]), (n, 1, 1))
    f = NodalField(mesh, tensor, 1.0, 5.0, kind="tensor")
    p = project_to_admissible(f)
    lo, hi = p.nodal_eigen_range()
    assert np.all(hi <= 5.0 + 1e-12)
    assert np.all(lo >= 1.0 - 1e-12)
    assert p.is_admissible()
    # eigenvectors preserved: off-diagonal structure intact
    assert np.allclose(p.values[:, 0, 1], p.values[:, 1, 0])


def test_l1_distance_basics():
    mesh = square_mesh(2)
    a = NodalField.constant(mesh, 1.3, 0.5, 3.0)
    b = NodalField.constant(mesh, 2.1, 0.5, 3.0)
    assert l1_distance(a, a) == 0.0
    assert l1_distance(a, b) == pytest.approx(0.8, rel=1e-12)


def test_l1_distance_tensor_oracle():
    mesh = square_mesh(1)
    n = mesh.num_vertices
    t1 = np.tile(np.diag([1.0, 2.0]), (n, 1, 1))
    t2 = np.tile(np.diag([2.0, 1.0]), (n, 1, 1))
    a = NodalField(mesh, t1, 0.5, 3.0, kind="tensor")
    b = NodalField(mesh, t2, 0.5, 3.0, kind="tensor")
    # pointwise operator norm of diag(-1, 1) is 1 everywhere
    assert l1_distance(a, b) == pytest.approx(1.0, rel=1e-12)


def test_l1_distance_metric_spot_checks():
    mesh = square_mesh(2)
    rng = np.random.default_rng(3)
    for _ in range(5):
        fields = [NodalField(mesh, rng.uniform(0.5, 3.0, mesh.num_vertices), 0.5, 3.0)
                  for _ in range(3)]
        a, b, c = fields
        assert l1_distance(a, b) == pytest.approx(l1_distance(b, a), abs=1e-10)
        assert l1_distance(a, c) <= l1_distance(a, b) + l1_distance(b, c) + 1e-10


def test_mollify_constant():
    mesh = square_mesh(2)
    f = NodalField.constant(mesh, 1.7, 0.5, 2.9)
    # midpoint (lam0+lam1)/2 = 1.7 so the extension is the same constant
    raster = mollify(f, 0.05)
    assert np.allclose(raster.values, 1.7, atol=1e-12)


def test_mollify_preserves_bounds():
    ph = Phantom(SQUARE, 1.0, 0.9, 2.1).add_disk((0.5, 0.5), 0.3, 2.0)
    raster = mollify(ph, 0.06)
    assert raster.values.min() >= 0.9 - 1e-9
    assert raster.values.max() <= 2.1 + 1e-9


def test_mollify_rejects_coarse_raster():
    ph = disk_phantom()
    with pytest.raises(FieldError):
        mollify(ph, 0.05, cell=0.05 / 3.0)


def test_mollify_l1_rate_with_radial_oracle():
    ph = disk_phantom()
    gammas = [0.08, 0.04, 0.02, 0.01]
    dists = []
    for g in gammas:
        raster = mollify(ph, g)
        d = l1_distance_raster(ph, raster, SQUARE, subsample=2)
        d_oracle = oracle_disk_l1(0.25, g, 0.4)
        assert d == pytest.approx(d_oracle, rel=0.10)
        dists.append(d)
    slope = fit_loglog_slope(gammas, dists)
    assert 0.8 <= slope <= 1.2


def test_discretize_constant_identity():
    ph = Phantom(SQUARE, 1.2, 0.9, 1.5)
    for level in (2, 3):
        mesh = square_mesh(level)
        f = discretize_bv(ph, mesh, alpha=0.45)
        assert np.allclose(f.values, 1.2, atol=1e-12)


def test_discretize_alpha_validation():
    ph = disk_phantom()
    with pytest.raises(FieldError):
        discretize_bv(ph, square_mesh(2), alpha=0.6)


def test_discretize_bv_sweep():
    ph = disk_phantom()
    exact_tv = ph.exact_tv()
    l1s, tv_gaps, tvs = [], [], []
    for level in (4, 5, 6, 7):
        mesh = square_mesh(level)
        f = discretize_bv(ph, mesh, alpha=0.45)
        assert f.is_admissible()
        l1s.append(l1_error(f, ph))
        tvs.append(tv_seminorm(f))
        tv_gaps.append(abs(tvs[-1] - exact_tv))
    assert all(a > b for a, b in zip(l1s, l1s[1:])), l1s
    assert all(a >= b for a, b in zip(tv_gaps, tv_gaps[1:])), tv_gaps
    assert tv_gaps[-1] <= 0.15 * exact_tv
    # uniform TV budget across the sweep
    assert max(tvs) <= 2.0 * exact_tv

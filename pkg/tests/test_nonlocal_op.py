import numpy as np
import pytest
from scipy import integrate
from scipy.special import sici

from jumpflow import fixtures as fx
from jumpflow import fourier as ft
from jumpflow import levy_model as lm
from jumpflow import nonlocal_op as no
from jumpflow.errors import GridTooCoarse, VariableSigma


@pytest.fixture(scope="module")
def unit_spec():
    return lm.LevyMeasureSpec.isotropic(1, 1.0, 0.3, 0.5, c=1.0, R=1.0, check_a1=False)


def psi_oracle(xi):
    val, _ = integrate.quad(lambda s: (1 - np.cos(xi * s)) / s**2, 0, 1, limit=400, epsabs=0, epsrel=1e-13)
    return 2 * val


def test_discrete_quadrature_is_atoms():
    spec = fx.discrete_2d()
    q = no.build_quadrature(spec)
    z, w = spec.atom_array()
    assert np.array_equal(q.nodes, z) and np.array_equal(q.weights, w)


@pytest.mark.parametrize("name", ["iso1d", "cyl2d"])
def test_second_moment(name):
    spec = fx.shipped_specs()[name]
    q = no.build_quadrature(spec)
    assert no.second_moment_error(q, spec) <= 1e-6
    assert q.is_symmetric()


def test_symbol_matches_quadrature_oracle(unit_spec):
    q = no.build_quadrature(unit_spec)
    assert no.symbol_psi(q, 1.0, [4.0]) == pytest.approx(psi_oracle(4.0), rel=1e-6)


def psi_closed(xi):
    # integration by parts: 2 int_0^1 (1 - cos xi s) s^-2 ds = 2 (xi Si(xi) - 1 + cos xi)
    return 2 * (xi * sici(xi)[0] - 1 + np.cos(xi))


def test_symbol_error_decreases_with_levels(unit_spec):
    xis = np.array([0.5, 4.0, 30.0, 50.0])
    exact = psi_closed(xis)
    errs = []
    for lev in (4, 8, 16):
        q = no.build_quadrature(unit_spec, levels=lev)
        errs.append(np.abs(no.symbol_psi(q, 1.0, xis[:, None]) / exact - 1).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-6


def test_symbol_resolves_grid_frequencies(unit_spec):
    q = no.build_quadrature(unit_spec)
    xis = np.linspace(0.1, 100, 50)
    assert np.abs(no.symbol_psi(q, 1.0, xis[:, None]) / psi_closed(xis) - 1).max() <= 1e-9


def test_symbol_zero_and_even(quad1):
    assert no.symbol_psi(quad1, 1.0, [0.0]) == 0.0
    xi = np.linspace(-40, 40, 81)[:, None]
    assert np.array_equal(no.symbol_psi(quad1, 1.0, xi), no.symbol_psi(quad1, 1.0, -xi))


def test_symbol_variable_sigma_rejected(quad1, grid1):
    sig = no.SigmaField.from_function(grid1, lambda x: (1 + 0.1 * np.sin(x))[None, None])
    with pytest.raises(VariableSigma):
        no.symbol_psi(quad1, sig, [1.0])


def test_apply_L_constant_is_zero(quad1, grid1):
    f = ft.GridField.constant(grid1, 3.0)
    assert np.abs(no.apply_L(f, np.eye(1), quad1).values).max() <= 1e-12


@pytest.mark.parametrize("d", [1, 2])
def test_apply_L_plane_wave(d):
    spec = fx.work_1d() if d == 1 else fx.cyl_2d()
    q = no.build_quadrature(spec)
    grid = fx.grid_1d() if d == 1 else fx.grid_2d()
    k = [5] + [3] * (d - 1)
    xi0 = np.pi * np.array(k) / grid.L
    f = ft.GridField(grid, np.cos(sum(x * c for x, c in zip(xi0, grid.coords))))
    Lf = no.apply_L(f, np.eye(d), q)
    psi = no.symbol_psi(q, np.eye(d), xi0)
    assert np.abs(Lf.values + psi * f.values).max() <= 1e-8 * psi


def test_apply_L_symmetric_bilinear(grid1):
    spec = fx.work_1d()
    q = no.build_quadrature(spec, levels=10)
    f = ft.random_field(grid1, 1, decay=2.0)
    g = ft.random_field(grid1, 2, decay=2.0)
    lhs = -np.sum(g.values * no.apply_L(f, np.eye(1), q).values) * grid1.cell
    x = grid1.points
    rhs = 0.0
    for z, w in zip(q.nodes, q.weights):
        s = np.broadcast_to(z, x.shape)
        rhs += 0.5 * w * np.sum(ft.eval_shift_diff(f, x, s) * ft.eval_shift_diff(g, x, s)) * grid1.cell
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_apply_L_variable_sigma_constant_values(grid1):
    q = no.build_quadrature(fx.work_1d(), levels=10)
    f = ft.random_field(grid1, 3, decay=2.0)
    sig = no.SigmaField.from_function(grid1, lambda x: np.full((1, 1) + x.shape, 1.3))
    a = no.apply_L(f, sig, q).values
    b = no.apply_L(f, np.array([[1.3]]), q).values
    assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()


def test_apply_L_matches_multiplier(quad1, grid1):
    f = ft.random_field(grid1, 4)
    a = no.apply_L(f, np.eye(1), quad1).values
    b = no.apply_L_multiplier(f, np.eye(1), quad1).values
    assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()


def test_grid_too_coarse(quad1):
    small = ft.PeriodicGrid(1, 1.5, 64)
    with pytest.raises(GridTooCoarse):
        no.apply_L(ft.GridField(small, np.zeros(64)), np.eye(1), quad1)


def test_bernstein_report(quad1, spec1):
    grid = fx.grid_1d()
    rep = no.bernstein_report(quad1, np.eye(1), 2.0, [3, 4], 10, 1, grid, spec1.alpha)
    assert rep["plancherel_rel_gap"] <= 1e-8
    assert min(rep["min_ratio"].values()) > 0
    assert rep["median_spread"] <= 4


def test_symbol_lower_constant_positive(quad1, spec1):
    assert no.symbol_lower_constant(quad1, np.eye(1), fx.grid_1d(), spec1.alpha, spec1.rho) > 0


@pytest.fixture(scope="module")
def cgrid():
    return ft.PeriodicGrid(1, np.pi, 1024)


def test_commutator_constant_b(cgrid):
    u = ft.GridField(cgrid, np.cos(cgrid.coords[0]))
    b = ft.GridField.constant(cgrid, 0.8)
    for j in range(cgrid.J + 1):
        assert no.commutator(b, u, j).sup() <= 1e-12


def test_commutator_slope_and_linearity(cgrid):
    x = cgrid.coords[0]
    u = ft.GridField(cgrid, np.cos(x) + 0.5 * np.sin(2 * x))
    b = ft.holder_sample(0.7, cgrid, 11)
    js = list(range(3, cgrid.J - 1))
    rep = no.commutator_report(b, u, 2.0, js, 0.7)
    assert -0.9 <= rep["slope"] <= -0.5
    rep2 = no.commutator_report(b, 2 * u, 2.0, js, 0.7)
    assert np.allclose(rep2["norms"], 2 * np.array(rep["norms"]), rtol=1e-12)

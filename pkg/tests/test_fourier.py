import numpy as np
import pytest

from jumpflow import fourier as ft
from jumpflow.errors import LevelOutOfRange, ParameterOutOfRange


@pytest.fixture(scope="module")
def gpi():
    # L = pi puts integer wave numbers at xi = k, so |xi| = 2^j is on the lattice
    return ft.PeriodicGrid(1, np.pi, 256)


@pytest.fixture(scope="module")
def g2():
    return ft.PeriodicGrid(2, np.pi, 64)


def wave(grid, k):
    x = grid.coords
    return ft.GridField(grid, np.cos(sum(kk * xx for kk, xx in zip(k, x))))


def test_grid_validation():
    with pytest.raises(ParameterOutOfRange):
        ft.PeriodicGrid(1, 8.0, 100)
    with pytest.raises(ParameterOutOfRange):
        ft.PeriodicGrid(3, 8.0, 16)


@pytest.mark.parametrize("j", [0, 2, 4, 5])
def test_block_is_identity_at_ring_centre(gpi, j):
    f = wave(gpi, [2**j])
    assert np.abs(ft.dyadic_block(f, j).values - f.values).max() <= 1e-13
    for jj in ft.levels(gpi):
        if abs(jj - j) >= 2:
            assert np.abs(ft.dyadic_block(f, jj).values).max() <= 1e-13


def test_constant_field_blocks(g2):
    f = ft.GridField.constant(g2, 2.5)
    assert np.allclose(ft.dyadic_block(f, -1).values, 2.5, atol=1e-14)
    for j in range(0, g2.J + 1):
        assert np.abs(ft.dyadic_block(f, j).values).max() <= 1e-14
    assert np.allclose(ft.lowpass(f, 3).values, 2.5, atol=1e-14)
    assert np.abs(ft.lowpass(f, -1).values).max() == 0


def test_level_out_of_range(gpi):
    f = wave(gpi, [1])
    with pytest.raises(LevelOutOfRange):
        ft.dyadic_block(f, gpi.J + 1)
    with pytest.raises(LevelOutOfRange):
        ft.dyadic_block(f, -2)


@pytest.mark.parametrize("d", [1, 2])
def test_partition_identity(d):
    grid = ft.PeriodicGrid(d, 8.0, 256 if d == 1 else 64)
    r = grid.abs_xi
    for k in range(grid.J + 1):
        acc = ft.chi(2 * r) + sum(ft.ring(r / 2.0**j) for j in range(k + 1))
        assert np.abs(acc - ft.chi(r / 2.0**k)).max() <= 1e-12


def test_ring_support():
    r = np.linspace(0, 3, 30001)
    phi = ft.ring(r)
    assert phi.min() >= 0
    assert np.all(phi[(r < 0.5) | (r > 1.5)] == 0)
    assert ft.chi(1.0) == 1.0 and ft.chi(1.5) == 0.0


def test_reconstruction_and_lowpass_identity(g2):
    f = ft.random_field(g2, 4, band=2.0**g2.J)
    total = sum(ft.dyadic_block(f, j).values for j in ft.levels(g2))
    assert np.abs(total - f.values).max() <= 1e-12
    j = 2
    rest = sum(ft.dyadic_block(f, k).values for k in range(j, g2.J + 1))
    assert np.abs(ft.lowpass(f, j).values + rest - f.values).max() <= 1e-12


def test_almost_orthogonality():
    grid = ft.PeriodicGrid(1, 8.0, 256)
    f = ft.random_field(grid, 9)
    for j in ft.levels(grid):
        for jp in ft.levels(grid):
            if abs(j - jp) >= 2:
                assert ft.lp_norm(ft.dyadic_block(ft.dyadic_block(f, j), jp), 2) <= 1e-12 * ft.lp_norm(f, 2)


def test_zero_field_norms(g2):
    z = ft.GridField(g2, np.zeros(g2.shape))
    assert ft.norm(z, "Lp", 2) == 0
    assert ft.norm(z, "Besov", 0.5, 2, 2) == 0
    assert ft.norm(z, "Holder", 0.5) == 0


def test_sine_norms():
    L, k = 8.0, 3
    grid = ft.PeriodicGrid(1, L, 256)
    f = ft.GridField(grid, np.sin(k * np.pi * grid.coords[0] / L))
    assert ft.lp_norm(f, np.inf) == pytest.approx(1.0, abs=1e-3)
    assert ft.lp_norm(f, 2) == pytest.approx(np.sqrt(2 * L) / np.sqrt(2), rel=1e-12)


def test_besov_single_ring(gpi):
    # modes with |xi| in [3/4, 1] * 2^4 sit where ring 4 is flat
    rng = np.random.default_rng(5)
    x = gpi.coords[0]
    f = ft.GridField(gpi, sum(rng.normal() * np.cos(k * x + rng.uniform(0, 6)) for k in range(12, 17)))
    s = 0.7
    assert ft.besov_norm(f, s, np.inf, np.inf) == pytest.approx(2**(4 * s) * ft.lp_norm(f, np.inf), rel=0.05)


def test_holder_sample_contract():
    grid = ft.PeriodicGrid(1, 8.0, 256)
    z = ft.holder_sample(0.5, grid, 1, amplitude=0.0)
    assert np.all(z.values == 0)
    for beta in (0.3, 0.6, 0.8):
        f = ft.holder_sample(beta, grid, 2, amplitude=1.5)
        js = list(range(grid.J + 1))
        sups = [ft.dyadic_block(f, j).sup() for j in js]
        assert np.polyfit(js, np.log2(sups), 1)[0] == pytest.approx(-beta, abs=0.1)
        assert 1.5 / 3 <= ft.besov_norm(f, beta, np.inf, np.inf) <= 1.5 * 3
        assert np.isfinite(ft.holder_norm(f, beta))
    a = ft.holder_sample(0.5, grid, 7)
    b = ft.holder_sample(0.5, grid, 7)
    assert np.array_equal(a.values, b.values)


def test_gradient_vs_finite_differences():
    errs = []
    for N in (64, 128, 256):
        grid = ft.PeriodicGrid(1, 8.0, N)
        f = ft.GridField(grid, np.exp(np.sin(np.pi * grid.coords[0] / 8)))
        errs.append(np.abs(ft.gradient(f).values - ft.fd_gradient(f).values).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_bernstein_gradient_bound():
    grid = ft.PeriodicGrid(1, 8.0, 256)
    ratios = {}
    for p in (2.0, 4.0):
        for j in range(1, grid.J):
            vals = []
            for s in range(50):
                fj = ft.dyadic_block(ft.random_field(grid, 100 + s), j)
                vals.append(ft.lp_norm(ft.gradient(fj), p) / (2.0**j * ft.lp_norm(fj, p)))
            ratios[(p, j)] = max(vals)
    r = np.array(list(ratios.values()))
    assert r.max() / r.min() <= 4


def test_embedding_localized_sobolev():
    grid = ft.PeriodicGrid(1, 8.0, 64)
    ratios = []
    for seed in range(3):
        f = ft.holder_sample(0.7, grid, seed)
        ratios.append(ft.localized_sobolev_norm(f, 0.4, 2.0) / ft.holder_norm(f, 0.7))
    assert np.all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) <= 3


def test_slobodeckij_range_check(gpi):
    with pytest.raises(ParameterOutOfRange):
        ft.slobodeckij_seminorm(wave(gpi, [1]), 1.2, 2)


def test_eval_points_exact_on_trig(g2):
    f = wave(g2, [3, -2])
    pts = np.random.default_rng(0).uniform(-np.pi, np.pi, (50, 2))
    assert np.abs(ft.eval_points(f, pts) - np.cos(3 * pts[:, 0] - 2 * pts[:, 1])).max() <= 1e-12


def test_shift_diff_small_displacement(gpi):
    f = wave(gpi, [7])
    x = np.full((4, 1), 0.3)
    s = np.array([[1e-9], [1e-6], [1e-3], [0.5]])
    exact = -2 * np.sin(7 * x + 3.5 * s) * np.sin(3.5 * s)
    got = ft.eval_shift_diff(f, x, s)
    assert np.all(np.abs(got - exact[:, 0]) <= 1e-12 * np.abs(exact[:, 0]))


def test_upsample_preserves_values():
    grid = ft.PeriodicGrid(1, 8.0, 64)
    f = ft.random_field(grid, 3)
    up = ft.upsample(f, 4)
    assert np.abs(up.values[::4] - f.values).max() <= 1e-12


def test_field_csv_round_trip(g2):
    f = ft.holder_sample(0.5, g2, 1, ncomp=2)
    back = ft.field_from_csv(ft.field_to_csv(f))
    assert back.grid == g2
    assert np.array_equal(back.values, f.values)


def test_bessel_potential_plane_wave(gpi):
    f = wave(gpi, [5])
    assert ft.bessel_potential_norm(f, 0.0, 3) == pytest.approx(ft.lp_norm(f, 3), rel=1e-12)
    assert ft.bessel_potential_norm(f, 0.6, 2) == pytest.approx(26**0.3 * ft.lp_norm(f, 2), rel=1e-12)

import numpy as np
import pytest

from jumpflow import fixtures as fx
from jumpflow import levy_sampler as ls
from jumpflow import sde_engine as se
from jumpflow import zvonkin as zv
from jumpflow.errors import JumpOutOfSupport, PicardDivergence, TimeOutOfRange

X0 = np.array([0.3])


@pytest.fixture(scope="module")
def paths(spec1):
    return [ls.sample_jump_path(spec1, 1.0, 0.02, ls.derive_seed(20240611, k)) for k in range(3)]


@pytest.fixture(scope="module")
def const_transform(grid1, quad1):
    return zv.build_transform(fx.drift("constant", grid1), np.eye(1), quad1)


def test_mesh_contains_jumps(paths):
    p = paths[0]
    mesh = se.build_mesh(p, 1.0, 0.01, extra=(0.123,))
    assert np.all(np.isin(p.times, mesh.t))
    assert 0.123 in mesh.t
    assert mesh.jump.sum() == p.n_jumps
    assert mesh.t[mesh.uniform_index[-1]] == 1.0


def test_zero_drift_exact(zero_transform, paths):
    p = paths[0]
    sol = se.picard_solve(se.SdeProblem(zero_transform, p, X0, 1.0, 1e-2))
    Z = ls.evaluate_Z(p, sol.t)
    assert np.abs(sol.X[:, 0] - (X0 + Z)).max() <= 1e-12
    eu = se.euler_solve(None, np.eye(1), p, X0, 1e-2)
    assert np.abs(eu.X[:, 0] - (X0 + Z)).max() <= 1e-12


def test_constant_drift_exact(const_transform, paths):
    p = paths[1]
    sol = se.picard_solve(se.SdeProblem(const_transform, p, X0, 1.0, 1e-2))
    exact = X0 + 0.7 * sol.t[:, None] + ls.evaluate_Z(p, sol.t)
    assert np.abs(sol.X[:, 0] - exact).max() <= 1e-11


def test_holder_picard_contracts_and_matches_euler(transform1, holder_b, paths):
    p = paths[0]
    prob = se.SdeProblem(transform1, p, X0, 1.0, 1e-3)
    sol = se.picard_solve(prob)
    ratios = se.contraction_ratios(sol.gaps)
    assert ratios and max(ratios.values()) <= 0.6
    fine = se.picard_solve(prob.with_path(p, dt=1e-3 / 8, T0=sol.T0))
    eu = se.euler_solve(holder_b, np.eye(1), p, X0, 1e-3 / 8)
    assert se.sup_distance(fine, eu) <= 1e-3
    assert np.abs(transform1.phi(fine.X[1:, 0], "spline") - fine.Y[1:, 0]).max() <= 1e-10


def test_euler_refinement_contracts(holder_b, paths):
    p = paths[2]
    sols = [se.euler_solve(holder_b, np.eye(1), p, X0, 1e-2 / 2**h) for h in range(4)]
    base_t = sols[0].t
    on = [s.X[np.searchsorted(s.t, base_t)] for s in sols]
    diffs = [np.abs(on[h + 1] - on[h]).max() for h in range(3)]
    assert diffs[0] > diffs[1] > diffs[2]


def test_flow_identity_for_zero_drift(zero_transform, paths):
    prob = se.SdeProblem(zero_transform, paths[0], X0, 1.0, 1e-2)
    t, J, _ = se.flow_jacobian(prob, X0)
    assert np.abs(J - 1.0).max() <= 1e-9


def test_flow_jacobian_start_and_sign(transform1, paths):
    prob = se.SdeProblem(transform1, paths[0], X0, 1.0, 1e-2)
    t, J, _ = se.flow_jacobian(prob, X0)
    assert np.array_equal(J[0], np.eye(1))
    assert np.all(np.linalg.det(J) > 0)


def test_semigroup(zero_transform, transform1, paths):
    prob0 = se.SdeProblem(zero_transform, paths[0], X0, 1.0, 1e-2)
    assert se.semigroup_check(prob0, 40) <= 1e-12
    prob = se.SdeProblem(transform1, paths[0], X0, 1.0, 1e-2)
    assert se.semigroup_check(prob, 40) <= max(1e-6, 10 * transform1.spline_discrepancy)


def test_injectivity(transform1, paths):
    prob = se.SdeProblem(transform1, paths[1], X0, 1.0, 1e-2)
    assert se.injectivity_gap(prob, [0.3], [0.31]) > 0


def test_malliavin_zero_drift(zero_transform, paths):
    prob = se.SdeProblem(zero_transform, paths[0], X0, 1.0, 1e-2)
    r, z = 0.5, np.array([0.4])
    t, D, _ = se.malliavin_recursive(prob, r, z)
    expected = np.where(t >= r, 0.4, 0.0)
    assert np.abs(D[0, :, 0, 0] - expected).max() <= 1e-14
    t2, Dins, _ = se.malliavin_insertion(prob, r, z)
    assert np.abs(Dins[:, 0, 0] - expected).max() <= 1e-12


def test_malliavin_routes_agree(transform1, paths):
    prob = se.SdeProblem(transform1, paths[0], X0, 0.5, 1e-2)
    z = np.array([0.35])
    t, Drec, _ = se.malliavin_recursive(prob, 0.2, z)
    _, Dins, _ = se.malliavin_insertion(prob, 0.2, z)
    assert np.abs(Drec[0] - Dins).max() <= 1e-4 * (1 + 0.35)
    assert np.all(Drec[0][t < 0.2] == 0)


def test_malliavin_argument_checks(zero_transform, paths):
    prob = se.SdeProblem(zero_transform, paths[0], X0, 1.0, 1e-2)
    with pytest.raises(TimeOutOfRange):
        se.malliavin_recursive(prob, 1.5, [0.4])
    with pytest.raises(JumpOutOfSupport):
        se.malliavin_recursive(prob, 0.5, [0.001])


def test_derivative_report_zero_drift(zero_transform, quad1, paths):
    prob = se.SdeProblem(zero_transform, paths[0], X0, 0.5, 1e-2)
    keep = np.abs(quad1.nodes[:, 0]) > 0.02
    nodes, w = quad1.nodes[keep][::40], quad1.weights[keep][::40]
    rep = se.derivative_bound_report(prob, paths[:2], [0.1, 0.3], nodes, w)
    target = np.sum(w * nodes[:, 0] ** 2)
    for row in rep["rows"]:
        assert np.allclose(row["f"], target, rtol=1e-12)
    assert rep["bounded_in_n"] and rep["uniform_in_r"]


class _Growing:
    """Coefficients of y' = 50 y: Picard on one long segment blows up before it settles."""

    def invert(self, y, guess=None):
        return np.array(y, dtype=float)

    def atilde_x(self, x):
        return 50.0 * x

    def g_x(self, x, z):
        return np.broadcast_to(z, x.shape).copy()


def test_picard_divergence(zero_transform, spec1):
    p = ls.empty_path(1.0, 1)
    prob = se.SdeProblem(zero_transform, p, [1.0], 1.0, 1e-2, T0=1.0, coeffs=_Growing())
    with pytest.raises(PicardDivergence):
        se.picard_solve(prob)


def test_solution_csv(zero_transform, paths):
    sol = se.picard_solve(se.SdeProblem(zero_transform, paths[0], X0, 1.0, 1e-1))
    text = sol.to_csv()
    assert paths[0].digest() in text
    assert text.splitlines()[2] == "t,Y_1,X_1"

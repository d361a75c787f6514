import numpy as np
import pytest
from scipy import integrate

from jumpflow import fixtures as fx
from jumpflow import levy_model as lm
from jumpflow.errors import CertificationError, ExponentOutOfRange, InvalidCutoff, InvalidRadius


def iso(alpha, c=1.0, d=1):
    return lm.LevyMeasureSpec.isotropic(d, alpha, 0.3, 0.5, c=c, R=1.0, check_a1=False)


def pm03():
    return lm.LevyMeasureSpec.discrete([[0.3], [-0.3]], [2.0, 2.0], 1.0, 0.3, 0.5, R=1.0, check_a1=False)


def test_small_ball_directional_matches_direct_integral():
    spec = iso(1.0)
    # int_{-r}^{r} z^2 |z|^{-2} dz, evaluated independently
    oracle, _ = integrate.quad(lambda z: z**2 * abs(z) ** -2.0, -0.5, 0.5, points=[0.0])
    assert lm.small_ball_directional(spec, 0.5, [1.0]) == pytest.approx(oracle, rel=1e-12)
    assert oracle == pytest.approx(1.0)


def test_small_ball_directional_discrete_outside():
    spec = lm.LevyMeasureSpec.discrete([[0.8, 0], [-0.8, 0]], [1.0, 1.0], 1.0, 0.3, 0.5, R=1.0,
                                       check_a1=False)
    assert lm.small_ball_directional(spec, 0.5, [1.0, 0.0]) == 0.0


def test_small_ball_shrinks_monotonically():
    spec = fx.cyl_2d()
    vals = [lm.small_ball_directional(spec, r, [0.6, 0.8]) for r in np.geomspace(0.5, 1e-8, 30)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-4


def test_invalid_radius():
    with pytest.raises(InvalidRadius):
        lm.small_ball_directional(iso(1.0), 0.0, [1.0])
    with pytest.raises(InvalidRadius):
        lm.small_ball_second_moment(iso(1.0), 1.5)


def test_moment_integral_examples():
    oracle, _ = integrate.quad(lambda z: abs(z) * abs(z) ** -1.5, -0.25, 0.25, points=[0.0])
    assert lm.moment_integral(iso(0.5), 0.25, 1.0) == pytest.approx(oracle, rel=1e-8)
    assert oracle == pytest.approx(2.0, rel=1e-8)
    assert lm.moment_integral(pm03(), 0.5, 2.0) == pytest.approx(0.36, rel=1e-14)
    assert lm.moment_integral(iso(1.2), 1.0, 0.5, "annulus_to_one") == 0.0


def test_moment_integral_exponent_ordering():
    with pytest.raises(ExponentOutOfRange):
        lm.moment_integral(iso(1.0), 0.5, 0.9)
    with pytest.raises(ExponentOutOfRange):
        lm.moment_integral(iso(1.0), 0.5, 1.1, "annulus_to_one")


def test_mass_above():
    assert lm.mass_above(iso(1.0), 0.5) == pytest.approx(2.0, rel=1e-14)
    assert lm.mass_above(pm03(), 0.1) == 4.0
    assert lm.mass_above(iso(1.0), 1 - 1e-12) < 1e-10
    with pytest.raises(InvalidCutoff):
        lm.mass_above(iso(1.0), 1.0)


@pytest.mark.parametrize("name", ["iso1d", "cyl2d", "disc2d"])
def test_shipped_specs_certify(name):
    spec = fx.shipped_specs()[name]
    rep = lm.certify(spec)
    assert rep["pass"]
    assert rep["n_radii"] == 32
    assert lm.moment_crosscheck(spec) <= 1e-8


def test_one_axis_discrete_rejected():
    with pytest.raises(CertificationError):
        lm.LevyMeasureSpec.discrete([[0.1, 0], [-0.1, 0]], [5.0, 5.0], 1.0, 0.02, 0.5, R=1.0)


def test_asymmetric_discrete_rejected():
    with pytest.raises(Exception):
        lm.LevyMeasureSpec.discrete([[0.1], [-0.2]], [1.0, 1.0], 1.0, 0.3, 0.5, check_a1=False)


def test_direction_symmetry():
    spec = fx.discrete_2d()
    th = np.array([0.6, 0.8])
    assert lm.small_ball_directional(spec, 0.1, th) == lm.small_ball_directional(spec, 0.1, -th)


def test_scaling_exponent():
    spec = fx.iso_1d()
    assert lm.scaling_exponent(spec, 1.5) == pytest.approx(1.5 - 0.7, abs=1e-8)


def test_dict_round_trip():
    for spec in fx.shipped_specs().values():
        assert lm.LevyMeasureSpec.from_dict(spec.to_dict()) == spec

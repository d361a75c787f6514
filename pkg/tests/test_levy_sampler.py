import numpy as np
import pytest

from jumpflow import fixtures as fx
from jumpflow import levy_model as lm
from jumpflow import levy_sampler as ls
from jumpflow.errors import DuplicateTimestamp, InvalidCutoff, JumpOutOfSupport, TimeOutOfRange


@pytest.fixture(scope="module")
def unit_spec():
    return lm.LevyMeasureSpec.isotropic(1, 1.0, 0.3, 0.5, c=1.0, R=1.0, check_a1=False)


@pytest.fixture(scope="module")
def batch(unit_spec):
    return [ls.sample_jump_path(unit_spec, 10.0, 0.5, ls.derive_seed(7, k)) for k in range(10_000)]


def test_mean_jump_count(batch):
    counts = np.array([p.n_jumps for p in batch])
    assert abs(counts.mean() - 20.0) <= 3 * np.sqrt(20) / 100


def test_terminal_value_centered(batch):
    ZT = np.array([ls.evaluate_Z(p, 10.0)[0] for p in batch])
    assert abs(ZT.mean()) <= 4 * ZT.std() / np.sqrt(ZT.size)


def test_quadratic_variation_mean(batch, unit_spec):
    qv = np.array([np.sum(p.sizes**2) for p in batch])
    expected = 10.0 * (lm.small_ball_second_moment(unit_spec, 1.0) - lm.small_ball_second_moment(unit_spec, 0.5))
    assert abs(qv.mean() - expected) <= 4 * qv.std() / np.sqrt(qv.size)


def test_jump_sizes_in_support(batch):
    s = np.concatenate([np.abs(p.sizes[:, 0]) for p in batch])
    assert s.min() > 0.5 and s.max() <= 1.0


def test_empty_when_no_mass():
    spec = lm.LevyMeasureSpec.discrete([[0.3], [-0.3]], [2.0, 2.0], 1.0, 0.3, 0.5, R=1.0, check_a1=False)
    p = ls.sample_jump_path(spec, 5.0, 0.4, 1)
    assert p.n_jumps == 0
    assert np.all(ls.evaluate_Z(p, np.linspace(0, 5, 7)) == 0)


def test_deterministic():
    spec = fx.cyl_2d()
    a = ls.sample_jump_path(spec, 1.0, 0.02, 99)
    b = ls.sample_jump_path(spec, 1.0, 0.02, 99)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.sizes, b.sizes)
    assert a.digest() == b.digest()


def test_evaluate_Z_cadlag():
    p = ls.insert_jump(ls.empty_path(2.0, 1), 1.0, [0.7])
    assert ls.evaluate_Z(p, 0.99)[0] == 0.0
    assert ls.evaluate_Z(p, 1.0)[0] == 0.7
    assert ls.evaluate_Z(p, 0.0)[0] == 0.0
    q = ls.insert_jump(p, 1.5, [-0.2])
    assert ls.evaluate_Z(q, 2.0)[0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(TimeOutOfRange):
        ls.evaluate_Z(p, 2.5)


def test_insert_jump_contract():
    p = ls.sample_jump_path(fx.iso_1d(), 1.0, 0.05, 3)
    q = ls.insert_jump(p, 0.4321, [0.3])
    assert q.n_jumps == p.n_jumps + 1
    assert ls.evaluate_Z(q, 1.0)[0] - ls.evaluate_Z(p, 1.0)[0] == pytest.approx(0.3, abs=1e-14)
    assert ls.evaluate_Z(q, 0.43)[0] == ls.evaluate_Z(p, 0.43)[0]
    with pytest.raises(DuplicateTimestamp):
        ls.insert_jump(q, 0.4321, [0.3])
    with pytest.raises(JumpOutOfSupport):
        ls.insert_jump(p, 0.5, [0.01])


def test_invalid_cutoff():
    with pytest.raises(InvalidCutoff):
        ls.sample_jump_path(fx.iso_1d(), 1.0, 1.0, 0)


def test_csv_round_trip_bit_exact(tmp_path):
    p = ls.sample_jump_path(fx.cyl_2d(), 1.0, 0.02, 11)
    ls.save_csv(p, tmp_path / "p.csv")
    q = ls.load_csv(tmp_path / "p.csv")
    assert np.array_equal(p.times, q.times) and np.array_equal(p.sizes, q.sizes)
    assert p.digest() == q.digest()


def test_bias_bound():
    rep = ls.truncation_bias_bound(fx.iso_1d(), 1.0, 0.02)
    assert 0 < rep["exact"] <= rep["bound"]


def test_derived_seeds_distinct():
    seeds = {ls.derive_seed(1, k) for k in range(1000)}
    assert len(seeds) == 1000

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from t2certify.girsanov import constant_tilt, coupling_sup_distance, simulate_coupled
from t2certify.sde import NoiseSource, PathSample, TimeGrid, identity_diffusion, zero_drift
from t2certify.transport import (EmpiricalMeasure, batched_w2_estimate, cost_matrix,
                                 empirical_w2, sup_norm_distance)


def brute_force_w2(x, y):
    n = x.shape[0]
    cost = np.max(np.sum((x[:, None] - y[None]) ** 2, axis=-1), axis=-1)
    best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    return np.sqrt(best / n)


def test_sup_norm_examples():
    g = TimeGrid(1.0, 2)
    p = PathSample(g, np.array([[0.0], [1.0], [2.0]]))
    assert sup_norm_distance(p, p) == 0.0
    v = np.array([3.0, 4.0])
    a = np.zeros((3, 2))
    assert sup_norm_distance(a, a + v) == pytest.approx(5.0)
    assert sup_norm_distance(np.zeros(3), np.array([0.0, 3.0, -1.0])) == 3.0
    with pytest.raises(ValueError):
        sup_norm_distance(np.zeros(3), np.zeros(4))


def test_cost_matrix_matches_numpy(rng):
    x = rng.standard_normal((5, 7, 2))
    y = rng.standard_normal((4, 7, 2))
    c = cost_matrix(EmpiricalMeasure(x), EmpiricalMeasure(y))
    expect = np.max(np.sum((x[:, None] - y[None]) ** 2, axis=-1), axis=-1)
    assert np.allclose(c, expect)


def test_hand_built_three_point_instance():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]])[:, :, None]
    y = np.array([[0.0, 2.1], [0.0, -0.5], [0.0, 1.2]])[:, :, None]
    assert empirical_w2(EmpiricalMeasure(x), EmpiricalMeasure(y)) == pytest.approx(
        brute_force_w2(x, y), rel=1e-14)


def test_identity_and_single_sample(rng):
    x = rng.standard_normal((6, 5, 1))
    mu = EmpiricalMeasure(x)
    assert empirical_w2(mu, mu) == 0.0
    y = rng.standard_normal((1, 5, 1))
    assert empirical_w2(EmpiricalMeasure(x[:1]), EmpiricalMeasure(y)) == pytest.approx(
        sup_norm_distance(x[0], y[0]))


def test_size_checks(rng):
    x = EmpiricalMeasure(rng.standard_normal((3, 4, 1)))
    y = EmpiricalMeasure(rng.standard_normal((4, 4, 1)))
    with pytest.raises(ValueError):
        empirical_w2(x, y)
    with pytest.raises(ValueError):
        empirical_w2(x, x, cap=2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_assignment_never_beats_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4, 1))
    y = rng.standard_normal((n, 4, 1))
    got = empirical_w2(EmpiricalMeasure(x), EmpiricalMeasure(y))
    assert got == pytest.approx(brute_force_w2(x, y), rel=1e-12, abs=1e-15)


def test_constant_shift_batches(rng):
    # dyadic values keep the shifted differences exact
    x = rng.integers(-64, 64, size=(32, 6, 1)) / 16.0
    est = batched_w2_estimate(EmpiricalMeasure(x), EmpiricalMeasure(x + 0.75), 8, 4)
    assert est.mean == pytest.approx(0.75)
    assert est.stderr == 0.0
    same = batched_w2_estimate(EmpiricalMeasure(x), EmpiricalMeasure(x), 8, 4)
    assert same.mean == 0.0 and same.stderr == 0.0


def test_batched_estimate_argument_checks(rng):
    x = EmpiricalMeasure(rng.standard_normal((10, 3, 1)))
    with pytest.raises(ValueError):
        batched_w2_estimate(x, x, 4, 3)
    with pytest.raises(ValueError):
        batched_w2_estimate(x, x, 4, 1)


def test_dominated_by_coupling():
    g = TimeGrid(1.0, 100)
    cp = simulate_coupled(zero_drift(1), identity_diffusion(1), constant_tilt([0.5]), [0.0], g,
                          NoiseSource(17), n_paths=1024)
    est = batched_w2_estimate(EmpiricalMeasure(cp.x), EmpiricalMeasure(cp.y), 256, 4)
    bound = np.sqrt(coupling_sup_distance(cp).mean)
    assert est.mean <= bound + 3 * est.stderr + 1e-12

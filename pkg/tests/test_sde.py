import numpy as np
import pytest

from t2certify.sde import (DiffusionField, NoiseSource, PathSample, SimulationError, TimeGrid,
                           brownian_increments, constant_diffusion, constant_drift,
                           euler_maruyama, identity_diffusion, lipschitz_functional_eval,
                           piecewise_constant_drift, sign_drift, simulate_batch, zero_drift)


def test_time_grid_last_node_is_exact():
    g = TimeGrid(0.3, 7)
    assert g.times[-1] == 0.3
    assert g.times.size == 8
    assert g.dt == pytest.approx(0.3 / 7)


def test_time_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_increments_deterministic():
    g = TimeGrid(1.0, 50)
    a = brownian_increments(NoiseSource(3), g, 2)
    b = brownian_increments(NoiseSource(3), g, 2)
    assert np.array_equal(a, b)
    c = brownian_increments(NoiseSource(3, stream=1), g, 2)
    assert not np.array_equal(a, c)


def test_increment_moments():
    n = 100_000
    g = TimeGrid(1.0, n)
    dw = brownian_increments(NoiseSource(0), g, 1)[:, 0]
    assert abs(dw.mean()) <= 4 * np.sqrt(g.dt / n)
    assert abs(dw.var() / g.dt - 1) <= 0.05


def test_driftless_is_partial_sum():
    g = TimeGrid(1.0, 20)
    noise = NoiseSource(8)
    x0 = np.array([0.5, -1.0])
    path = euler_maruyama(zero_drift(2), identity_diffusion(2), x0, g, noise)
    dw = brownian_increments(noise, g, 2)
    expect = x0 + np.vstack([np.zeros(2), np.cumsum(dw, axis=0)])
    assert np.allclose(path.values, expect, rtol=0, atol=1e-14)


def test_constant_drift_zero_noise_is_exact():
    g = TimeGrid(2.0, 16)
    zero = DiffusionField(lambda t, x: np.zeros(x.shape + (1,)), 1, sup_bound=0.0,
                          ellipticity=0.0)
    path = euler_maruyama(constant_drift([1.5]), zero, [0.25], g, NoiseSource(1))
    assert np.allclose(path.values[:, 0], 0.25 + 1.5 * g.times, atol=1e-14)


def test_sign_drift_hand_stepped_trace():
    g = TimeGrid(1.0, 4)
    noise = NoiseSource(42)
    dw = brownian_increments(noise, g, 1)[:, 0]
    x = 0.0
    trace = [x]
    for k in range(4):
        x = x + np.sign(x) * 0.25 + dw[k]
        trace.append(x)
    path = euler_maruyama(sign_drift(1), identity_diffusion(1), [0.0], g, noise)
    assert np.allclose(path.values[:, 0], trace, rtol=0, atol=1e-15)


def test_sign_of_zero_is_zero():
    b = sign_drift(1)
    assert b(0.0, np.zeros((1, 1)))[0, 0] == 0.0


def test_per_step_draws_match_bulk_array():
    g = TimeGrid(1.0, 30)
    noise = NoiseSource(5)
    xs = simulate_batch(zero_drift(1), identity_diffusion(1), [0.0], g, noise, 4)
    dw = brownian_increments(noise, g, 1, n_paths=4)
    assert np.allclose(xs[:, -1, 0], dw[:, :, 0].sum(axis=0), atol=1e-13)


def test_record_every_keeps_last_node():
    g = TimeGrid(1.0, 10)
    xs = simulate_batch(zero_drift(1), identity_diffusion(1), [0.0], g, NoiseSource(0), 3,
                        record_every=4)
    full = simulate_batch(zero_drift(1), identity_diffusion(1), [0.0], g, NoiseSource(0), 3)
    assert xs.shape == (3, 4, 1)
    assert np.array_equal(xs[:, -1], full[:, -1])
    assert np.array_equal(xs[:, 1], full[:, 4])


def test_blow_up_raises_simulation_error():
    g = TimeGrid(1.0, 50)
    bad = constant_drift([1.0])
    bad.func = lambda t, x: np.exp(np.abs(x) * 1e3) * 1e300
    with pytest.raises(SimulationError), np.errstate(over="ignore"):
        simulate_batch(bad, identity_diffusion(1), [1.0], g, NoiseSource(0), 2)


def test_functionals():
    g = TimeGrid(1.0, 2)
    assert lipschitz_functional_eval("sup-norm", PathSample(g, np.zeros((3, 1)))) == 0
    line = PathSample(g, g.times[:, None])
    assert lipschitz_functional_eval("terminal", line) == 1.0
    assert lipschitz_functional_eval("sup-norm", np.array([0.0, -2.0, 1.0])) == 2.0
    with pytest.raises(ValueError):
        lipschitz_functional_eval("median", line)


def test_path_sample_validates():
    g = TimeGrid(1.0, 2)
    with pytest.raises(ValueError):
        PathSample(g, np.zeros((4, 1)))
    with pytest.raises(ValueError):
        PathSample(g, np.array([[0.0], [np.nan], [1.0]]))


def test_piecewise_constant_drift_lookup():
    b = piecewise_constant_drift([0.0, 1.0], [-1.0, 0.5, 2.0])
    x = np.array([[-3.0], [0.0], [0.5], [1.0], [4.0]])
    assert np.array_equal(b(0.0, x)[:, 0], [-1.0, 0.5, 0.5, 2.0, 2.0])


def test_constant_diffusion_ellipticity():
    sig = constant_diffusion(np.array([[2.0, 0.0], [0.0, 0.5]]))
    assert sig.sup_bound == pytest.approx(2.0)
    assert sig.ellipticity == pytest.approx(0.5)

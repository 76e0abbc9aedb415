import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from t2certify.constants import (ConstantInputs, T2Certificate, lipschitz_transfer,
                                 optimize_epsilon, t2_constant_at, theorem_constant)


def oracle(eps, T, sigma, c_bdg):
    mpmath.mp.dps = 50
    eps, T, sigma, c_bdg = (mpmath.mpf(v) for v in (eps, T, sigma, c_bdg))
    return 2 * mpmath.e ** (6 * (c_bdg**2 + eps) * T / (eps * (1 - eps))) * sigma**2 / (1 - eps)


def test_reference_value():
    got = t2_constant_at(0.5, ConstantInputs(0.1, 1.0, 1.0))
    assert abs(got - float(4 * mpmath.e ** mpmath.mpf("3.6"))) <= 1e-12 * got
    assert got == pytest.approx(146.39, abs=0.01)


def test_sigma_scaling_is_quadratic():
    a = t2_constant_at(0.5, ConstantInputs(0.1, 1.0, 1.0))
    b = t2_constant_at(0.5, ConstantInputs(0.1, 2.0, 1.0))
    assert b == pytest.approx(4 * a, rel=1e-15)


@pytest.mark.parametrize("eps", [0.01, 0.3, 0.5, 0.9])
def test_zero_horizon(eps):
    assert t2_constant_at(eps, ConstantInputs(0.0, 1.5)) == 2 * 1.5**2 / (1 - eps)


def test_bad_epsilon():
    with pytest.raises(ValueError):
        t2_constant_at(1.0, ConstantInputs(0.1, 1.0))
    with pytest.raises(ValueError):
        ConstantInputs(-0.1, 1.0)


def test_optimum_zero_horizon_at_boundary():
    opt = optimize_epsilon(ConstantInputs(0.0, 1.0))
    assert opt.at_boundary
    assert opt.C == pytest.approx(2.0 / (1 - 1e-3))


def test_optimum_below_midpoint_and_monotone_in_T():
    inp = ConstantInputs(0.1, 1.0, 1.0)
    assert optimize_epsilon(inp).C <= t2_constant_at(0.5, inp)
    Cs = [optimize_epsilon(ConstantInputs(T, 1.0, 1.0)).C for T in (0, 0.05, 0.1, 0.2)]
    assert all(a <= b for a, b in zip(Cs, Cs[1:]))


def test_large_horizon_does_not_overflow():
    opt = optimize_epsilon(ConstantInputs(1.0, 1.0, 2.0))
    assert math.isfinite(opt.C) and opt.C > 1e40


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.1, 3.0), st.floats(0.5, 3.0))
def test_optimum_beats_grid(T, sigma, c_bdg):
    inp = ConstantInputs(T, sigma, c_bdg)
    opt = optimize_epsilon(inp)
    grid = np.linspace(inp.eps_min, 1 - inp.eps_min, 997)
    best = min(t2_constant_at(e, inp) for e in grid)
    assert opt.C <= best * (1 + 1e-12)


def test_transfer_and_theorem_constant():
    assert lipschitz_transfer(2.0, 3.0) == 18.0
    assert lipschitz_transfer(5.0, 1.0) == 5.0
    inp = ConstantInputs(0.2, 1.0)
    assert theorem_constant(inp, 1.0, 1.0) == optimize_epsilon(inp).C
    with pytest.raises(ValueError):
        lipschitz_transfer(1.0, 0.0)


def _cert(C, H=0.5, w2sq=1.0):
    return T2Certificate(C=C, epsilon_star=0.5, H=H, H_stderr=0.01, w2_upper=1.0,
                         w2_upper_stderr=0.0, w2_emp=math.sqrt(w2sq), w2_emp_stderr=0.01,
                         w2_emp_sq=w2sq, w2_emp_sq_stderr=0.02, N=100)


def test_verdict_monotone_in_C():
    verdicts = [_cert(C).verdict for C in np.linspace(0.1, 10, 50)]
    first = verdicts.index(True)
    assert all(verdicts[first:])
    assert _cert(2.0, H=0.0, w2sq=0.0).slack_ratio == math.inf

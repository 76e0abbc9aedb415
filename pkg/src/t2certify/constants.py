"""Explicit quadratic transportation constants.

For a driftless-type SDE with diffusion bounded by ``sigma_sup`` on ``[0, T]``
the constant family is

    C(eps) = 2 exp(6 (C_BDG^2 + eps) T / (eps (1 - eps))) sigma_sup^2 / (1 - eps),

minimised over ``eps`` in ``(0, 1)``.  Pushing a T2(C) law forward through an
``L``-Lipschitz map gives T2(C L^2).
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "ConstantInputs",
    "EpsilonOptimum",
    "T2Certificate",
    "log_t2_constant_at",
    "t2_constant_at",
    "optimize_epsilon",
    "lipschitz_transfer",
    "theorem_constant",
    "DEFAULT_C_BDG",
]

DEFAULT_C_BDG = 2.0
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ConstantInputs:
    T: float
    sigma_sup: float
    c_bdg: float = DEFAULT_C_BDG
    eps_min: float = 1e-3

    def __post_init__(self):
        if not self.T >= 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if not self.sigma_sup > 0:
            raise ValueError(f"sigma_sup must be > 0, got {self.sigma_sup}")
        if not self.c_bdg > 0:
            raise ValueError(f"C_BDG must be > 0, got {self.c_bdg}")
        if not 0 < self.eps_min < 0.5:
            raise ValueError(f"eps_min must lie in (0, 1/2), got {self.eps_min}")

    def with_sigma(self, sigma_sup):
        return ConstantInputs(self.T, sigma_sup, self.c_bdg, self.eps_min)


class EpsilonOptimum(NamedTuple):
    epsilon: float
    C: float
    at_boundary: bool


@dataclass
class T2Certificate:
    """Outcome of one empirical check of ``W2^2 <= C H``."""

    C: float
    epsilon_star: float
    H: float
    H_stderr: float
    w2_upper: float
    w2_upper_stderr: float
    w2_emp: float
    w2_emp_stderr: float
    w2_emp_sq: float
    w2_emp_sq_stderr: float
    N: int
    c_bdg: float = DEFAULT_C_BDG

    @property
    def combined_stderr(self):
        return math.hypot(self.C * self.H_stderr, self.w2_emp_sq_stderr)

    @property
    def verdict(self):
        return self.w2_emp_sq <= self.C * self.H + 3.0 * self.combined_stderr

    @property
    def slack_ratio(self):
        if self.w2_emp_sq == 0.0:
            return math.inf
        return self.C * self.H / self.w2_emp_sq


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")


def log_t2_constant_at(eps, inputs):
    _check_eps(eps)
    rate = 6.0 * (inputs.c_bdg**2 + eps) / (eps * (1.0 - eps))
    return (math.log(2.0) + rate * inputs.T - math.log1p(-eps)
            + 2.0 * math.log(inputs.sigma_sup))


def t2_constant_at(eps, inputs):
    """Constant at a fixed ``eps``; ``inf`` once it leaves the float range."""
    _check_eps(eps)
    rate = 6.0 * (inputs.c_bdg**2 + eps) / (eps * (1.0 - eps))
    if log_t2_constant_at(eps, inputs) > 709.0:
        return math.inf
    return 2.0 * inputs.sigma_sup**2 / (1.0 - eps) * math.exp(rate * inputs.T)


def _golden(f, a, b, rtol):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > rtol * (abs(c) + abs(d)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def optimize_epsilon(inputs, n_grid=256, rtol=1e-8):
    """Minimise the constant over ``[eps_min, 1 - eps_min]``.

    Coarse scan on ``n_grid`` points, then golden-section refinement on the
    bracketing cell.  The search runs on ``log C`` so large horizons do not
    overflow before the final exponentiation.  ``at_boundary`` flags a minimum
    within one coarse cell of the window edge (the T = 0 case).
    """
    lo, hi = inputs.eps_min, 1.0 - inputs.eps_min
    grid = np.linspace(lo, hi, max(n_grid, 200))
    logs = np.array([log_t2_constant_at(e, inputs) for e in grid])
    j = int(np.argmin(logs))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    f = lambda e: log_t2_constant_at(e, inputs)
    eps, _ = _golden(f, a, b, rtol)
    candidates = [eps, a, b, lo, hi, grid[j]]
    if logs[j] < 700.0:
        values = [t2_constant_at(e, inputs) for e in candidates]
        k = int(np.argmin(values))
        eps, C = candidates[k], values[k]
    else:
        values = [f(e) for e in candidates]
        k = int(np.argmin(values))
        eps, C = candidates[k], (math.exp(values[k]) if values[k] < 709.0 else math.inf)
    at_boundary = j == 0 or j == grid.size - 1
    return EpsilonOptimum(float(eps), float(C), at_boundary)


def lipschitz_transfer(C, lip):
    """T2 constant of the image of a T2(C) law under a ``lip``-Lipschitz map."""
    if not C > 0 or not lip > 0:
        raise ValueError("constant and Lipschitz factor must be positive")
    return C * lip * lip


def theorem_constant(inputs, zvonkin_lip, sigma_tilde_sup):
    """Constant for the drifted SDE via the space transform.

    The transformed process is driftless with diffusion bounded by
    ``sigma_tilde_sup``; its constant is transported back through the inverse
    transform, whose Lipschitz constant is ``zvonkin_lip``.
    """
    opt = optimize_epsilon(inputs.with_sigma(sigma_tilde_sup))
    return lipschitz_transfer(opt.C, zvonkin_lip)

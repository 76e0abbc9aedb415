"""Drifts of interacting particle systems on the line.

A state is ``(x_1, ..., x_n)``; batched states have shape ``(N, n)``.  Ties
between coincident particles are broken by particle index (the lower index
gets the lower rank), which keeps every drift a total function; ties have
probability zero under a non-degenerate diffusion.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sde import DriftField

__all__ = [
    "RankModelSpec",
    "QuantileModelSpec",
    "ranks",
    "rank_based_drift",
    "atlas_drift",
    "empirical_quantile",
    "quantile_drift",
    "ConditionalDrift",
    "conditional_drift_estimate",
    "rank_drift_field",
    "atlas_drift_field",
    "quantile_drift_field",
]


@dataclass
class RankModelSpec:
    """Rank coefficients ``delta_1..delta_n`` or an Atlas pair ``(delta, perm)``.

    ``perm`` is a permutation of ``0..n-1``; the particle occupying rank
    ``perm[0]`` (0-based, 0 = minimum) receives the Atlas push ``delta``.
    ``sigma_rule(t)`` returns the per-particle diffusion coefficients.
    """

    n: int
    deltas: Optional[np.ndarray] = None
    delta: Optional[float] = None
    perm: Optional[np.ndarray] = None
    sigma_rule: Optional[Callable] = None
    sigma_lower: float = 1.0
    sigma_upper: float = 1.0

    def __post_init__(self):
        if self.deltas is not None:
            self.deltas = np.asarray(self.deltas, dtype=float)
            if self.deltas.shape != (self.n,):
                raise ValueError(f"need {self.n} rank coefficients, got {self.deltas.shape}")
        if self.perm is None:
            self.perm = np.arange(self.n)
        self.perm = np.asarray(self.perm)
        if sorted(self.perm.tolist()) != list(range(self.n)):
            raise ValueError("perm must be a permutation of 0..n-1")
        if not 0 < self.sigma_lower <= self.sigma_upper:
            raise ValueError("diffusion bounds must satisfy 0 < lower <= upper")


@dataclass
class QuantileModelSpec:
    n: int
    alpha: float
    b: Callable  # (t, x, v) -> drift, vectorised
    b_sup: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def ranks(state):
    """0-based ranks along the last axis, ties broken by index."""
    state = np.asarray(state, dtype=float)
    order = np.argsort(state, axis=-1, kind="stable")
    r = np.empty_like(order)
    np.put_along_axis(r, order, np.arange(state.shape[-1]), axis=-1)
    return r


def rank_based_drift(spec, t, state):
    """Particle ``i`` receives ``delta_{r(i)}`` where ``r(i)`` is its rank."""
    return spec.deltas[ranks(state)]


def atlas_drift(spec, t, state):
    """Constant push ``delta`` on the particle occupying rank ``perm[0]``."""
    r = ranks(state)
    return np.where(r == spec.perm[0], spec.delta, 0.0)


def _order_index(n, alpha):
    # smallest k with k/n >= alpha, computed with the same float comparison
    # as the defining infimum
    k = max(1, int(math.ceil(alpha * n)))
    while k > 1 and (k - 1) / n >= alpha:
        k -= 1
    while k < n and k / n < alpha:
        k += 1
    return k


def empirical_quantile(state, alpha):
    """``inf{u : #{x_i <= u} / n >= alpha}``, the ``ceil(alpha n)``-th order statistic."""
    state = np.asarray(state, dtype=float)
    n = state.shape[-1]
    if n < 1:
        raise ValueError("empty state")
    k = _order_index(n, alpha)
    return np.partition(state, k - 1, axis=-1)[..., k - 1]


def quantile_drift(spec, t, state):
    state = np.asarray(state, dtype=float)
    v = empirical_quantile(state, spec.alpha)
    return spec.b(t, state, np.expand_dims(v, -1))


def rank_drift_field(spec):
    return DriftField(lambda t, x: rank_based_drift(spec, t, x), spec.n,
                      sup_bound=float(np.linalg.norm(spec.deltas)),
                      name="rank-based")


def atlas_drift_field(spec):
    return DriftField(lambda t, x: atlas_drift(spec, t, x), spec.n,
                      sup_bound=abs(spec.delta), name="atlas")


def quantile_drift_field(spec):
    bound = None if spec.b_sup is None else spec.b_sup * math.sqrt(spec.n)
    return DriftField(lambda t, x: quantile_drift(spec, t, x), spec.n,
                      sup_bound=bound, name="quantile")


@dataclass
class ConditionalDrift:
    """Kernel-regression estimate of ``E[g(t) | X(t) = x]`` on slices.

    ``values[s, j]`` is the estimate at time ``slice_times[s]`` and point
    ``x_grid[j]``; evaluation is piecewise constant in time (latest slice not
    after ``t``) and linear in ``x`` with constant extension.
    """

    slice_times: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    g_sup: float
    bandwidth: float

    def __call__(self, t, x):
        s = int(np.searchsorted(self.slice_times, t + 1e-12, side="right")) - 1
        s = min(max(s, 0), self.slice_times.size - 1)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.interp(x[:, 0], self.x_grid, self.values[s])[:, None]

    def field(self):
        return DriftField(self, 1, sup_bound=self.g_sup, name="mimicking")


def _nadaraya_watson(xs, gs, grid, bandwidth, chunk=64):
    out = np.empty(grid.size)
    for a in range(0, grid.size, chunk):
        z = (grid[a:a + chunk, None] - xs[None, :]) / bandwidth
        w = np.exp(-0.5 * z * z)
        den = w.sum(axis=1)
        num = w @ gs
        with np.errstate(invalid="ignore", divide="ignore"):
            out[a:a + chunk] = np.where(den > 0, num / den, 0.0)
    return out


def conditional_drift_estimate(slice_times, xs, gs, bandwidth, x_grid, g_sup):
    """Gaussian-kernel Nadaraya-Watson regression of ``g`` on ``X`` per time slice.

    ``xs`` and ``gs`` have shape ``(n_slices, n_samples)``.  Estimates are
    clipped to ``[-g_sup, g_sup]``.
    """
    xs = np.asarray(xs, dtype=float)
    gs = np.asarray(gs, dtype=float)
    if xs.shape != gs.shape or xs.ndim != 2:
        raise ValueError("xs and gs must both have shape (n_slices, n_samples)")
    if xs.shape[1] == 0:
        raise ValueError("empty slice")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x_grid = np.asarray(x_grid, dtype=float)
    vals = np.stack([_nadaraya_watson(xs[s], gs[s], x_grid, bandwidth)
                     for s in range(xs.shape[0])])
    vals = np.clip(vals, -g_sup, g_sup)
    return ConditionalDrift(np.asarray(slice_times, dtype=float), x_grid, vals, g_sup, bandwidth)

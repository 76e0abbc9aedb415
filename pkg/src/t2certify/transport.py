"""Wasserstein-2 estimates between empirical path measures.

The ground metric is the sup-norm over the time grid.  Equal-size empirical
measures with uniform weights are matched exactly by solving the assignment
problem, so no regularisation bias enters a certificate.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment

from .sde import PathSample

__all__ = [
    "EmpiricalMeasure",
    "W2Estimate",
    "sup_norm_distance",
    "cost_matrix",
    "empirical_w2",
    "assignment_cost",
    "batched_w2_estimate",
    "summarize_rounds",
    "DEFAULT_CAP",
]

DEFAULT_CAP = 4096


@dataclass
class EmpiricalMeasure:
    """``N`` paths on a common grid, each with weight ``1/N``."""

    paths: np.ndarray

    def __post_init__(self):
        paths = self.paths
        if isinstance(paths, (list, tuple)):
            grids = {p.grid for p in paths}
            if len(grids) > 1:
                raise ValueError("paths of an empirical measure must share a grid")
            paths = np.stack([p.values for p in paths])
        paths = np.asarray(paths, dtype=float)
        if paths.ndim == 2:
            paths = paths[:, :, None]
        if paths.ndim != 3:
            raise ValueError("expected paths of shape (N, n + 1, d)")
        self.paths = paths

    @property
    def size(self):
        return self.paths.shape[0]

    def subset(self, start, stop):
        return EmpiricalMeasure(self.paths[start:stop])


def _values(p):
    return p.values if isinstance(p, PathSample) else np.asarray(p, dtype=float)


def sup_norm_distance(p1, p2):
    """``max_k |p1(t_k) - p2(t_k)|`` (Euclidean norm in space)."""
    if isinstance(p1, PathSample) and isinstance(p2, PathSample) and p1.grid != p2.grid:
        raise ValueError("paths live on different grids")
    a, b = _values(p1), _values(p2)
    if a.shape != b.shape:
        raise ValueError(f"path shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        return float(np.max(np.abs(a - b)))
    return float(np.sqrt(np.max(np.sum((a - b) ** 2, axis=-1))))


@njit(cache=True, nogil=True)
def _sup_cost(xs, ys):
    n_x, n_t, d = xs.shape
    n_y = ys.shape[0]
    out = np.zeros((n_x, n_y))
    for i in range(n_x):
        for j in range(n_y):
            best = 0.0
            for k in range(n_t):
                s = 0.0
                for c in range(d):
                    diff = xs[i, k, c] - ys[j, k, c]
                    s += diff * diff
                if s > best:
                    best = s
            out[i, j] = best
    return out


def cost_matrix(mu, nu):
    """Squared sup-norm distances ``c_ij = max_k |mu_i(t_k) - nu_j(t_k)|^2``."""
    xs = np.ascontiguousarray(mu.paths)
    ys = np.ascontiguousarray(nu.paths)
    if xs.shape[1:] != ys.shape[1:]:
        raise ValueError("empirical measures live on different grids or dimensions")
    return _sup_cost(xs, ys)


def assignment_cost(cost):
    """Optimal mean cost of a perfect matching for a square cost matrix."""
    cost = np.asarray(cost, dtype=float)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def empirical_w2(mu, nu, cap=DEFAULT_CAP):
    """Exact W2 between two equal-size empirical path measures."""
    if mu.size != nu.size:
        raise ValueError(f"sample counts differ: {mu.size} vs {nu.size}")
    if mu.size > cap:
        raise ValueError(
            f"{mu.size} samples exceed the exact-solver cap of {cap}; "
            "use batched_w2_estimate instead"
        )
    return float(np.sqrt(assignment_cost(cost_matrix(mu, nu))))


class W2Estimate(NamedTuple):
    mean: float
    stderr: float
    sq_mean: float
    sq_stderr: float
    values: np.ndarray


def batched_w2_estimate(mu, nu, batch, rounds, cap=DEFAULT_CAP):
    """Average exact W2 over ``rounds`` disjoint sub-batches of size ``batch``.

    Sub-batch ``r`` pairs samples ``r*batch .. (r+1)*batch - 1`` of both
    measures.  Small batches overestimate W2 (the estimator is biased and
    only consistent as ``batch`` grows).  ``sq_mean``/``sq_stderr`` refer to
    the per-round squared distances.
    """
    if batch > cap:
        raise ValueError(f"batch size {batch} exceeds the exact-solver cap {cap}")
    if rounds < 2:
        raise ValueError("need at least two rounds for an error estimate")
    if min(mu.size, nu.size) < batch * rounds:
        raise ValueError(
            f"need {batch * rounds} samples per measure, have {mu.size} and {nu.size}"
        )
    vals = np.array([
        empirical_w2(mu.subset(r * batch, (r + 1) * batch),
                     nu.subset(r * batch, (r + 1) * batch), cap=cap)
        for r in range(rounds)
    ])
    return summarize_rounds(vals)


def summarize_rounds(vals):
    vals = np.asarray(vals, dtype=float)
    sq = vals**2
    se = lambda v: 0.0 if np.ptp(v) == 0.0 else float(v.std(ddof=1) / np.sqrt(v.size))
    return W2Estimate(float(vals.mean()), se(vals), float(sq.mean()), se(sq), vals)

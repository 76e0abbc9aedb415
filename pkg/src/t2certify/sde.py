"""Euler-Maruyama simulation of SDEs with bounded measurable drift.

All fields act on batches: a state array has shape ``(N, d)`` and a drift
returns ``(N, d)``.  Paths are stored path-major, ``(N, n + 1, d)``.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TimeGrid",
    "PathSample",
    "DriftField",
    "DiffusionField",
    "NoiseSource",
    "SimulationError",
    "brownian_increments",
    "euler_maruyama",
    "simulate_batch",
    "lipschitz_functional_eval",
    "FUNCTIONAL_TAGS",
    "zero_drift",
    "constant_drift",
    "sign_drift",
    "regime_switching_drift",
    "piecewise_constant_drift",
    "constant_diffusion",
    "identity_diffusion",
    "diagonal_time_diffusion",
    "spectral_norm",
]

_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    """A simulated value became non-finite at ``step``."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state produced at step {step}")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"number of steps must be a positive integer, got {self.n}")
        if not np.isfinite(self.T) or self.T < 0:
            raise ValueError(f"horizon must be finite and non-negative, got {self.T}")

    @property
    def dt(self):
        return self.T / self.n

    @property
    def times(self):
        t = np.arange(self.n + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass
class PathSample:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.grid.n + 1:
            raise ValueError(
                f"path has {self.values.shape[0]} nodes, grid expects {self.grid.n + 1}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path contains non-finite entries")

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.grid.times


@dataclass
class DriftField:
    """Drift ``b(t, x)`` evaluated on a batch of states.

    ``func(t, x)`` receives ``x`` of shape ``(N, d)`` and must return an array
    of the same shape.  ``sup_bound`` is the declared bound on ``|b|`` (Euclidean
    norm per state), or ``None`` for drifts only known to be integrable.
    """

    func: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    sup_bound: Optional[float] = None
    exponents: Optional[tuple] = None
    name: str = "drift"
    is_zero: bool = False

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = np.asarray(self.func(t, np.atleast_2d(x)), dtype=float)
        return out[0] if single else out

    def max_violation(self, t, x):
        """Largest excess of ``|b(t, x)|`` over the declared bound on the sample."""
        if self.sup_bound is None:
            return 0.0
        norms = np.linalg.norm(self(t, x), axis=-1)
        return float(max(0.0, norms.max() - self.sup_bound))


@dataclass
class DiffusionField:
    """Diffusion matrix ``sigma(t, x)``.

    If ``diagonal`` is true, ``func`` returns only the diagonal entries,
    shape ``(N, d)``; otherwise the full ``(N, d, d)`` matrices.
    """

    func: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    sup_bound: float
    ellipticity: float
    diagonal: bool = False
    name: str = "diffusion"

    def __post_init__(self):
        # zero values describe degenerate (deterministic) dynamics
        if self.sup_bound < 0:
            raise ValueError("diffusion sup-bound must be non-negative")
        if self.ellipticity < 0 or self.ellipticity > self.sup_bound:
            raise ValueError("need 0 <= ellipticity <= sup-bound")

    def matrix(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.asarray(self.func(t, x), dtype=float)
        if self.diagonal:
            mats = np.zeros(out.shape + (out.shape[-1],))
            idx = np.arange(out.shape[-1])
            mats[..., idx, idx] = out
            return mats
        return out

    def apply(self, t, x, v):
        """Return ``sigma(t, x) @ v`` row by row."""
        out = np.asarray(self.func(t, x), dtype=float)
        if self.diagonal:
            return out * v
        return np.einsum("nij,nj->ni", out, v)

    def ellipticity_violation(self, t, x, xi):
        """Largest ``lambda |xi|^2 - xi* sigma xi`` over sampled triples (<= 0 is fine)."""
        mats = self.matrix(t, x)
        xi = np.atleast_2d(xi)
        quad = np.einsum("ni,nij,nj->n", xi, mats, xi)
        return float(np.max(self.ellipticity * np.sum(xi**2, axis=1) - quad))


@dataclass(frozen=True)
class NoiseSource:
    """Counter-based Gaussian noise keyed by ``(seed, stream)``.

    Uses the Philox generator with the 128-bit key ``seed | stream << 64``, so
    each stream is an independent, reproducible sequence regardless of the
    order in which streams are consumed.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not (0 <= self.stream <= _MASK64):
            raise ValueError("stream id must be an unsigned 64-bit integer")

    def generator(self):
        return np.random.Generator(np.random.Philox(key=self.seed | (self.stream << 64)))

    def spawn(self, stream):
        return NoiseSource(self.seed, stream)


def brownian_increments(noise, grid, d, n_paths=None):
    """Brownian increments on ``grid``.

    Returns shape ``(n, d)``, or ``(n, n_paths, d)`` when ``n_paths`` is given.
    Draws are time-major, so stepping through the generator one time level at
    a time (as ``simulate_batch`` does) reproduces exactly this array.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    rng = noise.generator()
    shape = (grid.n, d) if n_paths is None else (grid.n, n_paths, d)
    return rng.standard_normal(shape) * np.sqrt(grid.dt)


def _as_state(x0, n_paths, d=None):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (n_paths, x0.shape[0]))
    if d is not None and x0.shape[1] != d:
        raise ValueError(f"initial point has dimension {x0.shape[1]}, fields expect {d}")
    return np.array(x0, dtype=float)


def simulate_batch(drift, diff, x0, grid, noise, n_paths, record_every=1, increments=None):
    """Simulate ``n_paths`` Euler-Maruyama paths driven by one noise stream.

    Returns an array of shape ``(n_paths, m, d)`` holding the states at time
    indices ``0, record_every, 2 * record_every, ...`` (the last node is always
    included).  ``increments`` of shape ``(n, n_paths, d)`` may be passed to
    bypass the generator.
    """
    d = drift.dim
    if diff.dim != d:
        raise ValueError("drift and diffusion dimensions differ")
    x = _as_state(x0, n_paths, d)
    rec = sorted(set(range(0, grid.n + 1, record_every)) | {grid.n})
    out = np.empty((n_paths, len(rec), d))
    out[:, 0] = x
    slot = 1
    rng = noise.generator() if increments is None else None
    sq = np.sqrt(grid.dt)
    times = grid.times
    dt = grid.dt
    for k in range(grid.n):
        t = times[k]
        dw = rng.standard_normal((n_paths, d)) * sq if increments is None else increments[k]
        step = diff.apply(t, x, dw)
        if not drift.is_zero:
            step = step + drift.func(t, x) * dt
        x = x + step
        if not np.all(np.isfinite(x)):
            raise SimulationError(k + 1)
        if slot < len(rec) and rec[slot] == k + 1:
            out[:, slot] = x
            slot += 1
    return out


def euler_maruyama(drift, diff, x0, grid, noise):
    """Single path ``X_{k+1} = X_k + b(t_k, X_k) dt + sigma(t_k, X_k) dW_k``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    values = simulate_batch(drift, diff, x0[None, :], grid, noise, 1)
    return PathSample(grid, values[0])


FUNCTIONAL_TAGS = ("sup-norm", "terminal", "time-average")


def lipschitz_functional_eval(tag, path, coord=0):
    """Evaluate a 1-Lipschitz (for the grid sup-norm) path functional.

    ``tag`` is one of ``"sup-norm"``, ``"terminal"`` or ``"time-average"``;
    the latter two read coordinate ``coord``.  ``path`` may be a PathSample
    or a raw array ``(n + 1, d)`` / batch ``(N, n + 1, d)``.
    """
    values = path.values if isinstance(path, PathSample) else np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if tag == "sup-norm":
        return np.max(np.linalg.norm(values, axis=-1), axis=-1)
    if tag == "terminal":
        return values[..., -1, coord]
    if tag == "time-average":
        # left-point rule over the n intervals: weights sum to 1
        return np.mean(values[..., :-1, coord], axis=-1)
    raise ValueError(f"unknown functional tag {tag!r}; expected one of {FUNCTIONAL_TAGS}")


def spectral_norm(mats):
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


# -- field constructors -------------------------------------------------------

def zero_drift(d):
    return DriftField(lambda t, x: np.zeros_like(x), d, sup_bound=0.0, name="zero", is_zero=True)


def constant_drift(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return DriftField(lambda t, x: np.broadcast_to(c, x.shape).copy(), c.size,
                      sup_bound=float(np.linalg.norm(c)), name="constant")


def sign_drift(d=1, scale=1.0):
    """Componentwise ``scale * sgn(x)``; ``sgn(0) = 0``."""
    return DriftField(lambda t, x: scale * np.sign(x), d,
                      sup_bound=abs(scale) * np.sqrt(d), name="sgn")


def regime_switching_drift(b_in, b_out, region, d, sup_bound, name="regime"):
    """``b_in`` on ``region`` and ``b_out`` on its complement.

    ``region(x)`` returns a boolean mask of shape ``(N,)``; ``b_in``/``b_out``
    are drift callables ``(t, x) -> (N, d)``.
    """
    def func(t, x):
        mask = region(x)[:, None]
        return np.where(mask, b_in(t, x), b_out(t, x))
    return DriftField(func, d, sup_bound=sup_bound, name=name)


def piecewise_constant_drift(edges, values):
    """1D lookup drift: ``values[j]`` on ``[edges[j-1], edges[j])``.

    ``values`` has ``len(edges) + 1`` entries (the two unbounded end cells included).
    """
    edges = np.asarray(edges, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (edges.size + 1,):
        raise ValueError("need one value per cell (len(edges) + 1)")

    def func(t, x):
        return values[np.searchsorted(edges, x[:, 0], side="right")][:, None]
    return DriftField(func, 1, sup_bound=float(np.max(np.abs(values))), name="lookup")


def constant_diffusion(matrix):
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = m.shape[0]
    sym = 0.5 * (m + m.T)
    lam = float(np.linalg.eigvalsh(sym).min())
    return DiffusionField(lambda t, x: np.broadcast_to(m, (x.shape[0], d, d)), d,
                          sup_bound=float(np.linalg.norm(m, 2)), ellipticity=lam,
                          name="constant")


def identity_diffusion(d, scale=1.0):
    if scale <= 0:
        raise ValueError("scale must be positive")
    return DiffusionField(lambda t, x: np.full(x.shape, scale), d, sup_bound=scale,
                          ellipticity=scale, diagonal=True, name="identity")


def diagonal_time_diffusion(rule, d, lower, upper):
    """Diagonal diffusion ``sigma^i(t)`` depending on time only.

    ``rule(t)`` returns the ``d`` diagonal entries; declared bounds must satisfy
    ``0 < lower <= sigma^i(t) <= upper``.
    """
    if not 0 < lower <= upper:
        raise ValueError("need 0 < lower <= upper")

    def func(t, x):
        return np.broadcast_to(np.asarray(rule(t), dtype=float), x.shape)
    return DiffusionField(func, d, sup_bound=upper, ellipticity=lower, diagonal=True,
                          name="diagonal-time")

"""Zvonkin space transform for SDEs with measurable drift (d = 1 or 2).

Each component of ``u`` solves the backward system

    du/dt + b . grad u + 1/2 tr(a D^2 u) + b / (1 + C_b) = 0,   u(T) = 0,

with ``a = sigma sigma^*``, on the box ``[-L, L]^d`` with homogeneous Neumann
conditions.  ``Phi = x / (1 + C_b) + u`` removes the drift: ``Y = Phi(t, X)``
solves a driftless SDE with diffusion ``(D Phi sigma)(t, Psi(t, y))``.

Norm conventions: sup-bounds of diffusion matrices use the spectral norm;
gradient bounds are per component, Euclidean over space.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.sparse.linalg import splu

from .sde import DiffusionField, TimeGrid, simulate_batch, spectral_norm

__all__ = [
    "PdeGrid",
    "VectorField",
    "ScalarField",
    "ZvonkinConfig",
    "SolverError",
    "GradientReport",
    "BiLipschitzReport",
    "MartingaleReport",
    "zvonkin_solve",
    "solve_with_gradient_bound",
    "pde_residual",
    "gradient_field",
    "gradient_bound_check",
    "PhiField",
    "build_phi",
    "invert_phi",
    "psi_lipschitz",
    "phi_bilipschitz_check",
    "TransformedDiffusion",
    "transformed_sigma",
    "driftless_residual_check",
    "export_field_csv",
]


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PdeGrid:
    """Uniform spatial grid on ``[-L, L]^dim`` tied to a time grid.

    ``boundary_layer`` is the width of the strip along the box edge that is
    excluded from every sup / gradient check.
    """

    L: float
    h: float
    time: TimeGrid
    dim: int = 1
    boundary_layer: float = 1.0

    def __post_init__(self):
        if self.L <= 0 or self.h <= 0:
            raise ValueError("box half-width and spatial step must be positive")
        if self.dim not in (1, 2):
            raise ValueError("the PDE solver supports d = 1 or 2 only")
        m = 2 * self.L / self.h
        if abs(m - round(m)) > 1e-9 * m:
            raise ValueError("2L must be an integer multiple of h")
        if not 0 <= self.boundary_layer < self.L:
            raise ValueError("boundary layer must be narrower than the box")

    @property
    def m(self):
        """Number of cells per axis."""
        return int(round(2 * self.L / self.h))

    @property
    def axis(self):
        return np.linspace(-self.L, self.L, self.m + 1)

    @property
    def shape(self):
        return (self.m + 1,) * self.dim

    @property
    def nodes(self):
        """All nodes as an array of shape ``(n_nodes, dim)`` (C order)."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def interior_mask(self, margin=None):
        margin = self.boundary_layer if margin is None else margin
        return np.all(np.abs(self.nodes) <= self.L - margin + 1e-12, axis=1)

    def refined(self):
        """Grid with ``h`` and ``dt`` both halved."""
        return PdeGrid(self.L, self.h / 2, TimeGrid(self.time.T, 2 * self.time.n),
                       self.dim, self.boundary_layer)


@dataclass
class VectorField:
    """Grid function with ``values`` of shape ``(n_t + 1, n_nodes, m)``.

    Evaluation is multilinear in space and linear in time; points outside the
    box are clamped to the boundary (constant extension, consistent with the
    Neumann condition).
    """

    grid: PdeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if not np.all(np.isfinite(self.values)):
            raise SolverError("field has non-finite entries")

    @property
    def components(self):
        return self.values.shape[2]

    def level(self, k):
        return self.values[k]

    def _time_weights(self, t):
        tg = self.grid.time
        s = t / tg.dt if tg.dt > 0 else 0.0
        k = int(math.floor(s + 1e-9))
        k = min(max(k, 0), tg.n)
        w = s - k
        if k == tg.n or abs(w) < 1e-9:
            return k, k, 0.0
        return k, k + 1, w

    def _space(self, vals, x):
        g = self.grid
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pos = (np.clip(x, -g.L, g.L) + g.L) / g.h
        idx = np.minimum(np.floor(pos).astype(int), g.m - 1)
        frac = pos - idx
        n1 = g.m + 1
        if g.dim == 1:
            i = idx[:, 0]
            f = frac[:, :1]
            return (1 - f) * vals[i] + f * vals[i + 1]
        i, j = idx[:, 0], idx[:, 1]
        fx, fy = frac[:, :1], frac[:, 1:2]
        v00, v01 = vals[i * n1 + j], vals[i * n1 + j + 1]
        v10, v11 = vals[(i + 1) * n1 + j], vals[(i + 1) * n1 + j + 1]
        return ((1 - fx) * ((1 - fy) * v00 + fy * v01)
                + fx * ((1 - fy) * v10 + fy * v11))

    def __call__(self, t, x):
        k0, k1, w = self._time_weights(t)
        out = self._space(self.values[k0], x)
        if w:
            out = (1 - w) * out + w * self._space(self.values[k1], x)
        return out

    def outside(self, x):
        return np.any(np.abs(np.atleast_2d(x)) > self.grid.L, axis=1)


ScalarField = VectorField


@dataclass
class ZvonkinConfig:
    """Coefficients and normalisation for the transform PDE.

    ``exponents`` holds the integrability pair ``(p, q)`` when the drift is
    only known to lie in ``L^q(L^p)``; ``case`` labels which well-posedness
    regime ("A": bounded drift, small T; "B": integrable drift) a run claims.
    """

    drift: object
    diffusion: object
    C_b: float = 1.0
    exponents: Optional[tuple] = None
    case: str = "B"

    def __post_init__(self):
        if self.C_b < 0:
            raise ValueError("C_b must be non-negative")
        if self.drift.dim != self.diffusion.dim:
            raise ValueError("drift and diffusion dimensions differ")
        if self.case not in ("A", "B"):
            raise ValueError("case must be 'A' or 'B'")
        if self.exponents is not None:
            p, q = self.exponents
            d = self.drift.dim
            if not (d / p + 2 / q < 1 and p >= 2 * (d + 1) and q > 2):
                raise ValueError(
                    f"exponents (p={p}, q={q}) violate d/p + 2/q < 1, p >= 2(d+1), q > 2"
                )

    def with_C_b(self, C_b):
        return ZvonkinConfig(self.drift, self.diffusion, C_b, self.exponents, self.case)


# -- finite-difference operators ---------------------------------------------

def _axis_ops(m, h):
    """Central first/second differences with reflected ghost nodes (Neumann)."""
    n = m + 1
    up = np.full(n - 1, 1.0)
    lo = np.full(n - 1, -1.0)
    up[0] = 0.0
    lo[-1] = 0.0
    d1 = sp.diags([lo, up], [-1, 1], shape=(n, n), format="csr") / (2 * h)
    main = np.full(n, -2.0)
    sup_ = np.ones(n - 1)
    sub = np.ones(n - 1)
    sup_[0] = 2.0
    sub[-1] = 2.0
    d2 = sp.diags([sub, main, sup_], [-1, 0, 1], shape=(n, n), format="csr") / h**2
    return d1, d2


class _Operator:
    def __init__(self, grid):
        d1, d2 = _axis_ops(grid.m, grid.h)
        if grid.dim == 1:
            self.first = [d1]
            self.second = {(0, 0): d2}
        else:
            eye = sp.identity(grid.m + 1, format="csr")
            self.first = [sp.kron(d1, eye, format="csr"), sp.kron(eye, d1, format="csr")]
            cross = sp.kron(d1, d1, format="csr")
            self.second = {(0, 0): sp.kron(d2, eye, format="csr"),
                           (1, 1): sp.kron(eye, d2, format="csr"),
                           (0, 1): cross, (1, 0): cross}
        self.grid = grid
        self.nodes = grid.nodes

    def coefficients(self, drift, diff, t):
        b = np.asarray(drift.func(t, self.nodes), dtype=float)
        s = diff.matrix(t, self.nodes)
        a = np.einsum("nij,nkj->nik", s, s)
        return b, a

    def assemble(self, b, a):
        d = self.grid.dim
        A = sp.csr_matrix((self.nodes.shape[0],) * 2)
        for j in range(d):
            A = A + sp.diags(b[:, j]) @ self.first[j]
        for (j, k), op in self.second.items():
            A = A + sp.diags(0.5 * a[:, j, k]) @ op
        return A.tocsc()


def zvonkin_solve(config, grid, theta=0.5):
    """Solve for ``u`` backward from ``u(T) = 0`` with the theta scheme.

    ``theta = 1/2`` is Crank-Nicolson.  Factorisations are reused while the
    coefficients do not change between time levels.
    """
    drift, diff = config.drift, config.diffusion
    if drift.dim != grid.dim:
        raise ValueError("grid dimension does not match the drift")
    op = _Operator(grid)
    tg = grid.time
    n_nodes = op.nodes.shape[0]
    d = grid.dim
    values = np.zeros((tg.n + 1, n_nodes, d))
    if drift.is_zero:
        return VectorField(grid, values)
    times = tg.times
    dt = tg.dt
    scale = 1.0 / (1.0 + config.C_b)
    eye = sp.identity(n_nodes, format="csc")

    b_next, a_next = op.coefficients(drift, diff, times[-1])
    A_next = op.assemble(b_next, a_next)
    lu, lu_key = None, None
    for k in range(tg.n - 1, -1, -1):
        b_k, a_k = op.coefficients(drift, diff, times[k])
        same = np.array_equal(b_k, b_next) and np.array_equal(a_k, a_next)
        A_k = A_next if same else op.assemble(b_k, a_k)
        if lu is None or lu_key is not A_k:
            lu = splu((eye - theta * dt * A_k).tocsc())
            lu_key = A_k
        rhs = (values[k + 1] + (1 - theta) * dt * (A_next @ values[k + 1])
               + dt * scale * (theta * b_k + (1 - theta) * b_next))
        values[k] = lu.solve(rhs)
        if not np.all(np.isfinite(values[k])):
            raise SolverError(f"non-finite solution at time level {k}")
        b_next, a_next, A_next = b_k, a_k, A_k
    return VectorField(grid, values)


def _singular_mask(drift, t, grid, margin, jump_threshold):
    """Nodes within ``margin`` of a jump of the drift along any grid axis."""
    nodes = grid.nodes
    n1 = grid.m + 1
    b = np.asarray(drift.func(t, nodes), dtype=float).reshape(grid.shape + (-1,))
    jump = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        big = np.linalg.norm(np.diff(b, axis=ax), axis=-1) > jump_threshold
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        jump[tuple(lo)] |= big
        jump[tuple(hi)] |= big
    if not jump.any():
        return np.zeros(n1**grid.dim, dtype=bool)
    width = int(math.ceil(margin / grid.h - 1e-9))
    near = jump.copy()
    for ax in range(grid.dim):
        grown = near.copy()
        for sh in range(1, width + 1):
            grown |= np.roll(near, sh, axis=ax) | np.roll(near, -sh, axis=ax)
        near = grown
    return near.ravel()


def pde_residual(u, config, margin=None, singular_margin=0.2, jump_threshold=None):
    """Residual of the continuous PDE evaluated on a grid solution.

    Uses a stencil independent of the solver: three-level central time
    difference at level ``k`` with fourth-order central space differences
    (second-order ``np.gradient`` stencils in 2D).  Excluded nodes: the
    boundary layer (or ``margin``), the two extreme time levels, and nodes
    within ``singular_margin`` of a drift discontinuity, where ``u`` is only
    once differentiable in space and no pointwise residual exists.  A
    discontinuity is a jump between neighbouring nodes larger than
    ``jump_threshold`` (default ``sqrt(h) * max(1, |b|_inf)``).

    Returns the maximum absolute residual over the remaining nodes.
    """
    g = u.grid
    tg = g.time
    if tg.n < 2:
        raise ValueError("need at least two time steps")
    if jump_threshold is None:
        bound = config.drift.sup_bound or 1.0
        jump_threshold = math.sqrt(g.h) * max(1.0, bound)
    keep = g.interior_mask(margin)
    h, dt = g.h, tg.dt
    n1 = g.m + 1
    idx = np.array(np.unravel_index(np.arange(n1**g.dim), g.shape)).T
    keep &= np.all((idx >= 2) & (idx <= n1 - 3), axis=1)
    scale = 1.0 / (1.0 + config.C_b)
    nodes = g.nodes
    worst = 0.0
    for k in range(1, tg.n):
        t = tg.times[k]
        mask = keep & ~_singular_mask(config.drift, t, g, singular_margin, jump_threshold)
        if not mask.any():
            continue
        b = np.asarray(config.drift.func(t, nodes), dtype=float)
        s = config.diffusion.matrix(t, nodes)
        a = np.einsum("nij,nkj->nik", s, s)
        ut = (u.values[k + 1] - u.values[k - 1]) / (2 * dt)
        for c in range(u.components):
            w = u.values[k, :, c]
            if g.dim == 1:
                du = np.zeros_like(w)
                d2u = np.zeros_like(w)
                du[2:-2] = (-w[4:] + 8 * w[3:-1] - 8 * w[1:-3] + w[:-4]) / (12 * h)
                d2u[2:-2] = (-w[4:] + 16 * w[3:-1] - 30 * w[2:-2] + 16 * w[1:-3] - w[:-4]) / (12 * h * h)
                r = ut[:, c] + b[:, 0] * du + 0.5 * a[:, 0, 0] * d2u + scale * b[:, c]
            else:
                w = w.reshape(n1, n1)
                gx, gy = np.gradient(w, h, edge_order=2)
                gxx = np.gradient(gx, h, axis=0, edge_order=2).ravel()
                gyy = np.gradient(gy, h, axis=1, edge_order=2).ravel()
                gxy = np.gradient(gx, h, axis=1, edge_order=2).ravel()
                r = (ut[:, c] + b[:, 0] * gx.ravel() + b[:, 1] * gy.ravel()
                     + 0.5 * (a[:, 0, 0] * gxx + 2 * a[:, 0, 1] * gxy + a[:, 1, 1] * gyy)
                     + scale * b[:, c])
            worst = max(worst, float(np.max(np.abs(r[mask]))))
    return worst


# -- gradient bounds and the map Phi -----------------------------------------

def gradient_field(u):
    """Central-difference spatial gradient, shape ``(n_t + 1, n_nodes, m, dim)``.

    Boundary nodes get the Neumann value 0 in the normal direction.
    """
    g = u.grid
    n1 = g.m + 1
    nt = u.values.shape[0]
    comps = u.components
    grid_vals = u.values.reshape((nt,) + g.shape + (comps,))
    out = np.zeros((nt,) + g.shape + (comps, g.dim))
    for ax in range(g.dim):
        sl_c = [slice(None)] * (g.dim + 2)
        sl_p = list(sl_c)
        sl_m = list(sl_c)
        sl_c[ax + 1] = slice(1, -1)
        sl_p[ax + 1] = slice(2, None)
        sl_m[ax + 1] = slice(None, -2)
        out[tuple(sl_c) + (ax,)] = (grid_vals[tuple(sl_p)] - grid_vals[tuple(sl_m)]) / (2 * g.h)
    return out.reshape(nt, n1**g.dim, comps, g.dim)


@dataclass
class GradientReport:
    sup_grad: float
    bound: float
    tolerance: float
    passed: bool


def gradient_bound_check(u, C_b, tol=None):
    """Check ``|grad u^i| <= C_b / (1 + C_b)`` at interior nodes for all times.

    ``tol`` defaults to ``10 h``.
    """
    g = u.grid
    tol = 10 * g.h if tol is None else tol
    grad = gradient_field(u)
    mask = g.interior_mask()
    norms = np.linalg.norm(grad[:, mask], axis=-1)
    sup = float(norms.max()) if norms.size else 0.0
    bound = C_b / (1.0 + C_b)
    return GradientReport(sup, bound, tol, sup <= bound + tol)


def solve_with_gradient_bound(config, grid, max_rounds=10, tol=None):
    """Solve, and double ``C_b`` until the gradient bound holds (at most ``max_rounds``).

    Returns ``(u, config_used, report, rounds)``.  Raises ``SolverError`` if
    the bound still fails after the last round.
    """
    cfg = config if config.C_b > 0 else config.with_C_b(1.0)
    if config.drift.is_zero:
        cfg = config
    for rnd in range(1, max_rounds + 1):
        u = zvonkin_solve(cfg, grid)
        rep = gradient_bound_check(u, cfg.C_b, tol)
        if rep.passed:
            return u, cfg, rep, rnd
        cfg = cfg.with_C_b(2.0 * cfg.C_b)
    raise SolverError(
        f"gradient bound still violated after {max_rounds} rounds "
        f"(sup_grad={rep.sup_grad:.4g}, bound={rep.bound:.4g})"
    )


class PhiField:
    """The space transform ``Phi(t, x) = x / (1 + C_b) + u(t, x)``.

    With ``u`` solving the normalised PDE (source ``b / (1 + C_b)``), this
    ``Phi`` solves ``dPhi/dt + L Phi = 0`` with ``Phi(T, x) = x / (1 + C_b)``,
    so ``Phi(t, X_t)`` carries no drift.  For ``C_b = 0`` it is ``x + u``.
    Off the box ``u`` is extended by its boundary value; the linear part is exact.
    """

    def __init__(self, u, C_b=0.0):
        if C_b < 0:
            raise ValueError("C_b must be non-negative")
        self.u = u
        self.C_b = float(C_b)
        self.grid = u.grid
        self.scale = 1.0 / (1.0 + self.C_b)

    @property
    def values(self):
        return self.scale * self.grid.nodes[None, :, :] + self.u.values

    def __call__(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.scale * x + self.u(t, x)

    def outside(self, x):
        return self.u.outside(x)

    def jacobian_nodes(self):
        """``dPhi^i/dx^j`` at every node and level, shape ``(n_t + 1, n_nodes, d, d)``."""
        return gradient_field(self.u) + self.scale * np.eye(self.grid.dim)

    def singular_value_bounds(self):
        """Smallest and largest singular value of the Jacobian over all nodes."""
        sv = np.linalg.svd(self.jacobian_nodes(), compute_uv=False)
        return float(sv.min()), float(sv.max())


def build_phi(u, C_b=0.0):
    return PhiField(u, C_b)


def invert_phi(phi, y, t, damping=1.0, tol=1e-10, max_iter=1000):
    """Solve ``Phi(t, x) = y`` by the damped fixed point ``x <- x - theta (Phi(t, x) - y)``.

    ``theta = damping * 2 / (s_min + s_max)`` from the Jacobian's singular
    value range, which makes the map a contraction with factor
    ``(s_max - s_min) / (s_max + s_min)`` for monotone 1D maps.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if not hasattr(phi, "_theta"):
        lo, hi = phi.singular_value_bounds()
        if lo <= 0:
            raise SolverError("Phi has a singular Jacobian on the grid")
        phi._theta = 2.0 / (lo + hi)
    theta = damping * phi._theta
    x = y / phi.scale
    delta = np.inf
    for _ in range(max_iter):
        step = theta * (phi(t, x) - y)
        x = x - step
        delta = float(np.max(np.abs(step))) if x.size else 0.0
        if delta <= tol:
            return x
    raise SolverError(f"inverse map did not converge (last step {delta:.3g})")


def psi_lipschitz(phi, margin=None):
    """Measured Lipschitz constant of ``Psi = Phi^{-1}`` over interior nodes.

    In 1D this is the reciprocal of the smallest forward difference quotient
    of ``Phi``; in 2D the largest spectral norm of the inverse Jacobian.
    """
    g = phi.grid
    if g.dim == 1:
        x = g.axis
        keep = np.abs(x) <= g.L - (g.boundary_layer if margin is None else margin) + 1e-12
        pairs = keep[:-1] & keep[1:]
        slopes = np.diff(phi.values[:, :, 0], axis=1) / g.h
        smin = float(slopes[:, pairs].min())
        if smin <= 0:
            raise SolverError("Phi is not increasing on the grid")
        return 1.0 / smin
    jac = phi.jacobian_nodes()[:, g.interior_mask(margin)]
    inv = np.linalg.inv(jac.reshape(-1, g.dim, g.dim))
    return float(spectral_norm(inv).max())


@dataclass
class BiLipschitzReport:
    passed: bool
    n_pairs: int
    lower: float
    upper: float
    min_ratio: float
    max_ratio: float
    violations: list = field(default_factory=list)


def phi_bilipschitz_check(phi, C_b, n_pairs=10_000, rng=None, tol=None, t=None):
    """Sampled check of ``|x-y|/(1+C_b) <= |Phi(x)-Phi(y)| <= (1+2C_b)/(1+C_b) |x-y|``.

    Pairs are drawn uniformly in the interior box at uniformly drawn grid
    times (or at fixed ``t``).  ``tol`` is a relative interpolation allowance
    (default ``10 h``).  Violating pairs are returned in the report.
    """
    g = phi.grid
    rng = np.random.default_rng(0) if rng is None else rng
    tol = 10 * g.h if tol is None else tol
    half = g.L - g.boundary_layer
    lower = 1.0 / (1.0 + C_b)
    upper = (1.0 + 2.0 * C_b) / (1.0 + C_b)
    xs = rng.uniform(-half, half, size=(n_pairs, g.dim))
    ys = rng.uniform(-half, half, size=(n_pairs, g.dim))
    if t is None:
        ks = rng.integers(0, g.time.n + 1, size=n_pairs)
    else:
        ks = None
    ratios = np.empty(n_pairs)
    if ks is None:
        diff = phi(t, xs) - phi(t, ys)
        ratios[:] = np.linalg.norm(diff, axis=1) / np.linalg.norm(xs - ys, axis=1)
    else:
        times = g.time.times
        for k in np.unique(ks):
            sel = ks == k
            diff = phi(times[k], xs[sel]) - phi(times[k], ys[sel])
            ratios[sel] = np.linalg.norm(diff, axis=1) / np.linalg.norm(xs[sel] - ys[sel], axis=1)
    bad = (ratios < lower * (1 - tol)) | (ratios > upper * (1 + tol))
    violations = [(xs[i].tolist(), ys[i].tolist(), float(ratios[i])) for i in np.flatnonzero(bad)[:20]]
    return BiLipschitzReport(not bad.any(), n_pairs, lower, upper,
                             float(ratios.min()), float(ratios.max()), violations)


# -- transformed diffusion ----------------------------------------------------

class TransformedDiffusion:
    """``sigma_tilde(t, y) = (D Phi sigma)(t, Psi(t, y))``.

    ``D Phi`` is the Jacobian ``dPhi^i / dx^j`` (central differences of
    ``u`` plus the linear part), interpolated like the other grid fields.
    Points ``y`` whose preimage falls outside the box use the boundary
    extension and are counted in ``n_flagged``.
    """

    def __init__(self, sigma, phi):
        self.sigma = sigma
        self.phi = phi
        g = phi.grid
        self.grid = g
        jac = phi.jacobian_nodes()
        self._jac = VectorField(g, jac.reshape(jac.shape[0], -1, g.dim * g.dim))
        self.n_flagged = 0
        C_b = phi.C_b
        self.sup_bound_declared = sigma.sup_bound * (1.0 + 2.0 * C_b) / (1.0 + C_b)

    def jacobian(self, t, x):
        return self._jac(t, x).reshape(-1, self.grid.dim, self.grid.dim)

    def evaluate(self, t, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        x = invert_phi(self.phi, y, t)
        self.n_flagged += int(self.phi.outside(x).sum())
        return np.einsum("nij,njk->nik", self.jacobian(t, x), self.sigma.matrix(t, x))

    def grid_sup(self, margin=None):
        """Sup over interior nodes and time levels of ``|D Phi sigma|`` (spectral)."""
        g = self.grid
        mask = g.interior_mask(margin)
        nodes = g.nodes[mask]
        best = 0.0
        times = g.time.times
        for k in range(g.time.n + 1):
            jac = self._jac.values[k, mask].reshape(-1, g.dim, g.dim)
            mats = np.einsum("nij,njk->nik", jac, self.sigma.matrix(times[k], nodes))
            best = max(best, float(spectral_norm(mats).max()))
        return best

    def field(self):
        lo, _ = self.phi.singular_value_bounds()
        return DiffusionField(self.evaluate, self.grid.dim,
                              sup_bound=self.sup_bound_declared,
                              ellipticity=self.sigma.ellipticity * lo,
                              name="transformed")


def transformed_sigma(sigma, phi):
    return TransformedDiffusion(sigma, phi)


# -- martingale diagnostics ---------------------------------------------------

@dataclass
class MartingaleReport:
    n_paths: int
    n_blocks: int
    mean_pvalues: np.ndarray
    slope_pvalues: np.ndarray
    level: float
    passed: bool
    min_adjusted_p: float
    block_means: np.ndarray


def driftless_residual_check(phi, drift, diff, x0, grid, noise, n_paths=100_000,
                             n_blocks=10, level=0.01, chunk=20_000):
    """Test that ``Y_k = Phi(t_k, X_k)`` has martingale increments.

    ``X`` is simulated under the original drifted model.  For each block of
    time steps: a two-sided z-test that the mean block increment of every
    component is 0, and a regression of the block increment on the block's
    starting value (slope 0 expected; skipped for the deterministic first
    block).  Bonferroni over all tests; passes iff every adjusted p-value is at
    least ``level``.
    """
    if grid.n % n_blocks:
        raise ValueError("number of steps must be a multiple of n_blocks")
    stride = grid.n // n_blocks
    times = grid.times[::stride]
    ys = []
    done = 0
    stream = 0
    while done < n_paths:
        size = min(chunk, n_paths - done)
        xs = simulate_batch(drift, diff, x0, grid, noise.spawn(noise.stream + stream),
                            size, record_every=stride)
        ys.append(np.stack([phi(times[j], xs[:, j]) for j in range(xs.shape[1])], axis=1))
        done += size
        stream += 1
    y = np.concatenate(ys)
    inc = np.diff(y, axis=1)
    d = y.shape[2]
    mean_p = np.empty((n_blocks, d))
    slope_p = np.full((n_blocks, d), np.nan)
    means = inc.mean(axis=0)
    for blk in range(n_blocks):
        for c in range(d):
            z = inc[:, blk, c]
            se = z.std(ddof=1) / np.sqrt(z.size)
            mean_p[blk, c] = 2 * stats.norm.sf(abs(z.mean()) / se) if se > 0 else (
                1.0 if z.mean() == 0 else 0.0)
            start = y[:, blk, c]
            if np.ptp(start) > 0:
                slope_p[blk, c] = stats.linregress(start, z).pvalue
    pv = np.concatenate([mean_p.ravel(), slope_p[~np.isnan(slope_p)]])
    adjusted = float(min(1.0, np.min(pv) * pv.size))
    return MartingaleReport(n_paths, n_blocks, mean_p, slope_p, level,
                            adjusted >= level, adjusted, means)


def export_field_csv(u, path, time_stride=1):
    """Write ``t, x(, y), u1(, u2), grad`` rows; ``grad`` is the largest component gradient norm."""
    g = u.grid
    grad = np.linalg.norm(gradient_field(u), axis=-1).max(axis=-1)
    nodes = g.nodes
    space = ["x", "y"][: g.dim]
    comps = [f"u{i + 1}" for i in range(u.components)]
    times = g.time.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + space + comps + ["grad"])
        for k in range(0, g.time.n + 1, time_stride):
            for j in range(nodes.shape[0]):
                w.writerow([repr(float(times[k]))] + [repr(float(v)) for v in nodes[j]]
                           + [repr(float(v)) for v in u.values[k, j]] + [repr(float(grad[k, j]))])

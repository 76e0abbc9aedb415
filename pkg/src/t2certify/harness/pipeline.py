"""End-to-end pipelines: certificates, concentration tables, transform diagnostics."""

import math
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import stats

from .. import __version__
from ..constants import ConstantInputs, T2Certificate, lipschitz_transfer, optimize_epsilon
from ..girsanov import mc_estimate, simulate_coupled
from ..sde import NoiseSource, SimulationError, TimeGrid, lipschitz_functional_eval, simulate_batch
from ..transport import EmpiricalMeasure, empirical_w2, summarize_rounds
from ..zvonkin import (PdeGrid, SolverError, ZvonkinConfig, build_phi, driftless_residual_check,
                       invert_phi, pde_residual, phi_bilipschitz_check, psi_lipschitz,
                       solve_with_gradient_bound, transformed_sigma, zvonkin_solve)
from .config import ConfigError
from .models import build_model, build_tilt

CERTIFICATE_HEADER = ("experiment_id,model,T,n_steps,N,C,epsilon_star,C_bdg,H,H_stderr,"
                      "w2_upper,w2_upper_stderr,w2_emp,w2_emp_stderr,slack_ratio,verdict")
CONCENTRATION_HEADER = "r,empirical_tail,ci_hi,bound,pass"
CHECK_HEADER = "check,value,threshold,pass"


class StageError(RuntimeError):
    """A pipeline stage failed; ``numerical`` marks simulation or solver failures."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.numerical = isinstance(cause, (SimulationError, SolverError, FloatingPointError))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # tag and re-raise
        raise StageError(name, exc) from exc


def worker_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("T2_CERTIFY_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"T2_CERTIFY_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def stream_base(experiment_id):
    """Per-experiment stream offset; chunk ``j`` uses stream ``base + j``."""
    return zlib.crc32(experiment_id.encode()) << 32


@dataclass
class CertificateRow:
    experiment_id: str
    model: str
    T: float
    n_steps: int
    cert: T2Certificate
    reference: bool = False

    def csv(self):
        c = self.cert
        vals = [self.experiment_id, self.model, _num(self.T), str(self.n_steps), str(c.N),
                _num(c.C), _num(c.epsilon_star), _num(c.c_bdg), _num(c.H), _num(c.H_stderr),
                _num(c.w2_upper), _num(c.w2_upper_stderr), _num(c.w2_emp), _num(c.w2_emp_stderr),
                _num(c.slack_ratio), "pass" if c.verdict else "fail"]
        return ",".join(vals)


def _num(x):
    return repr(float(x))


@dataclass
class Report:
    config_text: str
    certificates: List[CertificateRow] = field(default_factory=list)
    concentration: list = field(default_factory=list)  # (r, tail, ci_hi, bound, pass)
    checks: list = field(default_factory=list)  # (name, value, threshold, pass)
    notes: list = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = __version__

    @property
    def passed(self):
        ok = all(r.cert.verdict for r in self.certificates if not r.reference)
        ok &= all(row[4] for row in self.concentration)
        ok &= all(row[3] for row in self.checks)
        return ok

    def merge(self, other):
        self.certificates += other.certificates
        self.concentration += other.concentration
        self.checks += other.checks
        self.notes += other.notes
        return self


def write_report(report, out_dir):
    """Write the CSV sections present plus ``summary.txt``; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name, header, lines):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for line in lines:
                fh.write(line + "\n")
        written.append(path)

    if report.certificates:
        put("certificate.csv", CERTIFICATE_HEADER, [r.csv() for r in report.certificates])
    if report.concentration:
        put("concentration.csv", CONCENTRATION_HEADER,
            [f"{_num(r)},{_num(t)},{_num(hi)},{_num(b)},{'pass' if ok else 'fail'}"
             for r, t, hi, b, ok in report.concentration])
    if report.checks:
        put("checks.csv", CHECK_HEADER,
            [f"{name},{_num(v)},{_num(th)},{'pass' if ok else 'fail'}"
             for name, v, th, ok in report.checks])
    path = os.path.join(out_dir, "summary.txt")
    with open(path, "w") as fh:
        fh.write(f"t2certify {report.version}\n")
        fh.write(f"overall: {'pass' if report.passed else 'fail'}\n")
        fh.write(f"wall_clock_seconds: {report.wall_clock:.3f}\n")
        for note in report.notes:
            fh.write(f"note: {note}\n")
        fh.write("--- config ---\n")
        fh.write(report.config_text)
    written.append(path)
    return written


def config_from_summary(path):
    """Recover the echoed config from a ``summary.txt``."""
    from .config import parse_config
    with open(path) as fh:
        text = fh.read()
    return parse_config(text.split("--- config ---\n", 1)[1])


# -- constants ----------------------------------------------------------------

@dataclass
class TransformResult:
    u: object
    zcfg: ZvonkinConfig
    grad: object
    rounds: int
    phi: object
    lip_psi: float
    sigma_tilde_sup: float
    bilip: object


def _pde_grid(cfg, model):
    if model.dim > 2:
        raise ConfigError("the space transform is available for dimensions 1 and 2 only")
    tg = TimeGrid(cfg["grid.T"], cfg["zvonkin.n"])
    return PdeGrid(cfg["zvonkin.L"], cfg["zvonkin.h"], tg, dim=model.dim,
                   boundary_layer=cfg["zvonkin.boundary_layer"])


def solve_transform(cfg, model):
    grid = _pde_grid(cfg, model)
    zcfg = ZvonkinConfig(model.drift, model.diffusion, C_b=cfg["zvonkin.C_b"],
                         case=cfg["zvonkin.case"])
    u, zcfg, grad, rounds = _stage("zvonkin-solve", solve_with_gradient_bound, zcfg, grid,
                                   max_rounds=cfg["zvonkin.max_rounds"])
    phi = build_phi(u, zcfg.C_b)
    rng = np.random.Generator(np.random.Philox(key=cfg["run.seed"] | (0xB1 << 64)))
    bilip = _stage("bi-lipschitz", phi_bilipschitz_check, phi, zcfg.C_b,
                   n_pairs=cfg["zvonkin.pairs"], rng=rng)
    lip = _stage("inverse-lipschitz", psi_lipschitz, phi)
    sig = _stage("transformed-diffusion", lambda: transformed_sigma(model.diffusion, phi).grid_sup())
    return TransformResult(u, zcfg, grad, rounds, phi, lip, sig, bilip)


@dataclass
class ConstantResult:
    C: float
    epsilon: float
    at_boundary: bool
    transform: Optional[TransformResult] = None
    reference: Optional[object] = None  # untransformed optimum in transform mode


def _inputs(cfg, sigma_sup):
    override = cfg["constants.sigma_sup"]
    return ConstantInputs(cfg["grid.T"], override if override > 0 else sigma_sup,
                          cfg["constants.C_bdg"], cfg["constants.eps_min"])


def certified_constant(cfg, model=None):
    model = build_model(cfg) if model is None else model
    base = _stage("constant", optimize_epsilon, _inputs(cfg, model.sigma_sup))
    if not cfg["zvonkin.enabled"] or model.drift.is_zero:
        return ConstantResult(base.C, base.epsilon, base.at_boundary)
    tr = solve_transform(cfg, model)
    opt = _stage("constant", optimize_epsilon, _inputs(cfg, model.sigma_sup).with_sigma(tr.sigma_tilde_sup))
    C = lipschitz_transfer(opt.C, tr.lip_psi)
    return ConstantResult(C, opt.epsilon, opt.at_boundary, tr, base)


# -- certificates ---------------------------------------------------------------

def _chunk_sizes(N, B):
    sizes = [B] * (N // B)
    if N % B:
        sizes.append(N % B)
    return sizes


def run_verify_t2(cfg, threads=None, constant=None):
    """Simulate coupled pairs, estimate H and W2, and emit the certificate row(s)."""
    t0 = time.perf_counter()
    model = _stage("model", build_model, cfg)
    tilt = _stage("tilt", build_tilt, cfg, model.dim)
    const = certified_constant(cfg, model) if constant is None else constant
    grid = TimeGrid(cfg["grid.T"], cfg["grid.n"])
    N, B, R = cfg["samples.N"], cfg["samples.B"], cfg["samples.R"]
    base = stream_base(cfg["experiment.id"])
    seed = cfg["run.seed"]
    sizes = _chunk_sizes(N, B)

    def chunk(j):
        noise = NoiseSource(seed, base + j)
        cp = simulate_coupled(model.drift, model.diffusion, tilt, model.x0, grid, noise,
                              n_paths=sizes[j], keep_paths=j < R)
        w2 = None
        if j < R:
            w2 = empirical_w2(EmpiricalMeasure(cp.x), EmpiricalMeasure(cp.y))
        return cp.entropy_terms, cp.sup_gap2, w2

    workers = min(worker_count(threads), len(sizes))
    if workers == 1:
        results = [_stage("simulate", chunk, j) for j in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = _stage("simulate", lambda: list(pool.map(chunk, range(len(sizes)))))

    ent = np.concatenate([r[0] for r in results])
    gap2 = np.concatenate([r[1] for r in results])
    w2 = summarize_rounds([r[2] for r in results[:R]])
    H = mc_estimate(ent)
    up2 = mc_estimate(gap2)
    w2_up = math.sqrt(up2.mean)
    w2_up_se = up2.stderr / (2.0 * w2_up) if w2_up > 0 else 0.0

    def cert(C, eps):
        return T2Certificate(C=C, epsilon_star=eps, H=H.mean, H_stderr=H.stderr,
                             w2_upper=w2_up, w2_upper_stderr=w2_up_se,
                             w2_emp=w2.mean, w2_emp_stderr=w2.stderr,
                             w2_emp_sq=w2.sq_mean, w2_emp_sq_stderr=w2.sq_stderr,
                             N=N, c_bdg=cfg["constants.C_bdg"])

    eid = cfg["experiment.id"]
    report = Report(cfg.dumps())
    rows = [CertificateRow(eid, model.name, cfg["grid.T"], grid.n, cert(const.C, const.epsilon))]
    if const.transform is not None:
        ref = const.reference
        rows.append(CertificateRow(eid + "+untransformed", model.name, cfg["grid.T"], grid.n,
                                   cert(ref.C, ref.epsilon), reference=True))
        tr = const.transform
        report.notes.append(f"{eid}: transform C_b={tr.zcfg.C_b!r} rounds={tr.rounds} "
                            f"lip_psi={tr.lip_psi!r} sigma_tilde_sup={tr.sigma_tilde_sup!r}")
    if const.at_boundary:
        report.notes.append(f"{eid}: epsilon optimum at the window boundary")
    report.certificates = rows
    report.wall_clock = time.perf_counter() - t0
    return report


# -- concentration --------------------------------------------------------------

def run_concentration(cfg, functional=None, r_grid=None, C=None, chunk=10_000):
    """Compare empirical centred tails of a 1-Lipschitz functional with ``exp(-r^2 / C)``.

    A grid point fails only if the lower end of the exact binomial 99% interval
    exceeds the bound.
    """
    t0 = time.perf_counter()
    functional = cfg["concentration.functional"] if functional is None else functional
    r_grid = cfg["concentration.r"] if r_grid is None else r_grid
    model = _stage("model", build_model, cfg)
    if C is None:
        C = certified_constant(cfg, model).C
    grid = TimeGrid(cfg["grid.T"], cfg["grid.n"])
    N = cfg["concentration.samples"]
    every = grid.n if functional == "terminal" else 1
    base = stream_base(cfg["experiment.id"] + "/concentration")
    vals = []
    for j, size in enumerate(_chunk_sizes(N, chunk)):
        xs = _stage("simulate", simulate_batch, model.drift, model.diffusion, model.x0, grid,
                    NoiseSource(cfg["run.seed"], base + j), size, record_every=every)
        vals.append(_stage("functional", lipschitz_functional_eval, functional, xs,
                           cfg["concentration.coord"]))
    f = np.concatenate(vals)
    dev = f - f.mean()
    report = Report(cfg.dumps())
    for r in r_grid:
        hits = int(np.count_nonzero(dev >= r))
        ci = stats.binomtest(hits, N).proportion_ci(0.99, method="exact")
        bound = math.exp(-r * r / C)
        report.concentration.append((float(r), hits / N, float(ci.high), bound, ci.low <= bound))
    report.notes.append(f"concentration: functional={functional} C={C!r} N={N}")
    report.wall_clock = time.perf_counter() - t0
    return report


# -- transform diagnostics ------------------------------------------------------

class _Identity:
    def __call__(self, t, x):
        return np.atleast_2d(np.asarray(x, dtype=float))


def run_zvonkin_diagnostics(cfg, refine=True):
    """Solve, check gradient and bi-Lipschitz bounds, residuals and the martingale property."""
    t0 = time.perf_counter()
    model = _stage("model", build_model, cfg)
    tr = solve_transform(cfg, model)
    grid = tr.u.grid
    report = Report(cfg.dumps())
    checks = report.checks

    res = _stage("pde-residual", pde_residual, tr.u, tr.zcfg)
    checks.append(("pde_residual", res, 1e-3, res <= 1e-3))
    if refine:
        fine = _stage("zvonkin-solve", zvonkin_solve, tr.zcfg, grid.refined())
        res_f = _stage("pde-residual", pde_residual, fine, tr.zcfg)
        ratio = res / res_f if res_f > 0 else math.inf
        checks.append(("pde_residual_refined", res_f, res / 3.0, ratio >= 3.0))
    g = tr.grad
    checks.append(("sup_grad", g.sup_grad, g.bound + g.tolerance, g.passed))
    checks.append(("C_b", tr.zcfg.C_b, math.nan, True))
    checks.append(("bilipschitz_min_ratio", tr.bilip.min_ratio, tr.bilip.lower, tr.bilip.passed))
    checks.append(("bilipschitz_max_ratio", tr.bilip.max_ratio, tr.bilip.upper, tr.bilip.passed))

    rng = np.random.Generator(np.random.Philox(key=cfg["run.seed"] | (0xB2 << 64)))
    half = grid.L - grid.boundary_layer
    xs = rng.uniform(-half, half, size=(2000, grid.dim))
    err = 0.0
    for k in (0, grid.time.n // 2, grid.time.n):
        t = grid.time.times[k]
        back = _stage("inverse-map", invert_phi, tr.phi, tr.phi(t, xs), t, tol=1e-12)
        err = max(err, float(np.max(np.abs(back - xs))))
    checks.append(("roundtrip_error", err, 1e-8, err <= 1e-8))
    checks.append(("lip_psi", tr.lip_psi, math.nan, True))
    checks.append(("sigma_tilde_sup", tr.sigma_tilde_sup, math.nan, True))

    noise = NoiseSource(cfg["run.seed"], stream_base(cfg["experiment.id"] + "/martingale"))
    args = (model.drift, model.diffusion, model.x0, grid.time, noise)
    kw = dict(n_paths=cfg["zvonkin.n_paths"], n_blocks=cfg["zvonkin.blocks"])
    mart = _stage("martingale", driftless_residual_check, tr.phi, *args, **kw)
    checks.append(("martingale_min_adjusted_p", mart.min_adjusted_p, mart.level, mart.passed))
    if not model.drift.is_zero:
        # the untransformed state carries the drift, so this test must reject
        ctrl = _stage("martingale", driftless_residual_check, _Identity(), *args, **kw)
        checks.append(("negative_control_min_adjusted_p", ctrl.min_adjusted_p, ctrl.level,
                       not ctrl.passed))
    report.wall_clock = time.perf_counter() - t0
    return report


# -- particle systems -----------------------------------------------------------

def run_particle_checks(cfg, n_states=1000):
    """Algebraic identities of the particle drifts on random states."""
    from ..particles import RankModelSpec, empirical_quantile, rank_based_drift
    report = Report(cfg.dumps())
    rng = np.random.Generator(np.random.Philox(key=cfg["run.seed"] | (0xB3 << 64)))
    n = cfg["model.particles"]
    deltas = np.asarray(cfg["model.deltas"], dtype=float)
    if deltas.size != n:
        deltas = rng.standard_normal(n)
    spec = RankModelSpec(n, deltas=deltas)
    states = rng.standard_normal((n_states, n))
    drift = rank_based_drift(spec, 0.0, states)
    perms = np.argsort(rng.random((n_states, n)), axis=1)
    permuted = rank_based_drift(spec, 0.0, np.take_along_axis(states, perms, 1))
    equi = float(np.max(np.abs(permuted - np.take_along_axis(drift, perms, 1))))
    report.checks.append(("rank_equivariance_error", equi, 0.0, equi == 0.0))
    cons = float(np.max(np.abs(drift.sum(axis=1) - deltas.sum())))
    report.checks.append(("rank_conservation_error", cons, 1e-12, cons <= 1e-12))
    alpha = cfg["model.alpha"]
    q = empirical_quantile(states, alpha)
    # definition: smallest state value u with #{x_i <= u} / n >= alpha
    counts = (states[:, None, :] <= states[:, :, None]).sum(axis=2) / n
    cand = np.where(counts >= alpha, states, np.inf).min(axis=1)
    qerr = float(np.max(np.abs(q - cand)))
    report.checks.append(("quantile_definition_error", qerr, 0.0, qerr == 0.0))
    return report


def run_particles(cfg, threads=None):
    """Particle algebra checks plus one certificate per particle model."""
    t0 = time.perf_counter()
    report = run_particle_checks(cfg)
    from .models import PARTICLE_MODELS
    for name in PARTICLE_MODELS:
        sub = cfg.copy().set("model.name", name)
        sub.set("experiment.id", f"{cfg['experiment.id']}-{name}")
        report.merge(run_verify_t2(sub, threads=threads))
    report.wall_clock = time.perf_counter() - t0
    return report

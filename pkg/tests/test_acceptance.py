"""Acceptance criteria, one test each; every test logs a PASS/FAIL line."""

import itertools
import os
import time

import mpmath
import numpy as np
from scipy import stats

from t2certify.constants import ConstantInputs, optimize_epsilon, t2_constant_at
from t2certify.girsanov import (constant_tilt, coupling_sup_distance, entropy_of_tilt,
                                simulate_coupled, time_tilt)
from t2certify.harness import load_config
from t2certify.harness.cli import main
from t2certify.harness.pipeline import run_concentration, run_verify_t2, run_zvonkin_diagnostics
from t2certify.particles import (RankModelSpec, conditional_drift_estimate, empirical_quantile,
                                 rank_based_drift)
from t2certify.sde import NoiseSource, TimeGrid, identity_diffusion, sign_drift, simulate_batch, zero_drift
from t2certify.transport import EmpiricalMeasure, empirical_w2

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def cfg_path(name):
    return os.path.join(CONFIGS, name)


def test_constant_formula(record):
    t0 = time.perf_counter()
    mpmath.mp.dps = 40
    got = t2_constant_at(0.5, ConstantInputs(0.1, 1.0, 1.0))
    exact = 4 * mpmath.exp(mpmath.mpf("3.6"))
    rel = float(abs(mpmath.mpf(got) - exact) / exact)
    zero_ok = all(t2_constant_at(e, ConstantInputs(0.0, 1.7)) == 2 * 1.7**2 / (1 - e)
                  for e in (0.001, 0.25, 0.5, 0.999))
    worst = 0.0
    for T, sig, cb in [(0.1, 1.0, 1.0), (0.0, 1.0, 2.0), (0.05, 2.0, 2.0), (0.5, 0.7, 0.5)]:
        inp = ConstantInputs(T, sig, cb)
        grid = np.linspace(inp.eps_min, 1 - inp.eps_min, 10_000)
        best = min(t2_constant_at(e, inp) for e in grid)
        worst = max(worst, optimize_epsilon(inp).C / best - 1)
    elapsed = time.perf_counter() - t0
    ok = rel <= 1e-12 and zero_ok and worst <= 1e-12 and elapsed < 1.0
    record(1, ok, f"rel err {rel:.1e}, T=0 exact {zero_ok}, optimum excess over grid "
                  f"{worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_entropy_identity(record):
    t0 = time.perf_counter()
    g = TimeGrid(0.8, 400)
    c = np.array([0.7, -1.1])
    exact = 0.5 * float(c @ c) * 0.8
    worst, se_max = 0.0, 0.0
    for seed in (0, 1, 2**40 + 3):
        cp = simulate_coupled(zero_drift(2), identity_diffusion(2), constant_tilt(c),
                              [0.0, 0.0], g, NoiseSource(seed), n_paths=64)
        est = entropy_of_tilt(None, cp)
        worst = max(worst, abs(est.mean - exact) / exact)
        se_max = max(se_max, est.stderr)
    tilt = time_tilt(lambda t: np.array([t, 0.0]), 2, 1.0)
    errs = []
    for n in (100, 1000, 10_000):
        cp = simulate_coupled(zero_drift(2), identity_diffusion(2), tilt, [0.0, 0.0],
                              TimeGrid(1.0, n), NoiseSource(5), n_paths=1)
        errs.append(abs(entropy_of_tilt(tilt, cp).mean - 1 / 6))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    elapsed = time.perf_counter() - t0
    ok = (worst <= 1e-14 and se_max == 0.0 and all(8 <= r <= 12 for r in ratios)
          and elapsed < 10)
    record(2, ok, f"constant tilt rel err {worst:.1e} stderr {se_max}; time tilt errors "
                  f"{', '.join(f'{e:.2e}' for e in errs)} (ratios {ratios[0]:.2f}, "
                  f"{ratios[1]:.2f}), {elapsed:.1f}s")
    assert ok


def test_coupling_exactness(record):
    t0 = time.perf_counter()
    T, c = 0.9, 1.7
    g = TimeGrid(T, 1000)
    cp = simulate_coupled(zero_drift(1), identity_diffusion(1), constant_tilt([c]), [0.0], g,
                          NoiseSource(77), n_paths=200)
    gap = cp.x[:, :, 0] - cp.y[:, :, 0]
    path_err = float(np.max(np.abs(gap - c * g.times)))
    sup = coupling_sup_distance(cp)
    rel = abs(sup.mean - c * c * T * T) / (c * c * T * T)
    elapsed = time.perf_counter() - t0
    ok = path_err <= 1e-12 and rel <= 1e-13 and sup.stderr <= 1e-15 and elapsed < 10
    record(3, ok, f"max pathwise gap error {path_err:.1e}, sup-distance rel err {rel:.1e}, "
                  f"{elapsed:.1f}s")
    assert ok


def test_ot_solver_oracle(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for inst in range(100):
        n = 1 + inst % 6
        x = rng.standard_normal((n, 5, 2))
        y = rng.standard_normal((n, 5, 2)) + rng.uniform(-1, 1)
        cost = np.max(np.sum((x[:, None] - y[None]) ** 2, axis=-1), axis=-1)
        brute = min(sum(cost[i, p[i]] for i in range(n))
                    for p in itertools.permutations(range(n))) / n
        got = empirical_w2(EmpiricalMeasure(x), EmpiricalMeasure(y)) ** 2
        worst = max(worst, abs(got - brute) / brute)
    sym, tri = 0.0, -np.inf
    for _ in range(100):
        n = rng.integers(1, 7)
        a, b, c = (EmpiricalMeasure(rng.standard_normal((n, 5, 2)) * rng.uniform(0.2, 3))
                   for _ in range(3))
        ab, ba = empirical_w2(a, b), empirical_w2(b, a)
        sym = max(sym, abs(ab - ba))
        tri = max(tri, empirical_w2(a, c) - ab - empirical_w2(b, c))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and sym <= 1e-9 and tri <= 1e-9 and elapsed < 30
    record(4, ok, f"max rel deviation from brute force {worst:.1e}, asymmetry {sym:.1e}, "
                  f"worst triangle excess {tri:.1e}, {elapsed:.1f}s")
    assert ok


def test_end_to_end_certificates(record):
    t0 = time.perf_counter()
    bases = {"driftless": "driftless_shift.cfg", "sgn": "sgn_transform.cfg",
             "regime": "regime_transform.cfg", "rank": "rank5.cfg", "atlas": "atlas5.cfg",
             "quantile": "quantile5.cfg"}
    failed, rows = [], 0
    for model, fname in bases.items():
        for kind in ("constant", "time", "path"):
            cfg = load_config(cfg_path(fname)).override(
                [f"tilt.kind={kind}", "samples.N=10000", "grid.n=1000",
                 f"experiment.id={model}-{kind}"])
            assert cfg["grid.T"] <= 1.0
            rep = run_verify_t2(cfg)
            main_row = rep.certificates[0]
            rows += 1
            c = main_row.cert
            print(f"  {main_row.experiment_id}: W2^2={c.w2_emp_sq:.4g} H={c.H:.4g} "
                  f"C={c.C:.4g} {'pass' if c.verdict else 'fail'}")
            if not c.verdict:
                failed.append(main_row.experiment_id)
    elapsed = time.perf_counter() - t0
    ok = rows == 18 and not failed and elapsed < 15 * 60
    record(5, ok, f"{rows - len(failed)}/{rows} certificates pass"
                  f"{' (failed: ' + ', '.join(failed) + ')' if failed else ''}, {elapsed:.0f}s")
    assert ok


def test_zvonkin_suite(record):
    t0 = time.perf_counter()
    cfg = load_config(cfg_path("zvonkin_sgn.cfg"))
    assert (cfg["grid.T"], cfg["zvonkin.L"], cfg["zvonkin.h"], cfg["model.sigma"]) == (0.5, 6.0, 0.01, 1.0)
    rep = run_zvonkin_diagnostics(cfg)
    checks = {name: (value, thr, ok) for name, value, thr, ok in rep.checks}
    res, res_f = checks["pde_residual"][0], checks["pde_residual_refined"][0]
    grad_val, grad_thr, _ = checks["sup_grad"]
    parts = {
        "a": res <= 1e-3 and res / res_f >= 3.0,
        "b": grad_val <= grad_thr,
        "c": checks["bilipschitz_min_ratio"][2],
        "d": checks["roundtrip_error"][0] <= 1e-8,
        "e": checks["martingale_min_adjusted_p"][2]
             and checks["negative_control_min_adjusted_p"][2],
    }
    elapsed = time.perf_counter() - t0
    ok = all(parts.values()) and elapsed < 300
    record(6, ok, f"residual {res:.2e} (refined {res_f:.2e}, ratio {res / res_f:.2f}); "
                  f"sup grad {grad_val:.3f} <= {grad_thr:.3f}; "
                  f"roundtrip {checks['roundtrip_error'][0]:.1e}; martingale p "
                  f"{checks['martingale_min_adjusted_p'][0]:.3f}, control p "
                  f"{checks['negative_control_min_adjusted_p'][0]:.1e}; parts "
                  f"{''.join(k for k, v in parts.items() if v)} ok, {elapsed:.0f}s")
    assert ok


def test_concentration(record):
    t0 = time.perf_counter()
    cfg = load_config(cfg_path("concentration_driftless.cfg"))
    assert cfg["concentration.samples"] == 100_000 and cfg["model.name"] == "driftless"
    rep = run_concentration(cfg)
    T, sigma = cfg["grid.T"], cfg["model.sigma"]
    C = optimize_epsilon(ConstantInputs(T, sigma, cfg["constants.C_bdg"])).C
    ok = len(rep.concentration) == 4
    details = []
    for r, tail, ci_hi, bound, passed in rep.concentration:
        exact = stats.norm.sf(r / (sigma * np.sqrt(T)))
        slack = bound / exact
        ok &= passed and ci_hi <= bound and slack > 1
        details.append(f"r={r:g}: tail {tail:.2e} ci_hi {ci_hi:.2e} bound {bound:.3f} "
                       f"slack {slack:.2e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    record(7, ok, f"C={C:.3g}; " + "; ".join(details) + f"; {elapsed:.1f}s")
    assert ok


def test_particle_algebra(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    n = 5
    spec = RankModelSpec(n, deltas=rng.standard_normal(n))
    eq_err, cons_err = 0.0, 0.0
    for _ in range(1000):
        x = rng.standard_normal(n)
        p = rng.permutation(n)
        d = rank_based_drift(spec, 0.0, x)
        eq_err = max(eq_err, float(np.max(np.abs(rank_based_drift(spec, 0.0, x[p]) - d[p]))))
        cons_err = max(cons_err, abs(d.sum() - spec.deltas.sum()))
    q_bad = 0
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        x = rng.integers(-4, 5, size=m).astype(float)
        alpha = float(rng.choice([0.0, 1.0, rng.uniform(), int(rng.integers(0, m + 1)) / m]))
        direct = min(u for u in x if np.count_nonzero(x <= u) / m >= alpha)
        q_bad += empirical_quantile(x, alpha) != direct
    elapsed = time.perf_counter() - t0
    ok = eq_err == 0.0 and cons_err <= 1e-12 and q_bad == 0 and elapsed < 10
    record(8, ok, f"equivariance err {eq_err}, conservation err {cons_err:.1e}, "
                  f"quantile mismatches {q_bad}/1000, {elapsed:.1f}s")
    assert ok


def test_reproducibility(record, tmp_path, monkeypatch):
    t0 = time.perf_counter()
    max_threads = max(os.cpu_count() or 1, 4)
    outputs = []
    for threads in (1, 1, max_threads, max_threads):
        monkeypatch.setenv("T2_CERTIFY_THREADS", str(threads))
        out = tmp_path / f"run{len(outputs)}"
        code = main(["verify-t2", "--config", cfg_path("sgn_transform.cfg"), "--seed", "314",
                     "--out", str(out)])
        assert code == 0
        outputs.append((out / "certificate.csv").read_bytes())
    elapsed = time.perf_counter() - t0
    identical = all(o == outputs[0] for o in outputs)
    ok = identical and elapsed < 120
    record(9, ok, f"4 runs (threads 1, 1, {max_threads}, {max_threads}) byte-identical: "
                  f"{identical}, {elapsed:.0f}s")
    assert ok


def test_mimicking_recipe(record):
    t0 = time.perf_counter()
    T, n, stride = 1.0, 200, 10
    grid = TimeGrid(T, n)
    diff = identity_diffusion(1)
    rand = sign_drift(1)  # g(t) = sgn(X(t)) read off the simulated state
    xs = simulate_batch(rand, diff, [0.0], grid, NoiseSource(1, 0), 100_000, record_every=stride)
    slice_times = grid.times[::stride]
    samples = xs[:, :-1, 0].T if xs.shape[1] > slice_times.size else xs[:, :, 0].T
    samples = samples[: slice_times.size]
    bw = 0.05
    x_grid = np.arange(-4.0, 4.0 + 1e-9, bw)
    est = conditional_drift_estimate(slice_times, samples, np.sign(samples), bw, x_grid, 1.0)
    worst = 0.0
    for s in range(slice_times.size):
        lo, hi = samples[s].min(), samples[s].max()
        sel = (np.abs(x_grid) >= 3 * bw) & (x_grid >= lo) & (x_grid <= hi)
        if sel.any():
            worst = max(worst, float(np.max(np.abs(est.values[s, sel] - np.sign(x_grid[sel])))))
    # common random numbers: both samples use the same Brownian increments
    noise = NoiseSource(1, 1)
    a = simulate_batch(rand, diff, [0.0], grid, noise, 10_000, record_every=n)[:, -1, 0]
    b = simulate_batch(est.field(), diff, [0.0], grid, noise, 10_000, record_every=n)[:, -1, 0]
    ks = stats.ks_2samp(a, b).statistic
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.1 and ks <= 0.02 and elapsed < 300
    record(10, ok, f"max |b_hat - sgn| at |x|>=3bw {worst:.3f}, terminal KS {ks:.4f}, "
                   f"{elapsed:.0f}s")
    assert ok

"""Command line entry point: ``t2certify <subcommand> [options]``."""

import argparse
import os
import sys
import time

from ..sde import NoiseSource, TimeGrid, simulate_batch
from .config import ConfigError, ExperimentConfig, load_config
from .models import build_model
from .pipeline import (Report, StageError, _stage, certified_constant, run_concentration,
                       run_particles, run_verify_t2, run_zvonkin_diagnostics, stream_base,
                       write_report)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = ("simulate", "constant", "verify-t2", "zvonkin", "concentration", "particles")


def _parser():
    p = argparse.ArgumentParser(prog="t2certify",
                                description="Empirical T2 certificates for SDE path laws.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key=value config file")
        s.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--override", nargs="+", default=[], metavar="KEY=VALUE",
                       help="override config keys (unique suffixes accepted)")
        s.add_argument("--threads", type=int, help="worker threads (default: T2_CERTIFY_THREADS)")
    return p


def _load(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.set("run.seed", str(args.seed))
    if args.out is not None:
        cfg.set("report.out", args.out)
    return cfg.override(args.override)


def _simulate(cfg):
    t0 = time.perf_counter()
    model = _stage("model", build_model, cfg)
    grid = TimeGrid(cfg["grid.T"], cfg["grid.n"])
    n = cfg["report.paths"]
    noise = NoiseSource(cfg["run.seed"], stream_base(cfg["experiment.id"] + "/simulate"))
    xs = _stage("simulate", simulate_batch, model.drift, model.diffusion, model.x0, grid,
                noise, n)
    out = cfg["report.out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "paths.csv"), "w") as fh:
        fh.write("path,t," + ",".join(f"x{i + 1}" for i in range(model.dim)) + "\n")
        for p in range(n):
            for k, t in enumerate(grid.times):
                fh.write(f"{p},{t!r}," + ",".join(repr(float(v)) for v in xs[p, k]) + "\n")
    report = Report(cfg.dumps())
    report.notes.append(f"simulated {n} paths of model {model.name}")
    report.wall_clock = time.perf_counter() - t0
    return report


def _constant(cfg):
    res = certified_constant(cfg)
    print(f"C_star={res.C!r}")
    print(f"epsilon_star={res.epsilon!r}")
    print(f"at_boundary={'true' if res.at_boundary else 'false'}")
    if res.transform is not None:
        print(f"C_untransformed={res.reference.C!r}")
    report = Report(cfg.dumps())
    report.notes.append(f"C_star={res.C!r} epsilon_star={res.epsilon!r} at_boundary={res.at_boundary}")
    return report


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        cfg = _load(args)
        t0 = time.perf_counter()
        cmd = args.command
        if cmd == "simulate":
            report = _simulate(cfg)
        elif cmd == "constant":
            report = _constant(cfg)
        elif cmd == "verify-t2":
            report = run_verify_t2(cfg, threads=args.threads)
        elif cmd == "zvonkin":
            report = run_zvonkin_diagnostics(cfg)
        elif cmd == "concentration":
            report = run_concentration(cfg)
        else:
            report = run_particles(cfg, threads=args.threads)
        report.wall_clock = time.perf_counter() - t0
        if cmd != "constant" or args.out is not None:
            for path in write_report(report, cfg["report.out"]):
                print(f"wrote {path}", file=sys.stderr)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if exc.numerical else EXIT_FAIL
    except (FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for row in report.certificates:
        c = row.cert
        print(f"{row.experiment_id}: W2_emp^2={c.w2_emp_sq:.4g} C*H={c.C * c.H:.4g} "
              f"verdict={'pass' if c.verdict else 'fail'}")
    for name, value, threshold, ok in report.checks:
        print(f"{name}: {value:.4g} (threshold {threshold:.4g}) {'pass' if ok else 'fail'}")
    for r, tail, hi, bound, ok in report.concentration:
        print(f"r={r:g}: tail={tail:.4g} ci_hi={hi:.4g} bound={bound:.4g} {'pass' if ok else 'fail'}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

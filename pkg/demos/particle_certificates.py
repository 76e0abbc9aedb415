"""Certificates for three interacting particle systems via the harness.

Uses the shipped configs with fewer paths so the script runs in under a
minute; the CLI runs the full-size versions.
"""
import os

from t2certify.harness import load_config
from t2certify.harness.pipeline import run_particle_checks, run_verify_t2

here = os.path.dirname(os.path.abspath(__file__))
for name in ("rank5", "atlas5", "quantile5"):
    cfg = load_config(os.path.join(here, "..", "configs", name + ".cfg"))
    cfg.override(["samples.N=2048", "samples.B=256", "grid.n=400"])
    row = run_verify_t2(cfg).certificates[0]
    c = row.cert
    print(f"{name:10s} H={c.H:.4f}  W2={c.w2_emp:.4f}  coupling={c.w2_upper:.4f}  "
          f"C={c.C:.3g}  {'pass' if c.verdict else 'fail'}")

for check, value, threshold, ok in run_particle_checks(cfg).checks:
    print(f"{check:28s} {value:.2e}  {'pass' if ok else 'fail'}")

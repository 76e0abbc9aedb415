"""Replacing a random drift by its conditional expectation.

X has drift g(t) = sgn(X(t)).  Regressing g on X slice by slice gives a
Markovian drift b(t, x); the SDE driven by b should have the same
one-dimensional marginals.  Both are simulated with the same noise.
"""
import numpy as np
from scipy import stats

from t2certify.particles import conditional_drift_estimate
from t2certify.sde import NoiseSource, TimeGrid, identity_diffusion, sign_drift, simulate_batch

grid = TimeGrid(1.0, 200)
stride = 10
diff = identity_diffusion(1)
xs = simulate_batch(sign_drift(1), diff, [0.0], grid, NoiseSource(1), 50_000, record_every=stride)
slices = grid.times[::stride][:-1]
samples = xs[:, :-1, 0].T
bw = 0.05
x_grid = np.arange(-4.0, 4.0 + 1e-9, bw)
b = conditional_drift_estimate(slices, samples, np.sign(samples), bw, x_grid, 1.0)
for x in (-1.0, -0.2, 0.2, 1.0):
    print(f"b(0.5, {x:+.1f}) = {b(0.5, np.array([[x]]))[0, 0]:+.4f}")

noise = NoiseSource(1, 1)
a = simulate_batch(sign_drift(1), diff, [0.0], grid, noise, 10_000, record_every=grid.n)[:, -1, 0]
m = simulate_batch(b.field(), diff, [0.0], grid, noise, 10_000, record_every=grid.n)[:, -1, 0]
print(f"terminal KS distance: {stats.ks_2samp(a, m).statistic:.4f}")

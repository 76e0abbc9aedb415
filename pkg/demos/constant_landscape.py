"""How the explicit T2 constant depends on epsilon and on the horizon.

Prints C(eps) on a few points, the optimised constant, and how fast it grows
with T for two values of the BDG constant.
"""
import numpy as np

from t2certify.constants import ConstantInputs, optimize_epsilon, t2_constant_at

inputs = ConstantInputs(T=0.1, sigma_sup=1.0, c_bdg=1.0)
print("C(eps) at T=0.1, sigma=1, C_BDG=1")
for eps in (0.05, 0.2, 0.5, 0.8, 0.95):
    print(f"  eps={eps:4.2f}  C={t2_constant_at(eps, inputs):12.4f}")

opt = optimize_epsilon(inputs)
print(f"optimum: eps*={opt.epsilon:.5f}  C*={opt.C:.4f}  boundary={opt.at_boundary}")

# with T = 0 the exponential factor disappears and the infimum sits at the window edge
opt0 = optimize_epsilon(ConstantInputs(T=0.0, sigma_sup=1.0))
print(f"T=0: C*={opt0.C:.6f} (limit 2), boundary={opt0.at_boundary}")

print("\nGrowth in T")
for c_bdg in (1.0, 2.0):
    row = []
    for T in np.linspace(0.0, 0.5, 6):
        row.append(optimize_epsilon(ConstantInputs(T, 1.0, c_bdg)).C)
    print(f"  C_BDG={c_bdg}: " + "  ".join(f"{c:.3g}" for c in row))

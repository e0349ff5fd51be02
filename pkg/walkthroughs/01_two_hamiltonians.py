# The agent's two Hamiltonians on the quartic-cost model.
#
# Effort u in [-1, 1] sets the volatility directly, costs 1 - u^4 and adds no drift.
# H_A(gamma) lets the agent pick u freely against a price gamma on variance;
# H°_A(S) forces the variance to equal S.

import numpy as np

from volcontract import ControlGrid, build_model, hamiltonian_constrained, hamiltonian_full

model = build_model({"example": "quartic", "T": 1.0})
grid = ControlGrid.from_counts(model)  # 20001 points

print("gamma    H_A      argmax")
for gamma in (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0):
    ev = hamiltonian_full(model, 0.0, 0.0, 0.0, 0.0, gamma, grid)
    print(f"{gamma:5.1f} {ev.value:8.4f} {ev.argmax[0]:8.4f}")

# the free agent jumps from u = 0 to |u| = 1 at gamma = -2 and never picks anything in between

print("\nS       H°_A     S^2 - 1")
for S in np.linspace(0, 1, 5):
    ev = hamiltonian_constrained(model, 0.0, 0.0, 0.0, 0.0, S, grid, tol_s=1e-4)
    print(f"{S:4.2f} {ev.value:9.4f} {S * S - 1:9.4f}")

# H°_A is convex in S, so it cannot be the concave envelope the free agent sees.

# Where the classical contract form loses value.
#
# The biconjugate of H°_A is its concave envelope in S. When the two coincide
# (scalar volatility, demand response) every first-best variance target can be
# implemented by pricing quadratic variation. When they do not (quartic cost)
# the gap is the per-unit-time value the principal gives up.

import numpy as np

from volcontract import ControlGrid, build_model, duality_report, gamma_grid

for name, s_grid in (("scalar-vol", np.linspace(0.01, 1, 100)),
                     ("demand-response", np.linspace(0.04, 4, 100)),
                     ("quartic", np.linspace(0, 1, 101))):
    model = build_model({"example": name})
    rep = duality_report(model, 0.0, model.x0, 0.0, 0.0, s_grid, gamma_grid(), ControlGrid.from_counts(model))
    print(f"{name:16s} holds={rep.holds!s:5s} max_gap={rep.max_gap:.4f} at S={rep.witness_S:.3f}"
          f"  (tolerance {rep.tol_gap:.3g}, {len(rep.clamped)} S values beyond the gamma clamp)")

# For the quartic model the gap is S - S^2. Print a few entries next to it.
model = build_model({"example": "quartic"})
rep = duality_report(model, 0, 0, 0, 0, [0.1, 0.3, 0.5, 0.7, 0.9], gamma_grid(), ControlGrid.from_counts(model))
for S, gap in zip(rep.s_grid, rep.gap):
    print(f"S={S:.1f}  gap={gap:.4f}  S-S^2={S - S * S:.4f}")

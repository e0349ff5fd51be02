# Simulating the scalar-volatility example under its optimal first-best contract.
#
# CARA agent and principal with unit risk aversion and unit variance cost h.
# The optimal contract pays Z = 1/2 per unit of output and targets Sigma = 2.5^(-1/2).

import numpy as np

from volcontract import (ContractCPT, ContractFB, ControlGrid, SimConfig, agent_objective, build_model,
                         example1_closed_form, principal_objective, realized_qv_density, simulate_cpt, simulate_fb)

model = build_model({"example": "scalar-vol", "gamma_a": 1, "gamma_p": 1, "h": 1})
grid = ControlGrid.from_counts(model)
sol = example1_closed_form(1, 1, 1)
z, sigma, gamma = sol.closed_form["Z"], sol.closed_form["Sigma"], sol.closed_form["Gamma"]

cfg = SimConfig(n_paths=20000, n_steps=500, master_seed=1, record=4)
fb = simulate_fb(model, ContractFB(-1.0, z, sigma), cfg, grid)
cpt = simulate_cpt(model, ContractCPT(-1.0, z, gamma), cfg, grid)

for label, ens in (("first-best form", fb), ("gamma form", cpt)):
    a, p = agent_objective(model, ens), principal_objective(model, ens)
    print(f"{label:16s} agent {a.mean:.4f} ± {a.std_error:.4f}   principal {p.mean:.4f} ± {p.std_error:.4f}")
print(f"closed-form principal value {sol.principal_value:.4f}")

# The agent never reports his effort, but its variance shows up in the output path.
t, est = realized_qv_density(fb, 0, 50)
print(f"realised variance on path 0: mean {np.mean(est):.3f}, target {sigma:.3f}")

# Paying the agent under the gamma form and letting him shirk to u = 0.5 costs him.
lazy = simulate_cpt(model, ContractCPT(-1.0, z, gamma), cfg, grid, effort=[0.5])
print(f"deviation u = 0.5: agent {agent_objective(model, lazy).mean:.4f} (on policy -1)")

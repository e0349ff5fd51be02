"""Principal-agent contracts with volatility control: Hamiltonians, duality, simulation, checks."""

from .duality import (DualityReport, biconjugate, conjugate_from_constrained, conjugate_with_bound,
                      duality_report, gamma_from_sigma, gamma_grid, sigma_from_gamma)
from .hamiltonian import (HamiltonianEval, default_tol_s, full_values, hamiltonian_constrained,
                          hamiltonian_full, hamiltonian_full_batch)
from .model import (CoefficientEval, ControlGrid, ModelSpec, NumericalError, Utility, ValidationError,
                    achievable_variance_set, build_model, eval_coefficients, validate_model)
from .simulate import (ContractCPT, ContractFB, MCEstimate, PathEnsemble, SimConfig, agent_objective,
                       principal_objective, realized_qv_density, simulate_cpt, simulate_fb)
from .verify import (BestResponseReport, Deviation, EquivalenceReport, ExampleSolution, best_response_check,
                     equivalence_scan, example1_closed_form, example1_hjb_ode, example2_closed_form,
                     example3_gap)

__version__ = "0.1.0"

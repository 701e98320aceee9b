"""radnerlab: a numerical laboratory for dynamic exchange economies.

Builds Arrow-Debreu equilibria for multi-agent economies driven by a
bounded-coefficient diffusion (social-planner weights solved on frozen
Monte Carlo paths), prices the equilibrium with backward parabolic
solves, verifies the result check-by-check with explicit tolerances and
negative controls, and tests whether the resulting financial market is
dynamically complete (dispersion rank sweep plus a discrete replication
probe).
"""

from .completeness import (DispersionReport, ProbeReport, dispersion,
                           martingale_uniqueness_probe)
from .diffusion import (DiffusionSpec, PathBundle, SpatialGrid, TimeGrid,
                        path_integral, simulate_paths, validate_coefficients)
from .economy import (AgentSpec, EconomySpec, PrimitivePaths, StockSpec,
                      evaluate_primitives, validate_assumptions)
from .errors import (BoundaryError, CompletenessError, ConfigError,
                     EvaluationError, LabError, NonConvergence,
                     PrimitiveError, SolverError, SplitterError)
from .expressions import (Affine, Constant, ExpAffine, ExpOf, Expr,
                          Polynomial, Product, Sum, TimePoly, check_axes,
                          parse_field)
from .negishi import (ExcessReport, SolveResult, SolverConfig,
                      StatePricePath, excess_map, pareto_allocation,
                      solve_weights, state_price, validate_simplex)
from .pde import GridFunction, solve_parabolic
from .pricing import (EquilibriumSolution, PricingKernelSet,
                      agent_target_loadings, build_kernels, build_solution,
                      numeraire_surface, solve_agent_surface,
                      solve_claim_surface, solve_density_surface,
                      solve_equilibrium, solve_hedge_systems,
                      solve_stock_surface, stock_loadings)
from .reporting import CheckResult, ValidationReport, VerificationSuiteResult
from .runner import RunOutcome, run_scenario
from .scenario import (CompletenessSettings, ReferenceSurface, Scenario,
                       build_utility, load_scenario, scenario_from_tree,
                       scenario_to_toml)
from .utilities import (AggregateUtility, CRRAUtility, ScaledUtility,
                        SumUtility, SupConvolution, UtilityFn, aggregate,
                        cone_diagnostics, split, sup_convolve)
from .verify import (VerifyConfig, check_ad_radner_translation, check_budget,
                     check_clearing, check_martingale, check_optimality,
                     prepare_paths, run_suite)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

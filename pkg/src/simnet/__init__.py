"""Multiport scattering model and phase optimization for stacked
reconfigurable surfaces.

The library models a cascade of tunable two-port cells embedded in a
multiport coupling network, evaluates the end-to-end channel under three
coupling treatments (dense, layer-banded, banded plus first-order
residual), and optimizes the cell settings continuously (adjoint
gradients with backtracking line search) or over discrete codebooks
(coordinate descent with exact rank-2 updates).
"""

from .cells import (CellCodebook, CellModel, TuningState, assemble_gamma,
                    cell_blocks, cell_tangent, extract_cell_blocks,
                    invert_gamma_blockwise, project_to_codebook,
                    tangent_blocks, wrap_phases)
from .config import (CellConfig, ExperimentConfig, MetricsConfig,
                     OptimizerConfig, OutputConfig, ScenarioConfig,
                     apply_cli_overrides, load_config, parse_snr_sweep)
from .errors import (CellSingularityError, ConfigurationError,
                     EstimationError, FactorizationError, GeometryError,
                     InfeasibleCandidateError, SimnetError,
                     SolverFailureError, TouchstoneError)
from .netcore import (PartitionedScattering, SimTopology, WaveBatch,
                      cell_port_indices, end_to_end_channel,
                      forward_residuals, solve_forward)
from .optim import (CouplingModel, DescentConfig, DescentResult, EvalResult,
                    LossSpec, SweepResult, coordinate_descent, descend,
                    evaluate, gradient, loss, normalize_model, random_phases,
                    woodbury_candidate_loss)
from .pipeline import (ExperimentResult, export_gamma_states,
                       import_gamma_states, run_experiment, thread_count)
from .scenario import (CommScenario, CommTarget, Geometry, Isolation,
                       NoiseModel, SensingGrid, SensingScenario, capacity,
                       comm_scenario, error_std, estimate_parameter,
                       grid_signatures, offdiag_suppression_db,
                       sensing_error_spread, sensing_scenario, sinr_per_stream,
                       synth_details, synth_scattering, test_point_outputs,
                       tx_coupling)
from .solvers import (BlockTridiagonal, CouplingDecomposition, NeumannInverse,
                      ThomasFactorization, core_inverse_ni, core_inverse_w,
                      operator_norm_estimate, sim_i_mask, split_coupling,
                      thomas_factorize, thomas_full_inverse, thomas_solve,
                      thomas_solve_columns)
from .touchstone import TouchstoneFile, parse_touchstone, write_touchstone

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

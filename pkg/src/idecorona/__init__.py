"""Exponential stabilization of integral difference equations with pointwise and distributed delays.

The controller gains solve an approximate corona problem posed as a weighted
minimal-norm convolution least-squares problem in an algebra of measures.
"""

from .exceptions import AssumptionError, ConfigurationError, ShapeError, SizingError, SolverError
from .measures import (HybridMeasure, convolve, discretize, identical, laplace_eval,
                       laplace_eval_grid, weighted_tv_norm)
from .model import (ControllerGains, IdeSystem, Kernel, build_P, build_Q, characteristic_matrix,
                    delta0_eval, paper_example, paper_initial_state)
from .simulate import SampledSignal, SimulationRun, fit_decay_rate, simulate_closed_loop, simulate_open_loop
from .spectral import (GridSpec, SpectralReport, certify_principal_part, check_spectral_stabilizability,
                       choose_rates, estimate_corona_gap, spectral_report)
from .synthesis import (MinorSet, SynthesisProblem, SynthesisResult, assemble_system, compute_minors,
                        compute_target, solve_min_norm, support_bound, synthesize,
                        verify_closed_loop_characteristic)

__version__ = "0.1.0"

"""Deep low-rank influence-kernel point processes on space, time and graphs."""

from .core import Event, EventSequence, GridSpec, ModelConfig, SpatialDomain, TimeWindow, validate_sequence
from .discrete_glm import BinaryPanel, DiscreteParams, fit_discrete, granger_adjacency
from .graph_process import Graph, GraphFilterKernel, GraphModel, fit_graph, influence_snapshots
from .intensity import SttpModel, conditional_intensity, intensity_on_grid, min_intensity
from .kernel import (LowRankKernel, MarkedKernel, deep_kernel, discretize_pair_forms, effective_rank,
                     eval_kernel, exp_hawkes_kernel, ground_truth_kernel)
from .objectives import barrier_penalty, log_likelihood, ls_loss, perturbation_gap
from .optimizer import FitOptions, FitReport, evaluate, fit
from .prediction import mae_eval, next_event_density, predict_next
from .simulation import simulate, simulate_many, time_rescaling_check

__version__ = "0.1.0"

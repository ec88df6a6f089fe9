"""Differentially private distributed phased elimination for linear bandits."""

__version__ = "0.1.0"

from .accounting import RunMetrics, record_phase_comm, record_round
from .core import (BanditConfig, PhaseState, confidence_width, eliminate, estimator_inputs,
                   least_squares, run_dpdpe, run_dppe)
from .design import DecisionSet, DesignDistribution, allocate_pulls, compute_near_g_optimal, support_bound
from .harness import ExperimentConfig, match_fixedu_budget, run_experiment
from .population import PopulationSpec, average_local_reward, observe_reward, sample_clients
from .privatizers import (AggregatedFeedback, PrivacyModel, PrivacyParams, central_privatize,
                          local_privatize, make_privatizer, scalar_shuffle_sum, shuffle_analyze,
                          shuffle_params, shuffle_permute, shuffle_randomize, sigma_n)
from .rng import ZeroNoiseRNG, make_rng

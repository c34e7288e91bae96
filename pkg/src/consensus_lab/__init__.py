"""Consensus thresholds and simulation for sampled-data networks with random links."""

from .analysis import (
    AnalysisReport,
    DivergenceBound,
    analyze,
    as_divergence_bound,
    critical_tau,
    divergence_bound,
    lyapunov_feasibility,
    ms_consensus_check,
    second_moment,
    spectral_curve,
    spectral_radius,
    tau_flat,
    tau_sharp,
)
from .dynamics import SystemConfig, Trajectory, agreement, disagreement, propagate, simulate, step
from .ensemble import IidModel, MarkovModel, SubgraphEnsemble, build_ensemble, parse_model
from .errors import (
    AnalysisInapplicableError,
    CapExceededError,
    ConsensusLabError,
    ConvergenceError,
    InvalidInputError,
)
from .graph import DirectedGraph, build_graph, complete_graph, cycle_graph, has_spanning_tree, laplacian, load_graph
from .montecarlo import ExperimentConfig, MomentSeries, empirical_threshold, estimate_moments, sweep_N

__version__ = "0.1.0"

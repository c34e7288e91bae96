"""Monte Carlo moment estimation, empirical thresholds and N-sweeps.

Trial ``i`` of an experiment draws from ``SeedSequence(root_seed, spawn_key=(i,))``.
Trials are simulated in chunks, possibly on several threads, and concatenated in
trial order before any reduction, so results are bit-identical for any thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import critical_tau
from .dynamics import SystemConfig, draw_arc_states, evolve
from .ensemble import EdgeModel, IidModel, MarkovModel
from .errors import CapExceededError, ConsensusLabError, InvalidInputError
from .graph import DirectedGraph, complete_graph, cycle_graph

CHUNK_TRIALS = 1024
THREADS_ENV = "CONSENSUS_LAB_THREADS"


def trial_rng(root_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(index,)))


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        else:
            threads = 1
    if threads < 1:
        raise InvalidInputError("thread count must be >= 1")
    return threads


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig
    x0: np.ndarray
    trials: int = 10_000
    k_max: int = 150
    root_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if self.k_max < 1:
            raise InvalidInputError("k_max must be >= 1")
        if not 0 <= self.root_seed < 2**64:
            raise InvalidInputError("root_seed must be a 64-bit unsigned integer")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.system.graph.n,):
            raise InvalidInputError(f"x0 must have length {self.system.graph.n}")
        object.__setattr__(self, "x0", x0)


@dataclass
class TrialBatch:
    agreement: np.ndarray  # (trials, k_max + 1), NaN once in log domain
    saturated_at: np.ndarray  # (trials,), -1 = never
    final_states: np.ndarray | None = None


def run_trials(cfg: ExperimentConfig, threads: int | None = None, keep_states: bool = False) -> TrialBatch:
    """All trials of an experiment, in trial order."""
    threads = resolve_threads(threads)
    taus = cfg.system.tau_steps(cfg.k_max)
    starts = list(range(0, cfg.trials, CHUNK_TRIALS))

    def chunk(start):
        idx = range(start, min(start + CHUNK_TRIALS, cfg.trials))
        rngs = [trial_rng(cfg.root_seed, i) for i in idx]
        bits = draw_arc_states(cfg.system.graph, cfg.system.model, cfg.k_max, rngs)
        res = evolve(cfg.system.graph, cfg.x0, taus, bits, store_states=keep_states)
        final = res.states[:, -1] if keep_states else None
        return res.agreement, res.saturated_at, final

    if threads == 1 or len(starts) == 1:
        parts = [chunk(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk, starts))
    return TrialBatch(
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]) if keep_states else None,
    )


@dataclass
class MomentSeries:
    k: np.ndarray
    mean_X: np.ndarray
    mean_X2: np.ndarray
    stderr_X2: np.ndarray
    saturated_fraction: np.ndarray
    trials_used: int

    @property
    def saturated(self) -> np.ndarray:
        return self.saturated_fraction > 0


def moments_from_batch(batch: TrialBatch) -> MomentSeries:
    """Per-step means over the trials still outside log domain at that step."""
    trials, steps = batch.agreement.shape
    k = np.arange(steps)
    sat_at = batch.saturated_at[:, None]
    saturated = (sat_at >= 0) & (k[None, :] >= sat_at)
    live = ~saturated
    X = np.where(live, batch.agreement, 0.0)
    X2 = X * X
    n_live = live.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_X = np.where(n_live > 0, X.sum(axis=0) / np.maximum(n_live, 1), math.inf)
        mean_X2 = np.where(n_live > 0, X2.sum(axis=0) / np.maximum(n_live, 1), math.inf)
        # relative deviations keep the squares finite when X^2 itself is near overflow
        scale = np.where((mean_X2 > 0) & np.isfinite(mean_X2), mean_X2, 1.0)
        dev = np.where(live, X2 / scale - mean_X2 / scale, 0.0)
        var = (dev * dev).sum(axis=0) / np.maximum(n_live - 1, 1)
        stderr = np.where(n_live > 1, scale * np.sqrt(var / np.maximum(n_live, 1)), math.inf)
    return MomentSeries(k, mean_X, mean_X2, stderr, saturated.mean(axis=0), trials)


def estimate_moments(cfg: ExperimentConfig, threads: int | None = None) -> MomentSeries:
    """Sample means of ``X(k)`` and ``X(k)^2`` with standard errors for ``X^2``."""
    return moments_from_batch(run_trials(cfg, threads))


def disagreement_moment_mc(cfg: ExperimentConfig, threads: int | None = None):
    """Monte Carlo mean and standard error of ``d(K) d(K)'`` at ``K = k_max``."""
    batch = run_trials(cfg, threads, keep_states=True)
    x = batch.final_states
    if np.isnan(x).any():
        raise InvalidInputError("some trials left the representable range; shorten k_max")
    d = x - x.mean(axis=1, keepdims=True)
    outer = d[:, :, None] * d[:, None, :]
    mean = outer.mean(axis=0)
    stderr = outer.std(axis=0, ddof=1) / math.sqrt(len(d))
    return mean, stderr


# -- empirical threshold --------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    tau: float
    slope: float
    stderr: float
    diverging: bool


def fit_log_slope(series: MomentSeries, z: float = 2.0) -> tuple[float, float, bool]:
    """OLS slope of ``log mean_X2`` over the last half of the horizon.

    Divergence is declared when the slope exceeds ``z`` standard errors, or when any
    trial entered log domain.
    """
    if series.saturated.any():
        return math.inf, 0.0, True
    k = series.k
    half = k[len(k) // 2 :]
    y = series.mean_X2[len(k) // 2 :]
    if np.any(y <= 0):
        return -math.inf, 0.0, False  # exact consensus reached
    y = np.log(y)
    x = half.astype(float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    dof = max(len(x) - 2, 1)
    se = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, se, slope > z * se


def empirical_slopes(graph: DirectedGraph, model: EdgeModel, tau_grid, cfg: ExperimentConfig, threads=None):
    out = []
    for tau in tau_grid:
        system = replace(cfg.system, graph=graph, model=model, tau=float(tau))
        series = estimate_moments(replace(cfg, system=system), threads)
        slope, se, div = fit_log_slope(series)
        out.append(SlopeFit(float(tau), slope, se, div))
    return out


class GridError(ConsensusLabError):
    """The tau grid does not bracket the empirical transition."""

    exit_code = 2


def empirical_threshold(graph: DirectedGraph, model: EdgeModel, tau_grid, cfg: ExperimentConfig, threads=None) -> float:
    """Smallest grid interval whose ``E[X^2]`` grows, judged from simulation alone."""
    grid = [float(t) for t in tau_grid]
    if not grid or grid != sorted(grid):
        raise InvalidInputError("tau_grid must be non-empty and sorted ascending")
    fits = empirical_slopes(graph, model, grid, cfg, threads)
    diverging = [f for f in fits if f.diverging]
    if not diverging:
        raise GridError("every grid point converges; widen the grid upward")
    if len(diverging) == len(fits):
        raise GridError("every grid point diverges; widen the grid downward")
    return diverging[0].tau


# -- N sweeps -------------------------------------------------------------------------

FAMILIES = {"cycle": cycle_graph, "complete": complete_graph}


def model_params(model: EdgeModel) -> str:
    if isinstance(model, IidModel):
        return f"q={model.q:g}"
    return f"p={model.p:g};q={model.q:g}"


@dataclass
class SweepRow:
    N: int
    tau_dagger: float
    model: str
    params: str


@dataclass
class SweepTable:
    rows: list[SweepRow]
    skipped: dict[int, str] = field(default_factory=dict)


def sweep_N(family: str, N_range, model: EdgeModel, tol: float = 1e-3, continuous_access: bool = False) -> SweepTable:
    """Critical intervals across graph sizes; sizes over a dimension cap are skipped, not fatal."""
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown graph family {family!r}; expected one of {sorted(FAMILIES)}")
    table = SweepTable([])
    for n in N_range:
        n = int(n)
        try:
            g = FAMILIES[family](n)
            tau = critical_tau(g, model, tol, continuous_access)
        except CapExceededError as exc:
            table.skipped[n] = str(exc)
            continue
        table.rows.append(SweepRow(n, tau, model.kind, model_params(model)))
    return table

"""Sampled-data consensus updates and trajectories.

One sample step is ``x <- (I - tau L) x`` with ``L`` the Laplacian of the arcs
present at that instant. The batched engine below evolves many independent trials at
once; each trial owns its random stream and consumes exactly ``|arcs|`` uniforms per
step, so a single :func:`simulate` call and trial ``i`` of a Monte Carlo batch built
from the same stream produce the same path.

Divergent runs are kept finite by rescaling: once the agreement of a trial exceeds
``LOG_DOMAIN_THRESHOLD`` its state is shifted and divided by the agreement, and the
log of the scale is carried separately. Both operations commute with the update
(``W 1 = 1`` and linearity), so the log-agreement series stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .ensemble import EdgeModel, IidModel, MarkovModel, iid_bits, markov_initial_bits, markov_next_bits
from .errors import InvalidInputError
from .graph import DirectedGraph, bits_to_mask

LOG_DOMAIN_THRESHOLD = 1e100
MAX_STORED_VALUES = 10**7

TauSchedule = Union[float, Sequence[float], Callable[[int], float], str]


def continuous_access_tau(tau):
    """Effective step when nodes read their own state continuously: ``1 - e^{-tau}``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise InvalidInputError("inter-sampling interval must be positive")
    out = -np.expm1(-tau)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SystemConfig:
    graph: DirectedGraph
    model: EdgeModel
    tau: TauSchedule = 1.0
    continuous_access: bool = False

    def constant_tau(self) -> float:
        """The (possibly transformed) constant step; analysis accepts nothing else."""
        if isinstance(self.tau, str):
            tau = _parse_scalar(self.tau)
        elif isinstance(self.tau, (int, float, np.floating, np.integer)) and not isinstance(self.tau, bool):
            tau = float(self.tau)
        else:
            tau = None
        if tau is None:
            raise InvalidInputError("analysis requires a constant inter-sampling interval")
        if not tau > 0 or not math.isfinite(tau):
            raise InvalidInputError(f"inter-sampling interval must be positive and finite, got {tau}")
        return continuous_access_tau(tau) if self.continuous_access else tau

    def tau_steps(self, k_max: int) -> np.ndarray:
        taus = resolve_schedule(self.tau, k_max)
        return continuous_access_tau(taus) if self.continuous_access and k_max else taus


def _parse_scalar(text: str):
    try:
        return float(text)
    except ValueError:
        return None


def resolve_schedule(schedule: TauSchedule, k_max: int) -> np.ndarray:
    """Per-step intervals ``tau_0 .. tau_{k_max-1}``.

    Accepted forms: a number; a sequence (repeated periodically if shorter than
    ``k_max``); a callable ``k -> tau``; or a string ``"1.0"``, ``"1.0,1.2"``
    (periodic) or ``"linspace:a:b"``.
    """
    if isinstance(schedule, str):
        text = schedule.strip()
        if text.startswith("linspace:"):
            parts = text.split(":")
            if len(parts) != 3:
                raise InvalidInputError(f"bad schedule {schedule!r}; expected linspace:<a>:<b>")
            try:
                a, b = float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise InvalidInputError(f"bad schedule {schedule!r}") from exc
            taus = np.linspace(a, b, k_max) if k_max > 1 else np.full(k_max, a)
        else:
            try:
                values = [float(v) for v in text.split(",")]
            except ValueError as exc:
                raise InvalidInputError(f"bad tau {schedule!r}") from exc
            taus = _periodic(values, k_max)
    elif callable(schedule):
        taus = np.array([float(schedule(k)) for k in range(k_max)])
    elif isinstance(schedule, (int, float, np.floating, np.integer)) and not isinstance(schedule, bool):
        taus = np.full(k_max, float(schedule))
    else:
        taus = _periodic([float(v) for v in schedule], k_max)
    if k_max and (not np.all(np.isfinite(taus)) or np.any(taus <= 0)):
        raise InvalidInputError("every inter-sampling interval must be positive and finite")
    return taus


def _periodic(values, k_max):
    if not values:
        raise InvalidInputError("empty tau schedule")
    return np.resize(np.asarray(values, dtype=float), k_max)


def step(x: np.ndarray, L: np.ndarray, tau: float) -> np.ndarray:
    """One update ``(I - tau L) x``."""
    x = np.asarray(x, dtype=float)
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or x.shape != (L.shape[0],):
        raise InvalidInputError(f"dimension mismatch: x {x.shape}, L {L.shape}")
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    return x - tau * (L @ x)


def agreement(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.max() - x.min())


def disagreement(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x - x.mean()


@dataclass
class Trajectory:
    """A simulated path.

    ``states`` holds ``x(t_k)`` row by row, or is ``None`` when storage was skipped;
    rows after the switch to log domain are NaN. ``log_agreement`` is always exact
    (natural log, ``-inf`` at exact consensus).
    """

    taus: np.ndarray
    masks: np.ndarray
    log_agreement: np.ndarray
    states: np.ndarray | None = None
    saturated_at: int | None = None
    linear_agreement: np.ndarray | None = None  # exact values, NaN once in log domain

    @property
    def log_domain(self) -> bool:
        return self.saturated_at is not None

    @property
    def agreement(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            out = np.exp(self.log_agreement)
        if self.linear_agreement is not None:
            live = np.isfinite(self.linear_agreement)
            out[live] = self.linear_agreement[live]
        return out

    @property
    def log10_agreement(self) -> np.ndarray:
        return self.log_agreement / math.log(10.0)

    def __len__(self):
        return len(self.log_agreement)


@dataclass
class BatchResult:
    log_agreement: np.ndarray  # (trials, k_max + 1)
    masks: np.ndarray  # (trials, k_max)
    saturated_at: np.ndarray  # (trials,), -1 when never saturated
    states: np.ndarray | None = field(default=None)
    agreement: np.ndarray | None = field(default=None)  # max - min before any rescaling, else NaN


def draw_arc_states(graph: DirectedGraph, model: EdgeModel, k_max: int, rngs) -> np.ndarray:
    """Arc presence for every trial and step, shape ``(trials, k_max, |arcs|)``.

    Each stream supplies a ``(k_max, |arcs|)`` block of uniforms. For the Markov model
    row 0 sets the initial arc states (used only by the stationary init) and row ``k``
    drives the transition into step ``k``.
    """
    E = graph.num_arcs
    u = np.stack([rng.random((k_max, E)) for rng in rngs]) if rngs else np.zeros((0, k_max, E))
    if isinstance(model, IidModel):
        return iid_bits(model.q, u)
    if not isinstance(model, MarkovModel):
        raise InvalidInputError(f"unsupported model {model!r}")
    if not isinstance(model.init, str) and not 0 <= model.init <= graph.full_mask:
        raise InvalidInputError(f"initial mask {model.init} is outside the graph's {E}-arc range")
    bits = np.empty(u.shape, dtype=bool)
    if k_max == 0:
        return bits
    bits[:, 0] = markov_initial_bits(model, E, u[:, 0])
    for k in range(1, k_max):
        bits[:, k] = markov_next_bits(bits[:, k - 1], u[:, k], model.p, model.q)
    return bits


def evolve(
    graph: DirectedGraph,
    x0: np.ndarray,
    taus: np.ndarray,
    arc_states: np.ndarray,
    store_states: bool = False,
) -> BatchResult:
    """Run the update for given arc-state sequences, shape ``(trials, k_max, |arcs|)``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (graph.n,):
        raise InvalidInputError(f"initial state must have length {graph.n}, got shape {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise InvalidInputError("initial state must be finite")
    arc_states = np.asarray(arc_states, dtype=bool)
    trials, k_max, E = arc_states.shape
    if E != graph.num_arcs or len(taus) != k_max:
        raise InvalidInputError("arc-state array does not match graph or schedule")

    src, dst = graph.sources(), graph.targets()
    incidence = np.zeros((E, graph.n))
    incidence[np.arange(E), dst] = 1.0

    x = np.tile(x0, (trials, 1))
    log_scale = np.zeros(trials)
    saturated_at = np.full(trials, -1, dtype=np.int64)
    log_agr = np.empty((trials, k_max + 1))
    lin_agr = np.empty((trials, k_max + 1))
    states = None
    if store_states:
        states = np.full((trials, k_max + 1, graph.n), np.nan)
        states[:, 0] = x

    def record(k):
        a = x.max(axis=1) - x.min(axis=1)
        big = a > LOG_DOMAIN_THRESHOLD
        lin_agr[:, k] = np.where((saturated_at < 0) & ~big, a, np.nan)
        if big.any():
            newly = big & (saturated_at < 0)
            saturated_at[newly] = k
            x[big] = (x[big] - x[big].min(axis=1, keepdims=True)) / a[big, None]
            log_scale[big] += np.log(a[big])
            a = np.where(big, 1.0, a)
        with np.errstate(divide="ignore"):
            log_agr[:, k] = log_scale + np.log(a)
        if states is not None:
            live = saturated_at < 0
            states[live, k] = x[live]

    record(0)
    for k in range(k_max):
        on = arc_states[:, k, :]
        diffs = (x[:, src] - x[:, dst]) * on
        x = x + taus[k] * (diffs @ incidence)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("state overflowed within a single step; tau is too large")
        record(k + 1)

    masks = bits_to_mask(arc_states) if E else np.zeros((trials, k_max), dtype=np.int64)
    return BatchResult(log_agr, masks, saturated_at, states, lin_agr)


def simulate(
    config: SystemConfig,
    x0,
    k_max: int,
    rng: np.random.Generator,
    store_states: bool | None = None,
) -> Trajectory:
    """Simulate one path of ``k_max`` steps; deterministic given ``rng``'s state."""
    if k_max < 0:
        raise InvalidInputError("k_max must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    taus = config.tau_steps(k_max)
    bits = draw_arc_states(config.graph, config.model, k_max, [rng])
    if store_states is None:
        store_states = k_max * config.graph.n <= MAX_STORED_VALUES
    res = evolve(config.graph, x0, taus, bits, store_states=store_states)
    sat = int(res.saturated_at[0])
    return Trajectory(
        taus=taus,
        masks=res.masks[0],
        log_agreement=res.log_agreement[0],
        states=None if res.states is None else res.states[0],
        saturated_at=None if sat < 0 else sat,
        linear_agreement=res.agreement[0],
    )


def propagate(graph: DirectedGraph, x0, taus, arc_states) -> Trajectory:
    """Deterministic path for an explicit arc-state sequence of shape ``(k_max, |arcs|)``."""
    taus = np.asarray(taus, dtype=float)
    res = evolve(graph, x0, taus, np.asarray(arc_states, dtype=bool)[None], store_states=True)
    sat = int(res.saturated_at[0])
    return Trajectory(
        taus, res.masks[0], res.log_agreement[0], res.states[0], None if sat < 0 else sat, res.agreement[0]
    )

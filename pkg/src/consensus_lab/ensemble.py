"""Random edge models over the subgraph ensemble.

Two models are supported: every arc present independently with probability ``q`` at
each sample (``IidModel``), or every arc following its own two-state chain with
failure rate ``p`` and recovery rate ``q`` (``MarkovModel``).

Sampling is always done per arc from uniform draws, one draw per arc per step, in
canonical arc order. This keeps sampling O(|arcs|) per step and makes it usable on
graphs too large to enumerate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np

from .errors import CapExceededError, InvalidInputError
from .graph import DirectedGraph, bits_to_mask, check_enumerable, mask_bits, subgraph_laplacians

# dense transition matrices are M x M
MAX_TRANSITION_STATES = 4096


def _is_real(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and not isinstance(x, bool)


@dataclass(frozen=True)
class IidModel:
    q: float

    def __post_init__(self):
        if not _is_real(self.q) or not 0.0 < self.q <= 1.0:
            raise InvalidInputError(f"i.i.d. edge rate q must lie in (0, 1], got {self.q!r}")

    kind = "iid"

    def to_dict(self) -> dict:
        return {"model": "iid", "q": float(self.q)}


MarkovInit = Union[str, int]


@dataclass(frozen=True)
class MarkovModel:
    """Per-arc two-state chain. ``init`` is ``"stationary"``, ``"full"`` or a fixed mask."""

    p: float
    q: float
    init: MarkovInit = "stationary"

    def __post_init__(self):
        for name in ("p", "q"):
            v = getattr(self, name)
            if not _is_real(v) or not 0.0 < v < 1.0:
                raise InvalidInputError(f"Markov rate {name} must lie in (0, 1), got {v!r}")
        init = self.init
        if isinstance(init, str):
            if init not in ("stationary", "full"):
                raise InvalidInputError(f"unknown Markov init {init!r}")
        elif not isinstance(init, (int, np.integer)) or isinstance(init, bool) or init < 0:
            raise InvalidInputError(f"Markov init mask must be a nonnegative integer, got {init!r}")

    kind = "markov"

    def to_dict(self) -> dict:
        init = self.init if isinstance(self.init, str) else {"mask": int(self.init)}
        return {"model": "markov", "p": float(self.p), "q": float(self.q), "init": init}


EdgeModel = Union[IidModel, MarkovModel]


def markov_stationary_edge_prob(model: MarkovModel) -> float:
    """Long-run fraction of time an arc is present, ``q / (p + q)``."""
    return model.q / (model.p + model.q)


def model_from_dict(data: dict) -> EdgeModel:
    if not isinstance(data, dict) or "model" not in data:
        raise InvalidInputError('model must be a JSON object with a "model" key')
    kind = data["model"]
    if kind == "iid":
        if "q" not in data:
            raise InvalidInputError("i.i.d. model needs q")
        return IidModel(data["q"])
    if kind == "markov":
        if "p" not in data or "q" not in data:
            raise InvalidInputError("Markov model needs p and q")
        init = data.get("init", "stationary")
        if isinstance(init, dict):
            if "mask" not in init:
                raise InvalidInputError('Markov init object must look like {"mask": <int>}')
            init = init["mask"]
        return MarkovModel(data["p"], data["q"], init)
    raise InvalidInputError(f"unknown model kind {kind!r}; expected 'iid' or 'markov'")


def parse_model(text: str) -> EdgeModel:
    """Parse an inline JSON model, or read one from a file path."""
    text = text.strip()
    if not text.startswith("{"):
        path = Path(text)
        if not path.exists():
            raise InvalidInputError(f"model is neither inline JSON nor an existing file: {text}")
        text = path.read_text()
    try:
        return model_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"model is not valid JSON: {exc}") from exc


class SubgraphEnsemble:
    """All ``2^|arcs|`` subgraphs of a graph together with their probability law.

    Dense arrays are built lazily and cached; the instance is otherwise immutable.
    """

    def __init__(self, graph: DirectedGraph, model: EdgeModel):
        check_enumerable(graph)
        self.graph = graph
        self.model = model

    @property
    def size(self) -> int:
        return self.graph.num_subgraphs

    @property
    def is_markov(self) -> bool:
        return isinstance(self.model, MarkovModel)

    @cached_property
    def laplacians(self) -> np.ndarray:
        return subgraph_laplacians(self.graph)

    @cached_property
    def probabilities(self) -> np.ndarray:
        """Per-subgraph probability ``q^present (1-q)^absent`` (i.i.d. only)."""
        if self.is_markov:
            raise InvalidInputError("subgraph probabilities are defined for the i.i.d. model only")
        q = float(self.model.q)
        present = mask_bits(self.graph.num_arcs).sum(axis=1)
        absent = self.graph.num_arcs - present
        return q**present * (1.0 - q) ** absent

    @cached_property
    def transition(self) -> np.ndarray:
        """Row-stochastic ``M x M`` matrix; entry ``[i, j]`` is P(next = j | now = i)."""
        if not self.is_markov:
            raise InvalidInputError("a transition matrix is defined for the Markov model only")
        if self.size > MAX_TRANSITION_STATES:
            raise CapExceededError(
                f"dense transition matrix over {self.size} subgraphs exceeds {MAX_TRANSITION_STATES} states"
            )
        p, q = float(self.model.p), float(self.model.q)
        on = mask_bits(self.graph.num_arcs).astype(np.int64)
        off = 1 - on
        fail = on @ off.T  # present -> absent
        stay_on = on @ on.T
        recover = off @ on.T  # absent -> present
        stay_off = off @ off.T
        return p**fail * (1.0 - p) ** stay_on * q**recover * (1.0 - q) ** stay_off

    def initial_distribution(self) -> np.ndarray:
        """Law of the first subgraph under the Markov model's ``init`` setting."""
        init = self.model.init
        if init == "stationary":
            return iid_probabilities(self.graph, IidModel(markov_stationary_edge_prob(self.model))).probabilities
        dist = np.zeros(self.size)
        dist[self.graph.full_mask if init == "full" else _check_mask(self.graph, init)] = 1.0
        return dist


def _check_mask(g: DirectedGraph, mask: int) -> int:
    if not 0 <= mask <= g.full_mask:
        raise InvalidInputError(f"mask {mask} outside [0, {g.full_mask}] for a graph with {g.num_arcs} arcs")
    return int(mask)


def iid_probabilities(g: DirectedGraph, model: IidModel) -> SubgraphEnsemble:
    return SubgraphEnsemble(g, model)


def markov_transition(g: DirectedGraph, model: MarkovModel) -> SubgraphEnsemble:
    return SubgraphEnsemble(g, model)


def build_ensemble(g: DirectedGraph, model: EdgeModel) -> SubgraphEnsemble:
    return SubgraphEnsemble(g, model)


# -- per-arc sampling kernels, shared by single draws and batched simulation --------


def iid_bits(q: float, u: np.ndarray) -> np.ndarray:
    return u < q


def markov_next_bits(current: np.ndarray, u: np.ndarray, p: float, q: float) -> np.ndarray:
    """Present arcs fail when ``u < p``; absent arcs recover when ``u < q``."""
    return np.where(current, u >= p, u < q)


def markov_initial_bits(model: MarkovModel, num_arcs: int, u: np.ndarray) -> np.ndarray:
    """Initial arc states; consumes ``u`` only for the stationary init."""
    init = model.init
    if init == "stationary":
        return u < markov_stationary_edge_prob(model)
    shape = np.shape(u)
    if init == "full":
        return np.ones(shape, dtype=bool)
    bits = mask_bits(num_arcs, np.array([init]))[0]
    return np.broadcast_to(bits, shape).copy()


def sample_iid(ens: SubgraphEnsemble, rng: np.random.Generator) -> int:
    u = rng.random(ens.graph.num_arcs)
    return int(bits_to_mask(iid_bits(ens.model.q, u)))


def sample_markov_initial(ens: SubgraphEnsemble, rng: np.random.Generator) -> int:
    u = rng.random(ens.graph.num_arcs)
    if not isinstance(ens.model.init, str):
        _check_mask(ens.graph, ens.model.init)
    return int(bits_to_mask(markov_initial_bits(ens.model, ens.graph.num_arcs, u)))


def sample_markov_step(ens: SubgraphEnsemble, current: int, rng: np.random.Generator) -> int:
    g = ens.graph
    cur = mask_bits(g.num_arcs, np.array([_check_mask(g, current)]))[0]
    u = rng.random(g.num_arcs)
    return int(bits_to_mask(markov_next_bits(cur, u, ens.model.p, ens.model.q)))

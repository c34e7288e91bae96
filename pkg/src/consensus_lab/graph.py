"""Directed interaction graphs, their Laplacians, and exhaustive subgraph enumeration.

Nodes are 1-based everywhere a user can see them (files, CLI, ``arcs``); matrices are
indexed 0-based. An arc ``(j, i)`` is a link from node ``j`` to node ``i``: node ``i``
listens to ``j``, so it contributes ``-1`` at ``L[i-1, j-1]``.

Arcs are kept in lexicographic order. Bit ``b`` of a subgraph mask refers to
``arcs[b]``; every ensemble, transition matrix and trajectory uses this convention.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CapExceededError, InvalidInputError

MAX_ENUMERATED_ARCS = 24

Arc = tuple[int, int]


@dataclass(frozen=True)
class DirectedGraph:
    n: int
    arcs: tuple[Arc, ...]

    def __post_init__(self):
        _validate(self.n, self.arcs)

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    @property
    def num_subgraphs(self) -> int:
        return 1 << len(self.arcs)

    @property
    def full_mask(self) -> int:
        return (1 << len(self.arcs)) - 1

    def in_neighbors(self, i: int) -> list[int]:
        """Nodes ``j`` with an arc ``(j, i)``."""
        return [j for (j, k) in self.arcs if k == i]

    def in_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for _, i in self.arcs:
            deg[i - 1] += 1
        return deg

    def is_complete(self) -> bool:
        return len(self.arcs) == self.n * (self.n - 1)

    def arc_index(self) -> dict[Arc, int]:
        return {a: b for b, a in enumerate(self.arcs)}

    def sources(self) -> np.ndarray:
        """0-based source node of each arc, in canonical order."""
        return np.array([j - 1 for j, _ in self.arcs], dtype=int)

    def targets(self) -> np.ndarray:
        return np.array([i - 1 for _, i in self.arcs], dtype=int)

    def mask_arcs(self, mask: int) -> tuple[Arc, ...]:
        return tuple(a for b, a in enumerate(self.arcs) if mask >> b & 1)

    def subgraph(self, mask: int) -> "DirectedGraph":
        return DirectedGraph(self.n, self.mask_arcs(mask))

    def relabel(self, perm: Sequence[int]) -> "DirectedGraph":
        """Graph with node ``v`` renamed ``perm[v-1]`` (``perm`` is a 1-based permutation)."""
        if sorted(perm) != list(range(1, self.n + 1)):
            raise InvalidInputError(f"not a permutation of 1..{self.n}: {list(perm)}")
        return build_graph(self.n, [(perm[j - 1], perm[i - 1]) for j, i in self.arcs])

    def to_dict(self) -> dict:
        return {"n": self.n, "arcs": [list(a) for a in self.arcs]}


def _validate(n, arcs):
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 2:
        raise InvalidInputError(f"node count must be an integer >= 2, got {n!r}")
    seen = set()
    for arc in arcs:
        j, i = arc
        if not (1 <= j <= n and 1 <= i <= n):
            raise InvalidInputError(f"arc {arc} has a node index outside [1, {n}]")
        if j == i:
            raise InvalidInputError(f"self-loop {arc} is not allowed")
        if arc in seen:
            raise InvalidInputError(f"duplicate arc {arc}")
        seen.add(arc)
    if list(arcs) != sorted(arcs):
        raise InvalidInputError("arcs must be in canonical (lexicographic) order; use build_graph")


def build_graph(n: int, arcs: Iterable[Sequence[int]]) -> DirectedGraph:
    """Validate and canonicalize a graph.

    Raises :class:`InvalidInputError` on self-loops, out-of-range indices or duplicates.
    """
    pairs = []
    for arc in arcs:
        if len(arc) != 2:
            raise InvalidInputError(f"arc must be a (j, i) pair, got {arc!r}")
        j, i = arc
        if not all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) for v in (j, i)):
            raise InvalidInputError(f"arc endpoints must be integers, got {arc!r}")
        pairs.append((int(j), int(i)))
    if len(set(pairs)) != len(pairs):
        dup = next(a for a in pairs if pairs.count(a) > 1)
        raise InvalidInputError(f"duplicate arc {dup}")
    return DirectedGraph(n, tuple(sorted(pairs)))


def cycle_graph(n: int) -> DirectedGraph:
    """Directed cycle 1 -> 2 -> ... -> n -> 1. For n=2 this is the bidirectional pair."""
    return build_graph(n, [(k, k % n + 1) for k in range(1, n + 1)])


def complete_graph(n: int) -> DirectedGraph:
    return build_graph(n, [(j, i) for j in range(1, n + 1) for i in range(1, n + 1) if i != j])


def laplacian(g: DirectedGraph) -> np.ndarray:
    L = np.zeros((g.n, g.n))
    for j, i in g.arcs:
        L[i - 1, j - 1] = -1.0
        L[i - 1, i - 1] += 1.0
    return L


def arc_laplacians(g: DirectedGraph) -> np.ndarray:
    """Stack of single-arc Laplacians, shape ``(|arcs|, n, n)``."""
    out = np.zeros((g.num_arcs, g.n, g.n))
    for b, (j, i) in enumerate(g.arcs):
        out[b, i - 1, j - 1] = -1.0
        out[b, i - 1, i - 1] = 1.0
    return out


def has_spanning_tree(g: DirectedGraph) -> bool:
    """True iff some root reaches every node along arcs ``j -> i``."""
    succ = [[] for _ in range(g.n)]
    for j, i in g.arcs:
        succ[j - 1].append(i - 1)
    for root in range(g.n):
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in succ[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) == g.n:
            return True
    return False


def mask_bits(num_arcs: int, masks: np.ndarray | None = None) -> np.ndarray:
    """Boolean matrix ``bits[m, b]`` = arc ``b`` present in mask ``m``."""
    if masks is None:
        masks = np.arange(1 << num_arcs, dtype=np.int64)
    masks = np.asarray(masks, dtype=np.int64)
    return (masks[:, None] >> np.arange(num_arcs, dtype=np.int64)) & 1 == 1


def bits_to_mask(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`mask_bits` along the last axis."""
    bits = np.asarray(bits, dtype=np.int64)
    return bits @ (np.int64(1) << np.arange(bits.shape[-1], dtype=np.int64))


def check_enumerable(g: DirectedGraph) -> None:
    if g.num_arcs > MAX_ENUMERATED_ARCS:
        raise CapExceededError(
            f"{g.num_arcs} arcs exceeds the exhaustive-enumeration cap of "
            f"{MAX_ENUMERATED_ARCS} (2^{g.num_arcs} subgraphs)"
        )


def subgraph_laplacians(g: DirectedGraph) -> np.ndarray:
    """All subgraph Laplacians stacked in mask order, shape ``(2^|arcs|, n, n)``."""
    check_enumerable(g)
    bits = mask_bits(g.num_arcs).astype(float)
    flat = bits @ arc_laplacians(g).reshape(g.num_arcs, -1)
    return flat.reshape(-1, g.n, g.n)


def enumerate_subgraphs(g: DirectedGraph) -> list[tuple[int, np.ndarray]]:
    """``(mask, L)`` for every subgraph, in increasing mask order."""
    stack = subgraph_laplacians(g)
    return [(m, stack[m]) for m in range(stack.shape[0])]


def graph_from_dict(data: dict) -> DirectedGraph:
    try:
        n = data["n"]
        arcs = data["arcs"]
    except (KeyError, TypeError) as exc:
        raise InvalidInputError('graph JSON must look like {"n": <int>, "arcs": [[j, i], ...]}') from exc
    if not isinstance(arcs, list):
        raise InvalidInputError("graph 'arcs' must be a list of [j, i] pairs")
    if not isinstance(n, int) or isinstance(n, bool):
        raise InvalidInputError(f"graph 'n' must be an integer, got {n!r}")
    return build_graph(n, [tuple(a) if isinstance(a, (list, tuple)) else (a,) for a in arcs])


def load_graph(path: str | Path) -> DirectedGraph:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise InvalidInputError(f"graph file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"graph file {path} is not valid JSON: {exc}") from exc
    return graph_from_dict(data)


def save_graph(g: DirectedGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(g.to_dict()) + "\n")

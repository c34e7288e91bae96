import json

import numpy as np
import pytest

from consensus_lab.graph import build_graph

FOUR_NODE_ARCS = [(1, 2), (2, 3), (3, 2), (3, 4)]


@pytest.fixture
def four_node():
    return build_graph(4, FOUR_NODE_ARCS)


@pytest.fixture
def four_node_path(tmp_path):
    p = tmp_path / "four_node.json"
    p.write_text(json.dumps({"n": 4, "arcs": [list(a) for a in FOUR_NODE_ARCS]}))
    return p


def random_graph(rng, n_max=4, e_max=5, spanning=True):
    """Random simple digraph, optionally resampled until it has a spanning tree."""
    from consensus_lab.graph import has_spanning_tree

    while True:
        n = int(rng.integers(2, n_max + 1))
        pairs = [(j, i) for j in range(1, n + 1) for i in range(1, n + 1) if i != j]
        e = int(rng.integers(1, min(e_max, len(pairs)) + 1))
        arcs = [pairs[k] for k in rng.choice(len(pairs), e, replace=False)]
        g = build_graph(n, arcs)
        if not spanning or has_spanning_tree(g):
            return g


def naive_laplacian(n, arcs):
    L = np.zeros((n, n))
    for j, i in arcs:
        L[i - 1, j - 1] -= 1
        L[i - 1, i - 1] += 1
    return L


# acceptance criteria append (number, passed, detail) here; printed after the run
ACCEPTANCE_RESULTS = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS.append((number, passed, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)

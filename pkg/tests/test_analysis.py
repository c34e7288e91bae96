import json
import math

import numpy as np
import pytest

from consensus_lab.analysis import (
    analyze,
    apply_lyapunov_map,
    as_divergence_bound,
    contraction_rate_bound,
    critical_tau,
    divergence_bound,
    drift_rate,
    expansion_margin,
    iid_second_moment,
    lyapunov_feasibility,
    lyapunov_iteration,
    markov_second_moment,
    ms_consensus_check,
    power_iteration,
    predicted_disagreement_moment,
    projection_matrix,
    second_moment_radius,
    sharp_margin,
    spectral_curve,
    spectral_radius,
    tau_flat,
    tau_sharp,
)
from consensus_lab.dynamics import SystemConfig
from consensus_lab.ensemble import IidModel, MarkovModel, build_ensemble
from consensus_lab.errors import AnalysisInapplicableError, CapExceededError, InvalidInputError
from consensus_lab.graph import build_graph, complete_graph, cycle_graph, subgraph_laplacians
from consensus_lab.montecarlo import ExperimentConfig, estimate_moments

from conftest import random_graph

FOUR_NODE_TAU_DAGGER = 1.068855  # frozen from the naive eigenvalue scan below


def naive_iid_operator(g, q, tau):
    n = g.n
    J = np.eye(n) - np.ones((n, n)) / n
    out = np.zeros((n * n, n * n))
    for mask, L in enumerate(subgraph_laplacians(g)):
        k = bin(mask).count("1")
        W = np.eye(n) - tau * L
        out += q**k * (1 - q) ** (g.num_arcs - k) * np.kron(W, W)
    return out @ np.kron(J, J)


def naive_markov_operator(g, p, q, tau, proof_form=False):
    n, E = g.n, g.num_arcs
    J = np.eye(n) - np.ones((n, n)) / n
    laps = subgraph_laplacians(g)
    M = len(laps)
    P1 = np.array([[1 - q, q], [p, 1 - p]])
    Pi = np.ones((1, 1))
    for _ in range(E):
        Pi = np.kron(Pi, P1)
    blocks = [[None] * M for _ in range(M)]
    for j in range(M):
        for i in range(M):
            W = np.eye(n) - tau * laps[i if proof_form else j]
            blocks[j][i] = Pi[i, j] * np.kron(W, W) @ np.kron(J, J)
    return np.block(blocks)


def naive_rho(mat):
    return np.abs(np.linalg.eigvals(mat)).max()


def test_iid_operator_matches_naive_sum(four_node):
    ens = build_ensemble(four_node, IidModel(0.37))
    oracle = naive_iid_operator(four_node, 0.37, 0.9)
    assert np.allclose(iid_second_moment(ens, 0.9, "enumerate").matrix, oracle, atol=1e-13)
    assert np.allclose(iid_second_moment(ens, 0.9, "edgewise").matrix, oracle, atol=1e-13)


def test_edgewise_route_on_random_graphs():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = random_graph(rng, n_max=5, e_max=8, spanning=False)
        ens = build_ensemble(g, IidModel(0.6))
        a = iid_second_moment(ens, 1.1, "enumerate").matrix
        b = iid_second_moment(ens, 1.1, "edgewise").matrix
        assert np.allclose(a, b, atol=1e-12)


def test_markov_operator_matches_naive_block(four_node):
    ens = build_ensemble(four_node, MarkovModel(0.4, 0.7))
    op = markov_second_moment(ens, 1.05)
    assert np.allclose(op.matrix, naive_markov_operator(four_node, 0.4, 0.7, 1.05), atol=1e-13)


def test_markov_operator_orderings_share_spectrum():
    g = cycle_graph(3)
    for tau in (0.8, 1.05, 1.2):
        a = naive_rho(naive_markov_operator(g, 0.4, 0.7, tau))
        b = naive_rho(naive_markov_operator(g, 0.4, 0.7, tau, proof_form=True))
        assert a == pytest.approx(b, rel=1e-9)
        assert markov_second_moment(build_ensemble(g, MarkovModel(0.4, 0.7)), tau).spectral_radius() == pytest.approx(
            a, rel=1e-9
        )


def test_power_iteration_agrees_with_dense_solver(four_node):
    for model in (IidModel(0.5), MarkovModel(0.4, 0.7)):
        op = (markov_second_moment if model.kind == "markov" else iid_second_moment)(build_ensemble(four_node, model), 1.0)
        dense = naive_rho(op.matrix)
        res = power_iteration(op.matrix, start=op.start_vector())
        assert res.converged
        assert res.estimate == pytest.approx(dense, rel=1e-8)
    with pytest.raises(InvalidInputError):
        spectral_radius(np.zeros((2, 3)))


def test_four_node_threshold_against_naive_scan(four_node):
    taus = np.arange(1.060, 1.080, 5e-4)
    rho = np.array([naive_rho(naive_iid_operator(four_node, 0.5, t)) for t in taus])
    crossing = taus[np.argmax(rho >= 1)]
    assert crossing - 5e-4 < FOUR_NODE_TAU_DAGGER <= crossing
    assert critical_tau(four_node, IidModel(0.5), tol=1e-5) == pytest.approx(FOUR_NODE_TAU_DAGGER, abs=2e-5)


def test_two_node_pair_closed_form():
    # x1 - x2 is scaled by 1 - tau (b12 + b21): E[.^2] = 1 at tau = 2 / (1 + q)
    for q in (0.3, 0.6, 0.9):
        assert critical_tau(cycle_graph(2), IidModel(q), tol=1e-6) == pytest.approx(2 / (1 + q), abs=1e-6)


def test_deterministic_complete_graph():
    # q = 1: W = I - tau L has eigenvalues 1 - 3 tau on the disagreement space
    assert critical_tau(complete_graph(3), IidModel(1.0), tol=1e-7) == pytest.approx(2 / 3, abs=1e-7)
    cont = critical_tau(complete_graph(3), IidModel(1.0), tol=1e-7, continuous_access=True)
    assert cont == pytest.approx(math.log(3), abs=1e-6)


def test_markov_reduces_to_iid_when_p_is_one_minus_q(four_node):
    for q in (0.3, 0.5, 0.7):
        a = critical_tau(four_node, IidModel(q), 1e-4)
        b = critical_tau(four_node, MarkovModel(1 - q, q), 1e-4)
        assert abs(a - b) <= 2e-4


def test_cycle_thresholds():
    assert 1.1 <= critical_tau(cycle_graph(3), IidModel(0.6)) <= 1.2
    slow_markov = critical_tau(cycle_graph(3), MarkovModel(0.6, 0.9))
    assert 1.0 <= slow_markov <= 1.1
    assert critical_tau(cycle_graph(3), MarkovModel(0.4, 0.7)) == pytest.approx(1.1214, abs=2e-3)


def test_critical_tau_errors(four_node):
    with pytest.raises(AnalysisInapplicableError):
        critical_tau(build_graph(3, [(1, 2), (3, 2)]), IidModel(0.5))
    with pytest.raises(CapExceededError):
        critical_tau(cycle_graph(7), MarkovModel(0.4, 0.7))  # 128 * 49 > 4096
    with pytest.raises(InvalidInputError):
        critical_tau(four_node, IidModel(0.5), tol=0)
    with pytest.raises(AnalysisInapplicableError):
        # effective interval 1 - e^-tau never reaches 1.07
        critical_tau(four_node, IidModel(0.5), continuous_access=True)


def test_ms_check_and_curve(four_node):
    m = IidModel(0.5)
    assert ms_consensus_check(SystemConfig(four_node, m, 1.0))
    assert not ms_consensus_check(SystemConfig(four_node, m, 1.14))
    curve = spectral_curve(four_node, m, [1.0, 1.14])
    assert curve[0][1] == pytest.approx(0.89039, abs=1e-4)
    assert curve[1][1] == pytest.approx(1.15389, abs=1e-4)


def test_small_tau_always_converges():
    rng = np.random.default_rng(2)
    for _ in range(10):
        g = random_graph(rng, n_max=5, e_max=7)
        ens = build_ensemble(g, IidModel(float(rng.uniform(0.2, 1.0))))
        assert second_moment_radius(ens, 0.99 / (g.n - 1)) < 1


def test_lyapunov_certificate(four_node):
    ens = build_ensemble(four_node, IidModel(0.5))
    res = lyapunov_iteration(ens, 1.0)
    assert res.feasible
    S = res.certificate
    assert np.linalg.eigvalsh(S)[0] > 0
    assert np.linalg.eigvalsh(S - apply_lyapunov_map(ens, 1.0, S))[0] > 0.9
    assert not lyapunov_feasibility(ens, 1.14)


def test_lyapunov_markov_matches_spectral(four_node):
    m = MarkovModel(0.4, 0.7)
    ens = build_ensemble(four_node, m)
    tau_d = critical_tau(four_node, m, 1e-4)
    for tau in (0.5, tau_d - 0.02, tau_d + 0.02, 1.5):
        assert lyapunov_feasibility(ens, tau) == ms_consensus_check(SystemConfig(four_node, m, tau))


def test_projected_moment_by_hand_enumeration(four_node):
    x0 = np.array([5.0, 2.0, 1.0, 1.0])
    ens = build_ensemble(four_node, IidModel(0.5))
    J = projection_matrix(4)
    oracle = np.zeros((4, 4))
    for L in subgraph_laplacians(four_node):
        d = J @ (np.eye(4) - L) @ x0
        oracle += np.outer(d, d) / 16
    assert np.allclose(predicted_disagreement_moment(ens, 1.0, x0), oracle, atol=1e-12)
    two = np.zeros((4, 4))
    for L1 in subgraph_laplacians(four_node):
        for L2 in subgraph_laplacians(four_node):
            d = J @ (np.eye(4) - L2) @ (np.eye(4) - L1) @ x0
            two += np.outer(d, d) / 256
    assert np.allclose(predicted_disagreement_moment(ens, 1.0, x0, k=2), two, atol=1e-12)


def test_contraction_bound_holds_in_simulation(four_node):
    tau = 0.2
    bound = contraction_rate_bound(four_node, 0.5, tau)
    assert bound == pytest.approx(1 - 0.5 * (0.5 * 0.2) ** 3)
    s = estimate_moments(ExperimentConfig(SystemConfig(four_node, IidModel(0.5), tau), [5, 2, 1, 1], 4000, 6, 0))
    assert s.mean_X[3] / s.mean_X[0] <= bound
    with pytest.raises(InvalidInputError):
        contraction_rate_bound(four_node, 0.5, 0.5)


# -- almost-sure bounds ---------------------------------------------------------------


def test_tau_sharp_two_node_arc_by_hand():
    g = build_graph(2, [(1, 2)])
    assert tau_sharp(g) == pytest.approx(2.0, abs=1e-6)
    assert sharp_margin(g, 2.0 + 1e-6) >= 0 > sharp_margin(g, 2.0 - 1e-3)


def test_tau_sharp_infinite_with_unreached_node(four_node):
    assert tau_sharp(four_node) == math.inf
    L = subgraph_laplacians(build_graph(3, [(1, 2)]))[1]
    margins = [expansion_margin(L, t) for t in (10.0, 100.0, 1000.0)]
    assert all(m < 0 for m in margins)
    # the margin only approaches zero from below, like -1/(4 tau)
    assert margins[2] * 1000 == pytest.approx(-0.25, rel=0.05)


def test_tau_sharp_complete_pair():
    assert tau_sharp(complete_graph(2)) == pytest.approx(2.0, abs=1e-6)


def bisect_root(f, lo, hi, tol=1e-12):
    while hi - lo > tol * max(1, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


@pytest.mark.parametrize("q", [0.3, 0.5, 0.8])
def test_tau_flat_is_zero_of_drift(q):
    g = build_graph(2, [(1, 2)])
    m = IidModel(q)
    flat = tau_flat(g, m)
    assert bisect_root(lambda t: drift_rate(g, m, t), 1 + 1e-9, 1e6) == pytest.approx(flat, rel=1e-9)


def test_markov_flat_is_zero_of_drift():
    g = complete_graph(2)
    m = MarkovModel(0.5, 0.5)
    assert tau_flat(g, m) == pytest.approx(5.0)
    assert bisect_root(lambda t: drift_rate(g, m, t), 1 + 1e-9, 1e6) == pytest.approx(5.0, rel=1e-9)
    assert tau_flat(complete_graph(3), MarkovModel(0.2, 0.5)) == pytest.approx(1 + (2 / 6) * 6**2)


def test_tau_flat_limits_as_q_goes_to_one():
    pair = build_graph(2, [(1, 2)])
    assert tau_flat(pair, IidModel(1.0)) == 2.0
    assert tau_flat(pair, IidModel(1 - 1e-9)) == pytest.approx(2.0, rel=1e-6)
    four_node = build_graph(4, [(1, 2), (2, 3), (3, 2), (3, 4)])
    assert tau_flat(four_node, IidModel(1.0)) == math.inf
    assert tau_flat(four_node, IidModel(0.999)) == math.inf


def test_divergence_bound_requirements():
    with pytest.raises(AnalysisInapplicableError):
        divergence_bound(cycle_graph(3), MarkovModel(0.4, 0.7))
    with pytest.raises(AnalysisInapplicableError):
        divergence_bound(build_graph(3, [(1, 2)]), IidModel(0.5))
    assert as_divergence_bound(complete_graph(2), MarkovModel(0.5, 0.5)) == pytest.approx(5.0)


def test_analyze_report(four_node):
    rep = analyze(four_node, IidModel(0.5), tol=5e-3)
    data = json.loads(json.dumps(rep.to_dict(), allow_nan=False))
    assert data["tau_dagger"] == pytest.approx(1.07, abs=0.01)
    assert data["tau_sharp"] is None and "tau_sharp" in data["unbounded"]
    assert data["tau_flat"] == pytest.approx(1 + (3 / 8) * 8 ** (0.5 ** -2 / 0.5))
    rhos = [r for _, r in data["spectral_curve"]]
    assert rhos[0] < 1 < rhos[-1]
    assert set(data) >= {"tau_dagger", "tau_sharp", "tau_flat", "tau_natural", "spectral_curve", "model", "graph", "tolerances"}
    rep = analyze(four_node, MarkovModel(0.4, 0.7))
    assert rep.tau_sharp is None and any("complete graph" in n for n in rep.notes)

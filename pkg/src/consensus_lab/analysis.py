"""Mean-square and almost-sure consensus analysis.

The mean-square test works on the disagreement ``d = J x``. Its second moment
``vec E[d d']`` evolves linearly: by ``E[W (x) W] (J (x) J)`` for i.i.d. arcs, and by
the block operator ``Gamma Theta`` (one block per subgraph) for Markov arcs. The
system reaches mean-square consensus iff that operator's spectral radius is below 1.
The feasible intervals form an interval in ``tau``, so the critical interval is found
by bisection rather than by solving a matrix inequality.

Both second-moment operators map positive semidefinite arguments to positive
semidefinite ones, so power iteration started from the identity converges to the
spectral radius itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemConfig, continuous_access_tau
from .ensemble import EdgeModel, IidModel, MarkovModel, SubgraphEnsemble, build_ensemble
from .errors import AnalysisInapplicableError, CapExceededError, ConvergenceError, InvalidInputError
from .graph import DirectedGraph, arc_laplacians, has_spanning_tree, laplacian, subgraph_laplacians

DENSE_EIG_MAX_DIM = 1024
MARKOV_MAX_DIM = 4096
CONSENSUS_MARGIN = 1e-9
# above this many multiply-adds the i.i.d. moment is summed per arc instead of per subgraph
ENUMERATION_BUDGET = 2**26


def projection_matrix(n: int) -> np.ndarray:
    if n < 2:
        raise InvalidInputError("projection needs n >= 2")
    return np.eye(n) - np.full((n, n), 1.0 / n)


@dataclass(frozen=True)
class SecondMomentOperator:
    kind: str  # "iid" | "markov"
    matrix: np.ndarray
    tau: float
    blocks: int = 1

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def start_vector(self) -> np.ndarray:
        """``vec(I)`` in every block, inside the PSD cone the operator preserves."""
        n = int(round(math.sqrt(self.dim // self.blocks)))
        return np.tile(np.eye(n).ravel(), self.blocks)

    def spectral_radius(self) -> float:
        return spectral_radius(self.matrix, start=self.start_vector())


def _step_matrices(laps: np.ndarray, tau: float) -> np.ndarray:
    n = laps.shape[-1]
    return np.eye(n) - tau * laps


def _kron_self(W: np.ndarray) -> np.ndarray:
    """Batched ``W (x) W`` for a stack ``(m, n, n)`` -> ``(m, n^2, n^2)``."""
    m, n, _ = W.shape
    return np.einsum("kab,kcd->kacbd", W, W).reshape(m, n * n, n * n)


def iid_moment_enumerated(laps: np.ndarray, probs: np.ndarray, tau: float) -> np.ndarray:
    """``sum_i pi_i W_i (x) W_i`` by direct summation over subgraphs."""
    n = laps.shape[-1]
    keep = probs > 0
    laps, probs = laps[keep], probs[keep]
    out = np.zeros((n * n, n * n))
    chunk = max(1, ENUMERATION_BUDGET // (n**4 * 4))
    for s in range(0, len(probs), chunk):
        W = _step_matrices(laps[s : s + chunk], tau)
        out += np.einsum("k,kab,kcd->acbd", probs[s : s + chunk], W, W).reshape(n * n, n * n)
    return out


def iid_moment_edgewise(graph: DirectedGraph, q: float, tau: float) -> np.ndarray:
    """``E[W (x) W]`` from per-arc moments, without enumerating subgraphs.

    With ``L = sum_e b_e L_e`` and independent ``b_e ~ Bernoulli(q)``:
    ``E[W(x)W] = I - tau q (L(x)I + I(x)L) + tau^2 (q^2 L(x)L + q(1-q) sum_e L_e(x)L_e)``.
    """
    n = graph.n
    L = laplacian(graph)
    I = np.eye(n)
    single = arc_laplacians(graph)
    diag_term = _kron_self(single).sum(axis=0) if graph.num_arcs else np.zeros((n * n, n * n))
    return (
        np.eye(n * n)
        - tau * q * (np.kron(L, I) + np.kron(I, L))
        + tau**2 * (q * q * np.kron(L, L) + q * (1.0 - q) * diag_term)
    )


def iid_second_moment(ens: SubgraphEnsemble, tau: float, method: str = "auto") -> SecondMomentOperator:
    """``E[W (x) W] (J (x) J)`` for the i.i.d. model."""
    if ens.is_markov:
        raise InvalidInputError("iid_second_moment needs an i.i.d. ensemble")
    g = ens.graph
    n = g.n
    if method == "auto":
        method = "enumerate" if ens.size * n**4 <= ENUMERATION_BUDGET else "edgewise"
    if method == "enumerate":
        EWW = iid_moment_enumerated(ens.laplacians, ens.probabilities, tau)
    elif method == "edgewise":
        EWW = iid_moment_edgewise(g, float(ens.model.q), tau)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    J = projection_matrix(n)
    return SecondMomentOperator("iid", EWW @ np.kron(J, J), float(tau))


def markov_second_moment(ens: SubgraphEnsemble, tau: float) -> SecondMomentOperator:
    """Block operator ``Gamma Theta``; block ``(j, i)`` is ``pi_ij (W_j (x) W_j)(J (x) J)``."""
    if not ens.is_markov:
        raise InvalidInputError("markov_second_moment needs a Markov ensemble")
    n, M = ens.graph.n, ens.size
    dim = M * n * n
    if dim > MARKOV_MAX_DIM:
        raise CapExceededError(f"Markov operator dimension {dim} (= {M} x {n}^2) exceeds {MARKOV_MAX_DIM}")
    J = projection_matrix(n)
    G = _kron_self(_step_matrices(ens.laplacians, tau)) @ np.kron(J, J)
    blocks = G[:, None, :, :] * ens.transition.T[:, :, None, None]
    return SecondMomentOperator("markov", blocks.transpose(0, 2, 1, 3).reshape(dim, dim), float(tau), blocks=M)


def second_moment(ens: SubgraphEnsemble, tau: float) -> SecondMomentOperator:
    return markov_second_moment(ens, tau) if ens.is_markov else iid_second_moment(ens, tau)


def predicted_disagreement_moment(ens: SubgraphEnsemble, tau: float, x0, k: int = 1) -> np.ndarray:
    """``E[d(k) d(k)']`` for the i.i.d. model, from ``k`` applications of the operator."""
    if ens.is_markov:
        raise InvalidInputError("predicted_disagreement_moment is implemented for the i.i.d. model")
    n = ens.graph.n
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise InvalidInputError(f"x0 must have length {n}")
    op = iid_second_moment(ens, tau).matrix
    v = np.outer(x0, x0).ravel()
    for _ in range(k):
        v = op @ v
    J = projection_matrix(n)
    return J @ v.reshape(n, n) @ J


# -- spectral radius ------------------------------------------------------------------


@dataclass(frozen=True)
class PowerIterationResult:
    estimate: float
    converged: bool
    iterations: int


def power_iteration(m: np.ndarray, start=None, tol: float = 1e-10, max_iter: int = 100_000) -> PowerIterationResult:
    """Spectral radius estimate from norm growth ``||A^k v||``.

    The start vector is deterministic (all ones unless given). Converged when two
    successive two-step estimates agree to ``tol`` relative.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    v = np.ones(n) if start is None else np.asarray(start, dtype=float).copy()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise InvalidInputError("power iteration start vector is zero")
    v /= norm
    prev = None
    est = 0.0
    for it in range(1, max_iter + 1):
        w = m @ v
        n1 = np.linalg.norm(w)
        if n1 == 0:
            return PowerIterationResult(0.0, True, it)
        w /= n1
        u = m @ w
        n2 = np.linalg.norm(u)
        if n2 == 0:
            return PowerIterationResult(0.0, True, it)
        est = math.sqrt(n1 * n2)
        if prev is not None and abs(est - prev) <= tol * max(1.0, est):
            return PowerIterationResult(est, True, it)
        prev = est
        v = u / n2
    return PowerIterationResult(est, False, max_iter)


def spectral_radius(m, start=None, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest eigenvalue modulus: dense eigensolve up to ``DENSE_EIG_MAX_DIM``, power iteration beyond."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"spectral radius needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    if m.shape[0] == 0:
        return 0.0
    if m.shape[0] <= DENSE_EIG_MAX_DIM:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    res = power_iteration(m, start=start, tol=tol, max_iter=max_iter)
    if not res.converged:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations (best estimate {res.estimate:.12g})",
            estimate=res.estimate,
        )
    return res.estimate


# -- mean-square threshold ------------------------------------------------------------


def _effective_tau(tau: float, continuous_access: bool) -> float:
    if not tau > 0 or not math.isfinite(tau):
        raise InvalidInputError(f"inter-sampling interval must be positive and finite, got {tau}")
    return continuous_access_tau(tau) if continuous_access else float(tau)


def second_moment_radius(ens: SubgraphEnsemble, tau: float) -> float:
    return second_moment(ens, tau).spectral_radius()


def ms_consensus_check(config: SystemConfig) -> bool:
    """Mean-square consensus verdict at the config's constant interval."""
    ens = build_ensemble(config.graph, config.model)
    return second_moment_radius(ens, config.constant_tau()) < 1.0 - CONSENSUS_MARGIN


def spectral_curve(graph, model, taus, continuous_access: bool = False) -> list[tuple[float, float]]:
    ens = build_ensemble(graph, model)
    return [(float(t), second_moment_radius(ens, _effective_tau(t, continuous_access))) for t in taus]


def critical_tau(graph: DirectedGraph, model: EdgeModel, tol: float = 1e-3, continuous_access: bool = False) -> float:
    """Largest interval giving mean-square consensus, to within ``tol``.

    Bracket: ``1/(2(N-1))`` is always feasible; the upper end doubles until infeasible
    (at most ``2^20`` times the lower end).
    """
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    if not has_spanning_tree(graph):
        raise AnalysisInapplicableError("graph has no directed spanning tree; no interval gives consensus")
    ens = build_ensemble(graph, model)
    if ens.is_markov:
        # fail fast on the dimension guard before bisecting
        if ens.size * graph.n**2 > MARKOV_MAX_DIM:
            raise CapExceededError(
                f"Markov operator dimension {ens.size * graph.n ** 2} exceeds {MARKOV_MAX_DIM}"
            )

    def feasible(t):
        return second_moment_radius(ens, _effective_tau(t, continuous_access)) < 1.0 - CONSENSUS_MARGIN

    lo = 1.0 / (2 * (graph.n - 1))
    if not feasible(lo):
        raise AnalysisInapplicableError(f"no mean-square consensus even at tau = {lo:g}")
    cap = 2.0**20 * lo
    hi = 2 * lo
    while feasible(hi):
        lo = hi
        hi *= 2
        if hi > cap:
            raise AnalysisInapplicableError(f"every tau up to {cap:g} is feasible; threshold bracket cap exceeded")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- Lyapunov iteration ---------------------------------------------------------------


def _lyapunov_map(ens: SubgraphEnsemble, tau: float):
    n = ens.graph.n
    J = projection_matrix(n)
    A = J @ _step_matrices(ens.laplacians, tau) @ J
    if ens.is_markov:
        Pi = ens.transition

        def phi(S):
            # phi_j(S) = A_j (sum_i pi_ij S_i) A_j'
            mixed = np.einsum("ij,iab->jab", Pi, S)
            return A @ mixed @ A.transpose(0, 2, 1)

        start = np.tile(np.eye(n), (ens.size, 1, 1))
    else:
        probs = ens.probabilities
        keep = probs > 0
        A, probs = A[keep], probs[keep]

        def phi(S):
            return np.einsum("k,kab,bc,kdc->ad", probs, A, S, A)

        start = np.eye(n)
    return phi, start


@dataclass
class LyapunovResult:
    feasible: bool
    iterations: int
    certificate: np.ndarray | None = None  # S = sum_k phi^k(I), when feasible


def lyapunov_iteration(ens: SubgraphEnsemble, tau: float, max_iter: int = 100_000, tol: float = 1e-10) -> LyapunovResult:
    """Build ``S = sum_k phi^k(I)`` term by term.

    Feasible once the terms have decayed below ``tol`` relative to the first; the
    partial sum is then returned as the certificate. Infeasible once they have grown
    past ``1/tol``.
    """
    phi, term = _lyapunov_map(ens, tau)
    total = term.copy()
    n0 = np.linalg.norm(term)
    for it in range(1, max_iter + 1):
        term = phi(term)
        total += term
        size = np.linalg.norm(term)
        if size <= tol * n0:
            return LyapunovResult(True, it, total)
        if size >= n0 / tol or not math.isfinite(size):
            return LyapunovResult(False, it)
    raise ConvergenceError(f"Lyapunov iteration inconclusive after {max_iter} iterations; raise max_iter")


def lyapunov_feasibility(ens: SubgraphEnsemble, tau: float, max_iter: int = 100_000, tol: float = 1e-10) -> bool:
    """Whether some ``S > 0`` with ``phi(S) < S`` exists (coupled form for Markov arcs)."""
    return lyapunov_iteration(ens, tau, max_iter, tol).feasible


def apply_lyapunov_map(ens: SubgraphEnsemble, tau: float, S: np.ndarray) -> np.ndarray:
    phi, _ = _lyapunov_map(ens, tau)
    return phi(S)


# -- expected contraction -------------------------------------------------------------


def contraction_eta(n: int, tau: float) -> float:
    return min(tau, 1.0 - (n - 1) * tau)


def contraction_rate_bound(graph: DirectedGraph, q: float, tau: float) -> float:
    """Bound on ``E[X(k+N-1)] / E[X(k)]`` for i.i.d. arcs: ``1 - (q eta)^(N-1) / 2``."""
    n = graph.n
    if not 0 < tau < 1.0 / (n - 1):
        raise InvalidInputError(f"contraction bound needs 0 < tau < 1/(N-1) = {1.0 / (n - 1):g}, got {tau}")
    if not 0 < q <= 1:
        raise InvalidInputError("q must lie in (0, 1]")
    if not has_spanning_tree(graph):
        raise AnalysisInapplicableError("contraction bound needs a directed spanning tree")
    eta = contraction_eta(n, tau)
    return 1.0 - 0.5 * (q * eta) ** (n - 1)


# -- almost-sure divergence -----------------------------------------------------------


def _expansion_parts(L: np.ndarray, J: np.ndarray):
    A = L.T @ J @ L
    B = J @ L + L.T @ J
    return 0.5 * (A + A.T), 0.5 * (B + B.T)


def expansion_margin(L: np.ndarray, tau: float) -> float:
    """``lambda_min`` of the symmetric part of ``tau L'JL - JL - L'J``."""
    J = projection_matrix(L.shape[0])
    A, B = _expansion_parts(L, J)
    return float(np.linalg.eigvalsh(tau * A - B)[0])


def sharp_margin(graph: DirectedGraph, tau: float) -> float:
    """Minimum of :func:`expansion_margin` over every subgraph."""
    return min(expansion_margin(L, tau) for L in subgraph_laplacians(graph))


def subgraph_sharp_tau(L: np.ndarray, tol: float = 1e-9) -> float:
    """Smallest ``tau >= 0`` with ``lambda_min(tau A - B) >= 0``, or ``inf`` if none.

    ``A = L'JL`` and ``B = JL + L'J``. On ``ker A = ker L`` the form ``B`` vanishes,
    so a finite answer exists iff ``B`` also has no cross terms into that kernel,
    i.e. ``L'J w = 0`` for every ``w`` with ``L w = 0``. This fails, for instance, when
    a node that no arc reaches coexists with an arc elsewhere: the minimum eigenvalue
    then only tends to 0 from below.
    """
    n = L.shape[0]
    J = projection_matrix(n)
    A, B = _expansion_parts(L, J)
    scale = max(1.0, np.abs(A).max(), np.abs(B).max())
    if np.abs(A).max() <= 1e-14 * scale:
        return 0.0  # empty subgraph: tau*0 - 0 >= 0 for all tau
    _, sv, vt = np.linalg.svd(L)
    kernel = vt[sv <= 1e-10 * max(1.0, sv[0])]
    if kernel.size and np.abs(B @ kernel.T).max() > 1e-9 * scale:
        return math.inf
    eigA = np.linalg.eigvalsh(A)
    pos = eigA[eigA > 1e-10 * eigA[-1]]
    hi = max(np.linalg.eigvalsh(B)[-1], 0.0) / pos[0] + 1.0
    eps = 1e-12 * scale

    def ok(t):
        return np.linalg.eigvalsh(t * A - B)[0] >= -eps * max(1.0, t)

    if ok(0.0):
        return 0.0
    lo = 0.0
    while not ok(hi):  # the bound above is already sufficient; guard against rounding
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def tau_sharp(graph: DirectedGraph, tol: float = 1e-9) -> float:
    """Above this interval every subgraph expands disagreement by at least ``1/(2N)`` per step.

    Returns ``inf`` when some subgraph admits no finite interval (typical for N >= 3).
    """
    best = 0.0
    for L in subgraph_laplacians(graph):
        t = subgraph_sharp_tau(L, tol)
        if t == math.inf:
            return math.inf
        best = max(best, float(t))
    return best


def iid_q_star(graph: DirectedGraph, q: float) -> float:
    """``min over arcs (j,i) of (1-q)^(|N_i| + |N_j|)``."""
    deg = graph.in_degrees()
    return min((1.0 - q) ** (deg[i - 1] + deg[j - 1]) for j, i in graph.arcs)


def _iid_flat_exponent(graph: DirectedGraph, q: float) -> float:
    """``(1-q) / (q* q)``, with the ``q -> 1`` limit taken analytically."""
    deg = graph.in_degrees()
    dmax = max(deg[i - 1] + deg[j - 1] for j, i in graph.arcs)
    if q == 1.0:
        return 1.0 if dmax == 1 else math.inf
    return (1.0 - q) ** (1 - dmax) / q


def _flat_from_exponent(n: int, exponent: float) -> float:
    # tau > 1 + (N-1)/(2N) * (2N)^exponent
    log_term = exponent * math.log(2 * n)
    if log_term > 700:
        return math.inf
    return 1.0 + (n - 1) / (2 * n) * math.exp(log_term)


def markov_q_star(model: MarkovModel) -> float:
    return min(1.0 - model.p, model.q)


def tau_flat(graph: DirectedGraph, model: EdgeModel) -> float:
    """Interval above which the log-growth drift of the disagreement is positive."""
    if not graph.arcs:
        raise AnalysisInapplicableError("graph has no arcs")
    n = graph.n
    if isinstance(model, IidModel):
        return _flat_from_exponent(n, _iid_flat_exponent(graph, float(model.q)))
    if not graph.is_complete():
        raise AnalysisInapplicableError("the Markov almost-sure divergence bound requires a complete graph")
    return _flat_from_exponent(n, 1.0 / markov_q_star(model))


def drift_rate(graph: DirectedGraph, model: EdgeModel, tau: float) -> float:
    """Lower bound on the mean per-step log growth of the agreement (needs ``tau > 1``)."""
    n = graph.n
    if isinstance(model, IidModel):
        q = float(model.q)
        a = q * iid_q_star(graph, q) / (1.0 - q) if q < 1 else 1.0 / _iid_flat_exponent(graph, q)
    else:
        a = markov_q_star(model)
    return a * math.log((tau - 1.0) / (n - 1)) + (1.0 - a) * math.log(1.0 / (2 * n))


@dataclass(frozen=True)
class DivergenceBound:
    tau_sharp: float
    tau_flat: float
    q_star: float

    @property
    def tau_natural(self) -> float:
        return max(self.tau_sharp, self.tau_flat)


def divergence_bound(graph: DirectedGraph, model: EdgeModel, sharp_tol: float = 1e-9) -> DivergenceBound:
    if isinstance(model, IidModel):
        if not has_spanning_tree(graph):
            raise AnalysisInapplicableError("almost-sure divergence bound needs a directed spanning tree")
        q_star = iid_q_star(graph, float(model.q))
    else:
        if not graph.is_complete():
            raise AnalysisInapplicableError("the Markov almost-sure divergence bound requires a complete graph")
        q_star = markov_q_star(model)
    return DivergenceBound(tau_sharp(graph, sharp_tol), tau_flat(graph, model), q_star)


def as_divergence_bound(graph: DirectedGraph, model: EdgeModel) -> float:
    """Interval above which the system diverges almost surely (``max`` of the two bounds)."""
    return divergence_bound(graph, model).tau_natural


# -- report ---------------------------------------------------------------------------


@dataclass
class AnalysisReport:
    tau_dagger: float
    tau_sharp: float | None
    tau_flat: float | None
    tau_natural: float | None
    spectral_curve: list[tuple[float, float]]
    bisection_tolerance: float
    model: dict = field(default_factory=dict)
    graph: dict = field(default_factory=dict)
    continuous_access: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def enc(v):
            return None if v is None or not math.isfinite(v) else float(v)

        unbounded = [k for k in ("tau_sharp", "tau_flat", "tau_natural") if getattr(self, k) == math.inf]
        return {
            "tau_dagger": enc(self.tau_dagger),
            "tau_sharp": enc(self.tau_sharp),
            "tau_flat": enc(self.tau_flat),
            "tau_natural": enc(self.tau_natural),
            "unbounded": unbounded,
            "spectral_curve": [[float(t), float(r)] for t, r in self.spectral_curve],
            "model": self.model,
            "graph": self.graph,
            "continuous_access": self.continuous_access,
            "tolerances": {
                "bisection": self.bisection_tolerance,
                "consensus_margin": CONSENSUS_MARGIN,
                "eigenvalue": 1e-10,
            },
            "notes": self.notes,
        }


def default_curve_grid(tau_dagger: float, points: int = 41) -> np.ndarray:
    return np.linspace(0.05, 2.0, points) * max(tau_dagger, 1e-3)


def analyze(
    graph: DirectedGraph,
    model: EdgeModel,
    tol: float = 1e-3,
    curve_taus=None,
    continuous_access: bool = False,
) -> AnalysisReport:
    """Every threshold for one graph/model pair.

    The almost-sure fields are ``None`` when their hypotheses fail (a note says why);
    mean-square failures raise.
    """
    tau_d = critical_tau(graph, model, tol, continuous_access)
    taus = default_curve_grid(tau_d) if curve_taus is None else np.asarray(curve_taus, dtype=float)
    curve = spectral_curve(graph, model, taus, continuous_access)
    notes = []
    try:
        bound = divergence_bound(graph, model)
        sharp, flat, natural = bound.tau_sharp, bound.tau_flat, bound.tau_natural
        if continuous_access:
            notes.append("almost-sure bounds are stated for the effective interval 1 - exp(-tau)")
        if sharp == math.inf:
            notes.append("tau_sharp is unbounded: some subgraph never satisfies the expansion condition")
    except AnalysisInapplicableError as exc:
        sharp = flat = natural = None
        notes.append(f"almost-sure bound not applicable: {exc}")
    return AnalysisReport(
        tau_dagger=tau_d,
        tau_sharp=sharp,
        tau_flat=flat,
        tau_natural=natural,
        spectral_curve=curve,
        bisection_tolerance=tol,
        model=model.to_dict(),
        graph=graph.to_dict(),
        continuous_access=continuous_access,
        notes=notes,
    )

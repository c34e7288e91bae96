"""Command-line entry point: ``consensus-lab <command> [options]``.

Exit codes: 0 success, 1 numerical failure, 2 invalid input, 3 size cap exceeded,
4 analysis not applicable.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import export
from .analysis import analyze
from .dynamics import SystemConfig, simulate
from .ensemble import parse_model
from .errors import AnalysisInapplicableError, ConsensusLabError, InvalidInputError
from .graph import MAX_ENUMERATED_ARCS, has_spanning_tree, load_graph
from .montecarlo import ExperimentConfig, estimate_moments, sweep_N, trial_rng

# x0 "random:lo:hi" draws from this spawn key so it never collides with trial streams
X0_SPAWN_KEY = 2**63 - 1


def parse_x0(text: str, n: int, seed: int) -> np.ndarray:
    text = text.strip()
    if text == "spread":
        return np.linspace(0.0, n - 1.0, n)
    if text.startswith("random:"):
        parts = text.split(":")
        try:
            lo, hi = float(parts[1]), float(parts[2])
        except (IndexError, ValueError) as exc:
            raise InvalidInputError(f"bad --x0 {text!r}; expected random:<lo>:<hi>") from exc
        if len(parts) != 3 or not lo < hi:
            raise InvalidInputError(f"bad --x0 {text!r}; expected random:<lo>:<hi> with lo < hi")
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(X0_SPAWN_KEY,)))
        return rng.uniform(lo, hi, n)
    try:
        x0 = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise InvalidInputError(f"bad --x0 {text!r}") from exc
    if x0.shape != (n,):
        raise InvalidInputError(f"--x0 has {len(x0)} entries but the graph has {n} nodes")
    if not np.all(np.isfinite(x0)):
        raise InvalidInputError("--x0 entries must be finite")
    return x0


def parse_nodes(text: str) -> list[int]:
    """``"3:8"`` (inclusive range) or ``"3,5,8"``."""
    try:
        if ":" in text:
            a, b = text.split(":")
            out = list(range(int(a), int(b) + 1))
        else:
            out = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise InvalidInputError(f"bad --nodes {text!r}") from exc
    if not out or min(out) < 2:
        raise InvalidInputError("--nodes must list sizes >= 2")
    return out


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError("must be positive and finite")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="consensus-lab", description="Sampled-data consensus over random directed networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    out = _Parser(add_help=False)
    out.add_argument("--out", default="-", help="output path ('-' for stdout)")
    out.add_argument("--format", choices=["csv", "json"], default=None)
    out.add_argument("--plot", metavar="PNG", help="also render a figure to this file")

    graph = _Parser(add_help=False)
    graph.add_argument("--graph", required=True, help='graph JSON file {"n": N, "arcs": [[j, i], ...]}')

    model = _Parser(add_help=False)
    model.add_argument("--model", required=True, help="model as inline JSON or a JSON file")
    model.add_argument("--continuous-access", action="store_true", help="use the effective interval 1 - exp(-tau)")

    sim = _Parser(add_help=False)
    sim.add_argument("--tau", default="1.0", help="interval: a number, 'a,b,...' (periodic) or 'linspace:a:b'")
    sim.add_argument("--kmax", type=_positive_int, default=150)
    sim.add_argument("--seed", type=_seed, default=0)
    sim.add_argument("--x0", default="spread", help="'5,2,1,1', 'random:<lo>:<hi>' or 'spread'")

    sub.add_parser("check-graph", parents=[graph], help="summarize a graph file")

    a = sub.add_parser("analyze", parents=[graph, model, out], help="thresholds and spectral curve (JSON)")
    a.add_argument("--tol", type=_positive_float, default=1e-3)

    s = sub.add_parser("simulate", parents=[graph, model, sim, out], help="one trajectory")
    s.add_argument("--full-state", action="store_true", help="add x_1..x_N columns")

    m = sub.add_parser("moments", parents=[graph, model, sim, out], help="Monte Carlo moment series")
    m.add_argument("--trials", type=_positive_int, default=10_000)
    m.add_argument("--threads", type=_positive_int, default=None)

    w = sub.add_parser("sweep", parents=[model, out], help="critical interval across graph sizes")
    w.add_argument("--family", choices=["cycle", "complete"], default="cycle")
    w.add_argument("--nodes", default="2:6", help="sizes as 'a:b' (inclusive) or 'a,b,c'")
    w.add_argument("--tol", type=_positive_float, default=1e-3)
    return p


def _cmd_check_graph(args):
    g = load_graph(args.graph)
    print(f"N: {g.n}")
    print(f"|E|: {g.num_arcs}")
    print(f"spanning tree: {'yes' if has_spanning_tree(g) else 'no'}")
    if g.num_arcs <= MAX_ENUMERATED_ARCS:
        print(f"M: {g.num_subgraphs}")
    else:
        print(f"M: 2^{g.num_arcs} (exceeds the enumeration cap of 2^{MAX_ENUMERATED_ARCS})")
    return 0


def _cmd_analyze(args):
    if args.format == "csv":
        raise InvalidInputError("analyze writes JSON only")
    g = load_graph(args.graph)
    mdl = parse_model(args.model)
    report = analyze(g, mdl, tol=args.tol, continuous_access=args.continuous_access)
    export.write_text(export.report_json(report), args.out)
    if args.plot:
        from .plotting import plot_spectral_curve

        plot_spectral_curve(report, args.plot)
    if report.tau_sharp is None:
        for note in report.notes:
            print(note, file=sys.stderr)
        return AnalysisInapplicableError.exit_code
    return 0


def _system(args):
    g = load_graph(args.graph)
    mdl = parse_model(args.model)
    return SystemConfig(g, mdl, args.tau, args.continuous_access)


def _cmd_simulate(args):
    system = _system(args)
    x0 = parse_x0(args.x0, system.graph.n, args.seed)
    traj = simulate(system, x0, args.kmax, trial_rng(args.seed, 0), store_states=args.full_state or None)
    if args.format == "json":
        text = export.trajectory_json(traj)
    else:
        text = export.trajectory_csv(traj, full_state=args.full_state)
    export.write_text(text, args.out)
    if args.plot:
        from .plotting import plot_trajectory

        plot_trajectory(traj, args.plot)
    return 0


def _cmd_moments(args):
    system = _system(args)
    x0 = parse_x0(args.x0, system.graph.n, args.seed)
    cfg = ExperimentConfig(system, x0, args.trials, args.kmax, args.seed)
    series = estimate_moments(cfg, threads=args.threads)
    text = export.moments_json(series) if args.format == "json" else export.moments_csv(series)
    export.write_text(text, args.out)
    if args.plot:
        from .plotting import plot_moments

        plot_moments(series, args.plot)
    return 0


def _cmd_sweep(args):
    mdl = parse_model(args.model)
    table = sweep_N(args.family, parse_nodes(args.nodes), mdl, args.tol, args.continuous_access)
    for n, why in table.skipped.items():
        print(f"N={n} skipped: {why}", file=sys.stderr)
    text = export.sweep_json(table) if args.format == "json" else export.sweep_csv(table)
    export.write_text(text, args.out)
    if args.plot:
        from .plotting import plot_sweep

        plot_sweep(table, args.plot)
    return 0


COMMANDS = {
    "check-graph": _cmd_check_graph,
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
    "moments": _cmd_moments,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return COMMANDS[args.command](args)
    except ConsensusLabError as exc:
        print(f"consensus-lab: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"consensus-lab: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"consensus-lab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

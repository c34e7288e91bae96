"""CSV and JSON writers for trajectories, moment series, sweeps and reports.

Floats are written with ``repr`` so files round-trip exactly and repeated runs are
byte-identical. Non-finite values appear as ``inf``/``-inf``/``nan`` in CSV.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import AnalysisReport
from .dynamics import Trajectory
from .montecarlo import MomentSeries, SweepTable

TRAJECTORY_COLUMNS = ["k", "tau_k", "subgraph_mask", "X_k", "log10_X_k"]
MOMENT_COLUMNS = ["k", "mean_X", "mean_X2", "stderr_X2", "saturated_fraction"]
SWEEP_COLUMNS = ["N", "tau_dagger", "model", "params"]


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return buf.getvalue()


def trajectory_csv(traj: Trajectory, full_state: bool = False) -> str:
    """One row per sample; ``tau_k`` and ``subgraph_mask`` are empty on the final row."""
    header = list(TRAJECTORY_COLUMNS)
    n = 0
    if full_state:
        if traj.states is None:
            raise ValueError("trajectory has no stored states")
        n = traj.states.shape[1]
        header += [f"x_{i + 1}" for i in range(n)]
    K = len(traj.taus)
    X = traj.agreement
    log10 = traj.log10_agreement
    rows = []
    for k in range(K + 1):
        row = [k]
        row += [traj.taus[k], int(traj.masks[k])] if k < K else ["", ""]
        row += [X[k], log10[k]]
        if full_state:
            row += list(traj.states[k])
        rows.append(row)
    return _csv_text(header, rows)


def moments_csv(series: MomentSeries) -> str:
    rows = zip(series.k, series.mean_X, series.mean_X2, series.stderr_X2, series.saturated_fraction)
    return _csv_text(MOMENT_COLUMNS, rows)


def sweep_csv(table: SweepTable) -> str:
    return _csv_text(SWEEP_COLUMNS, [(r.N, r.tau_dagger, r.model, r.params) for r in table.rows])


def report_json(report: AnalysisReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def moments_json(series: MomentSeries) -> str:
    def enc(a):
        return [None if not math.isfinite(v) else float(v) for v in a]

    data = {
        "k": [int(k) for k in series.k],
        "mean_X": enc(series.mean_X),
        "mean_X2": enc(series.mean_X2),
        "stderr_X2": enc(series.stderr_X2),
        "saturated_fraction": enc(series.saturated_fraction),
        "trials_used": series.trials_used,
    }
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def sweep_json(table: SweepTable) -> str:
    data = {
        "rows": [{"N": r.N, "tau_dagger": r.tau_dagger, "model": r.model, "params": r.params} for r in table.rows],
        "skipped": {str(n): why for n, why in table.skipped.items()},
    }
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def trajectory_json(traj: Trajectory) -> str:
    data = {
        "tau_k": [float(t) for t in traj.taus],
        "subgraph_mask": [int(m) for m in traj.masks],
        "log10_X_k": [None if not math.isfinite(v) else float(v) for v in traj.log10_agreement],
        "saturated_at": traj.saturated_at,
    }
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_text(text: str, path: str | Path | None) -> None:
    """Write to ``path``, or to standard output when ``path`` is None or ``-``."""
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    Path(path).write_text(text)

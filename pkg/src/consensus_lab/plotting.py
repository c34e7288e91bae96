"""Optional PNG figures written next to the CSV/JSON output (``--plot``)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_spectral_curve(report, path):
    """rho(tau) with the critical interval marked."""
    curve = np.asarray(report.spectral_curve, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(curve[:, 0], curve[:, 1], marker=".", lw=1)
    ax.axhline(1.0, color="grey", lw=0.8, ls="--")
    ax.axvline(report.tau_dagger, color="C3", lw=0.8, label=f"tau_dagger = {report.tau_dagger:.4f}")
    ax.set_xlabel("tau")
    ax.set_ylabel("spectral radius")
    ax.legend()
    _save(fig, path)


def plot_trajectory(traj, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(len(traj)), traj.log10_agreement, lw=1)
    ax.set_xlabel("k")
    ax.set_ylabel("log10 agreement")
    _save(fig, path)


def plot_moments(series, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ok = np.isfinite(series.mean_X2) & (series.mean_X2 > 0)
    ax.semilogy(series.k[ok], series.mean_X2[ok], lw=1, label="mean X^2")
    ax.semilogy(series.k[ok], np.maximum(series.mean_X[ok], np.finfo(float).tiny), lw=1, label="mean X")
    ax.set_xlabel("k")
    ax.legend()
    _save(fig, path)


def plot_sweep(table, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ns = [r.N for r in table.rows]
    taus = [r.tau_dagger for r in table.rows]
    ax.plot(ns, taus, marker="o", lw=1)
    if ns:
        ax.set_xticks(ns)
    ax.set_xlabel("N")
    ax.set_ylabel("tau_dagger")
    ax.set_ylim(bottom=min([1.0] + [t for t in taus if math.isfinite(t)]) * 0.95)
    _save(fig, path)

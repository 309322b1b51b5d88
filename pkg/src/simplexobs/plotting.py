"""Figures written next to the CSV/JSON reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

params = {
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (5.0, 3.6),
    # stable ids and no timestamp so repeated runs give identical files
    "svg.hashsalt": "simplexobs",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def remainder_plot(reports, T0, path):
    """log-log |ratio - 1| and |ratio - asymptote| against T for each face."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for r in reports:
            x = r.T / T0 if T0 else r.T
            ax.loglog(x, np.abs(r.remainder), "o-", label=f"face {r.face}: |N/P - 1|")
            osc = np.abs(r.oscillatory_remainder)
            if np.any(osc > 0):
                ax.loglog(x[osc > 0], osc[osc > 0], "--", alpha=0.7,
                          label=f"face {r.face}: oscillatory part")
        if reports:
            x = reports[0].T / T0 if T0 else reports[0].T
            ref = np.abs(reports[0].oscillatory_remainder)
            if np.any(ref > 0):
                c = float(np.max(ref * x))
                ax.loglog(x, c / x, "k:", label="1/T")
        ax.set_xlabel("T / T0" if T0 else "T")
        ax.set_ylabel("remainder")
        ax.legend(loc="best")
        return _save(fig, path)


def convergence_plot(levels, rel_errors, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        h = 2.0 ** -np.asarray(levels, float)
        err = np.asarray(rel_errors)
        for k in range(err.shape[1]):
            ax.loglog(h, err[:, k], "o-", label=f"k={k + 1}" if k < 5 else None)
        ax.loglog(h, err[0, 0] * (h / h[0]) ** 2, "k:", label="O(h^2)")
        ax.set_xlabel("h / h0")
        ax.set_ylabel("relative eigenvalue error")
        ax.legend(loc="best")
        return _save(fig, path)


def counterexample_plot(ns, ratios, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.loglog(ns, ratios, "o-")
        ax.set_xlabel("n")
        ax.set_ylabel("observability / energy")
        return _save(fig, path)


def residual_plot(labels, residuals, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(len(residuals)), residuals, "o")
        ax.set_xticks(np.arange(len(residuals)))
        ax.set_xticklabels(labels, rotation=45, ha="right")
        ax.set_ylabel("relative residual")
        return _save(fig, path)

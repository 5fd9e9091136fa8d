"""Figure rendering for the report path.

Figures are written next to the delimited tables; the Agg backend keeps
rendering headless and deterministic.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_sweep", "plot_invariance"]


def plot_sweep(rows, path: str) -> str:
    """Convergence sweep: the three covariances and the gaps versus n."""
    n = [r["n"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(n, [r["C_aLr"] for r in rows], "o-", label=r"$C_{a,\Lambda,r}$")
    ax1.plot(n, [r["C_aLinf"] for r in rows], "s-", label=r"$C_{a,\Lambda,\infty}$")
    ax1.plot(n, [r["C_kappa"] for r in rows], "k--", label=r"$C^{\kappa}$")
    ax1.set_xlabel("n")
    ax1.set_ylabel("covariance")
    ax1.legend(fontsize=8)
    gaps = [max(r["gap_total"], 1e-300) for r in rows]
    ax2.semilogy(n, gaps, "o-", label=r"$|C_{a,\Lambda,r} - C^{\kappa}|$")
    ax2.set_xlabel("n")
    ax2.set_ylabel("gap")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_invariance(rows, path: str) -> str:
    """Measured invariance gap with error bars against the schedule bound."""
    n = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.errorbar(n, [r["gap"] for r in rows], yerr=[r["stderr"] for r in rows],
                fmt="o-", capsize=3, label="measured gap")
    ax.plot(n, [r["bound"] for r in rows], "k--", label="schedule bound")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("|<F_T> - <F>|")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

"""Noise-ratio residual figure: log-log residuals of the small-step limit.

Reads gamma_residuals.csv (columns alpha, eps, gamma_sq_eps, target,
gamma_residual, N_eps, N_residual, D_eps, D_residual).  The covariance
numerator and normalizer residuals |N_eps - 1/(2 alpha)| and |D_eps - 2|
decay like eps and carry the monotone trend; the assembled ratio is
exact at every eps, so its residual hugs the float floor and is drawn
faintly as evidence rather than trend.
"""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib.pyplot as plt

from plot_common import load_rows, run_script

REQUIRED = (
    "alpha",
    "eps",
    "gamma_sq_eps",
    "target",
    "gamma_residual",
    "N_eps",
    "N_residual",
    "D_eps",
    "D_residual",
)
NUMERIC = REQUIRED

FLOOR = 1e-18  # keeps exactly-zero residuals plottable on the log axis


def draw(ax, rows: list[dict]) -> None:
    alphas = sorted(set(r["alpha"] for r in rows))
    colors = plt.cm.viridis([i / max(len(alphas) - 1, 1) * 0.8 for i in range(len(alphas))])
    for alpha, color in zip(alphas, colors):
        sub = sorted((r for r in rows if r["alpha"] == alpha), key=lambda r: -r["eps"])
        eps = [r["eps"] for r in sub]
        ax.loglog(
            eps,
            [max(r["N_residual"], FLOOR) for r in sub],
            "o-",
            color=color,
            label=f"numerator, alpha={alpha:g}",
        )
        ax.loglog(
            eps,
            [max(r["D_residual"], FLOOR) for r in sub],
            "s--",
            color=color,
            label=f"normalizer, alpha={alpha:g}",
        )
        ax.loglog(
            eps,
            [max(r["gamma_residual"], FLOOR) for r in sub],
            "x:",
            color=color,
            alpha=0.45,
        )
    eps_all = sorted(set(r["eps"] for r in rows), reverse=True)
    ref0 = max(r["N_residual"] for r in rows)
    ax.loglog(
        eps_all,
        [2.0 * ref0 * e / eps_all[0] for e in eps_all],
        color="0.4",
        lw=0.9,
        ls="-.",
        label="slope 1 guide",
    )
    ax.set_xlabel("step probability eps")
    ax.set_ylabel("residual")
    ax.set_title("small-step residuals (x: = assembled ratio, at float floor)")
    ax.legend(ncols=2)
    ax.invert_xaxis()  # reading left to right follows eps -> 0


def build(indir: Path):
    """noise-ratio residual decay on a log-log grid"""
    rows = load_rows(indir / "gamma_residuals.csv", REQUIRED, NUMERIC)
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    draw(ax, rows)
    fig.tight_layout()
    return fig, "fig_gamma_residuals"


if __name__ == "__main__":
    sys.exit(run_script(build))

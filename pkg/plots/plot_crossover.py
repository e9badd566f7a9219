"""Crossover diagram: diffusive, moderate-deviation, and ballistic scales.

Reads crossover_curves.csv (columns t, x_diffusive, x_moderate,
x_ballistic) and draws the three spatial scales in (x, t) coordinates;
the moderate-deviation band between sqrt(t) and t is where the tilted
density field lives.  The three curves meet at (1, 1).
"""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib.pyplot as plt

from plot_common import column, load_rows, run_script

REQUIRED = ("t", "x_diffusive", "x_moderate", "x_ballistic")
NUMERIC = REQUIRED


def draw(ax, rows: list[dict]) -> None:
    rows = sorted(rows, key=lambda r: r["t"])
    ts = column(rows, "t")
    diff = column(rows, "x_diffusive")
    mod = column(rows, "x_moderate")
    ball = column(rows, "x_ballistic")
    ax.fill_betweenx(ts, 0.0, diff, color="tab:blue", alpha=0.15)
    ax.fill_betweenx(ts, diff, mod, color="tab:orange", alpha=0.20)
    ax.fill_betweenx(ts, mod, ball, color="tab:orange", alpha=0.20)
    ax.plot(diff, ts, color="tab:blue", label="x = sqrt(t)  (diffusive)")
    ax.plot(mod, ts, color="tab:red", ls="--", label="x = t^(3/4)  (moderate deviations)")
    ax.plot(ball, ts, color="0.2", ls="-.", label="x = t  (ballistic edge)")
    tmax = ts[-1]
    ax.annotate("Gaussian bulk", (0.25 * tmax**0.5, 0.86 * tmax), fontsize=8, ha="center")
    ax.annotate(
        "moderate-deviation\nband",
        (0.80 * tmax**0.75, 0.70 * tmax),
        fontsize=8,
        ha="center",
        color="tab:red",
    )
    ax.annotate("outside light cone", (0.93 * tmax, 0.30 * tmax), fontsize=8, ha="center", rotation=55)
    ax.set_xlim(0.0, 1.02 * tmax)
    ax.set_ylim(ts[0], tmax)
    ax.set_xlabel("x (lattice units)")
    ax.set_ylabel("t")
    ax.set_title("space-time regimes of the walk")
    ax.legend(loc="upper left", framealpha=0.9)


def build(indir: Path):
    """space-time crossover diagram of walk regimes"""
    rows = load_rows(indir / "crossover_curves.csv", REQUIRED, NUMERIC)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    draw(ax, rows)
    fig.tight_layout()
    return fig, "fig_crossover"


if __name__ == "__main__":
    sys.exit(run_script(build))

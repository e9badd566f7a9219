"""Duality z-score figure: moment identities across dual configurations.

Reads duality_z.csv (columns config, lhs, rhs, z) and draws one z-score
bar per configuration against the +/-3 acceptance band.  Exact checks
(empty dual configuration) sit at z = 0 by construction.
"""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib.pyplot as plt

from plot_common import column, load_rows, run_script

REQUIRED = ("config", "lhs", "rhs", "z")
NUMERIC = ("lhs", "rhs", "z")


def draw(ax, rows: list[dict]) -> None:
    labels = column(rows, "config")
    zs = column(rows, "z")
    ys = range(len(rows))
    ax.axvspan(-3.0, 3.0, color="tab:green", alpha=0.12, label="|z| <= 3 band")
    ax.axvline(0.0, color="0.5", lw=0.8)
    ax.barh(ys, zs, height=0.55, color="tab:blue")
    for y, row in zip(ys, rows):
        ax.annotate(
            f"lhs={row['lhs']:.4g}  rhs={row['rhs']:.4g}",
            (0.0, y),
            textcoords="offset points",
            xytext=(4, 12),
            fontsize=7,
            color="0.25",
        )
    ax.set_yticks(list(ys), labels)
    ax.set_xlim(-4.0, 4.0)
    ax.set_xlabel("z-score (moment identity)")
    ax.set_title("duality checks")
    ax.legend(loc="lower right")


def build(indir: Path):
    """duality moment-identity z-scores with the 3-sigma band"""
    rows = load_rows(indir / "duality_z.csv", REQUIRED, NUMERIC)
    fig, ax = plt.subplots(figsize=(5.6, 0.9 + 0.7 * len(rows)))
    draw(ax, rows)
    fig.tight_layout()
    return fig, "fig_duality_z"


if __name__ == "__main__":
    sys.exit(run_script(build))

"""Figure rendering for solve and path reports.

Figures are written next to the delimited/JSON outputs of the CLI report
path; rendering is opt-in and uses the non-interactive Agg backend.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["render_solve_figures", "render_path_figures"]

_TIMING_SECTIONS = ["sort", "projection", "gradient", "linear_solve", "other"]


def render_solve_figures(trace, timing_percent: dict, out_prefix: str) -> list[str]:
    """Convergence and timing-breakdown figures for one solve.

    Returns the list of files written (``<prefix>_convergence.png`` and
    ``<prefix>_timing.png``).
    """
    written = []
    if trace:
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        outer = [t.outer for t in trace]
        for name, series in [
            ("primal", [t.eta_p for t in trace]),
            ("dual", [t.eta_d for t in trace]),
            ("gap", [t.eta_r for t in trace]),
            ("max", [t.eta for t in trace]),
        ]:
            ax.semilogy(outer, [max(v, 1e-18) for v in series], marker="o",
                        markersize=3, label=name)
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("residual")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        path = f"{out_prefix}_convergence.png"
        fig.savefig(path, bbox_inches="tight", dpi=130)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6.4, 3.4))
    labels = [s for s in _TIMING_SECTIONS if s in timing_percent]
    values = [timing_percent[s] for s in labels]
    ax.bar(labels, values, color="#4878a8")
    ax.set_ylabel("% of solve time")
    ax.grid(True, axis="y", alpha=0.3)
    path = f"{out_prefix}_timing.png"
    fig.savefig(path, bbox_inches="tight", dpi=130)
    plt.close(fig)
    written.append(path)
    return written


def render_path_figures(entries, out_prefix: str) -> list[str]:
    """Objective/iteration and timing figures along a level grid."""
    ok = [e for e in entries if e.error is None]
    if not ok:
        return []
    taus = [e.tau for e in ok]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.5, 4.0))
    ax1.plot(taus, [e.objective for e in ok], marker="o", markersize=3)
    ax1.set_xlabel("tau")
    ax1.set_ylabel("objective")
    ax1.grid(True, alpha=0.3)
    ax2.plot(taus, [e.outer_iterations for e in ok], marker="s", markersize=3,
             label="outer")
    ax2.set_xlabel("tau")
    ax2.set_ylabel("iterations")
    ax2.grid(True, alpha=0.3)
    ax2.legend()
    path1 = f"{out_prefix}_path.png"
    fig.savefig(path1, bbox_inches="tight", dpi=130)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    bottom = [0.0] * len(ok)
    for section in _TIMING_SECTIONS[:-1]:
        pct = []
        for e in ok:
            total = e.seconds if e.seconds > 0 else 1.0
            pct.append(100.0 * e.timings.get(section, 0.0) / total)
        ax.bar(range(len(ok)), pct, bottom=bottom, label=section)
        bottom = [b + p for b, p in zip(bottom, pct)]
    ax.set_xticks(range(len(ok)))
    ax.set_xticklabels([f"{t:g}" for t in taus], rotation=60, fontsize=7)
    ax.set_xlabel("tau")
    ax.set_ylabel("% of solve time")
    ax.legend(fontsize=8)
    path2 = f"{out_prefix}_path_timing.png"
    fig.savefig(path2, bbox_inches="tight", dpi=130)
    plt.close(fig)
    return [path1, path2]

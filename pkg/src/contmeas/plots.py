"""Report figures rendered to PNG files next to the delimited output.

Rendering is headless (Agg) and metadata is pinned, so a figure is a
deterministic function of the data it plots.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from ._version import __version__

_METADATA = {"Software": f"contmeas {__version__}"}


def _save(fig, path):
    fig.savefig(path, dpi=144, metadata=_METADATA)
    plt.close(fig)


def save_free_particle_figure(path, report):
    """Two panels: Var(q) localization per seed, and the tracked mean path."""
    fig, (ax_var, ax_mean) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    s_qq = report.stationary[0]
    for comp in report.comparisons:
        ax_var.plot(comp.times, comp.grid.var_q, lw=1.2,
                    label=f"grid, seed {comp.seed}")
        ax_var.plot(comp.oracle.times, comp.oracle.var_q, lw=1.0, ls="--",
                    color=ax_var.lines[-1].get_color())
        ax_mean.plot(comp.times, comp.grid.mean_q, lw=1.2,
                     label=f"grid, seed {comp.seed}")
        ax_mean.plot(comp.oracle.times, comp.oracle.mean_q, lw=1.0, ls="--",
                     color=ax_mean.lines[-1].get_color())
    ax_var.axhline(s_qq, color="k", lw=0.8, ls=":", label="stationary Var(q)")
    ax_var.set_xlabel("t")
    ax_var.set_ylabel("Var(q)")
    ax_var.set_title("localization of the monitored packet")
    ax_var.legend(fontsize=8)
    ax_mean.set_xlabel("t")
    ax_mean.set_ylabel("<q>")
    ax_mean.set_title("conditioned mean position (dashed: moment oracle)")
    ax_mean.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_compare_figure(path, times, trace_distances, n_trajectories):
    """Trace distance between the ensemble average and the ME solution."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(times, trace_distances, lw=1.4)
    ax.set_xlabel("t")
    ax.set_ylabel("trace distance")
    ax.set_title(f"ensemble average ({n_trajectories} trajectories) vs master equation")
    ax.set_ylim(bottom=0.0)
    fig.tight_layout()
    _save(fig, path)

"""Report figures rendered to files.

Every function takes already-computed artifacts and writes one PNG; no
computation happens here.  The Agg backend keeps rendering headless and
byte-stable for identical inputs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import numpy as np
import matplotlib.pyplot as plt

from . import qstate

_PNG_META = {"Software": "franson-lab"}


def _save(fig, path):
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def render_histogram2d(histogram, path) -> None:
    """2D coincidence map with the nine region boundaries."""
    fig, ax = plt.subplots(figsize=(6.4, 5.6))
    extent = [
        histogram.idler_edges_ps[0],
        histogram.idler_edges_ps[-1],
        histogram.signal_edges_ps[0],
        histogram.signal_edges_ps[-1],
    ]
    data = histogram.counts.astype(float)
    im = ax.imshow(data, origin="lower", extent=extent, aspect="equal", cmap="inferno")
    tau = histogram.tau_ps
    r = histogram.region_radius_ps
    for a in range(3):
        for b in range(3):
            ax.add_patch(
                plt.Circle((b * tau, a * tau), r, fill=False, ec="cyan", lw=0.8)
            )
    ax.set_xlabel("idler delay (ps)")
    ax.set_ylabel("signal delay (ps)")
    ax.set_title("triple-coincidence histogram")
    fig.colorbar(im, ax=ax, label="counts")
    _save(fig, path)


def render_five_peak(collapsed, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    x = np.arange(5)
    ax.bar(x, collapsed.peaks, color="#3b6ea5")
    ax.set_xticks(x, collapsed.labels)
    ax.set_ylabel("counts")
    ax.set_title("collapsed triple coincidences")
    corners = sum(collapsed.corner_counts.values())
    ax.annotate(
        f"corner counts (excluded): {corners}",
        xy=(0.98, 0.95),
        xycoords="axes fraction",
        ha="right",
        fontsize=8,
    )
    _save(fig, path)


def render_fringe(phases, counts, fit, path) -> None:
    """Interfering-state counts versus summed analysis phase with the fit."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.errorbar(
        phases, counts, yerr=np.sqrt(np.maximum(counts, 1)), fmt="o", color="k",
        label="counts",
    )
    grid = np.linspace(min(phases) - 0.3, max(phases) + 0.3, 300)
    model = fit.offset * (1.0 + fit.visibility * np.cos(grid + fit.phase))
    ax.plot(grid, model, "-", color="#b4443c",
            label=f"V = {fit.visibility:.3f} ± {fit.visibility_err:.3f}")
    ax.set_xlabel("signal + idler phase (rad)")
    ax.set_ylabel("interfering-state counts")
    ax.legend()
    _save(fig, path)


def render_calibration_map(p_s, p_i, counts, path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 5.2))
    sc = ax.scatter(p_s, p_i, c=counts, s=18, cmap="viridis")
    ax.set_xlabel("signal heater power (mW)")
    ax.set_ylabel("idler heater power (mW)")
    ax.set_title("interference calibration map")
    fig.colorbar(sc, ax=ax, label="counts")
    _save(fig, path)


def render_density_matrix(rho, path) -> None:
    """Real and imaginary parts as 3D bar charts."""
    rho = np.asarray(rho)
    fig = plt.figure(figsize=(9.6, 4.2))
    xs, ys = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    for index, (part, title) in enumerate(
        ((rho.real, "Re"), (rho.imag, "Im")), start=1
    ):
        ax = fig.add_subplot(1, 2, index, projection="3d")
        ax.bar3d(
            xs.ravel() - 0.35,
            ys.ravel() - 0.35,
            np.zeros(16),
            0.7,
            0.7,
            part.ravel(),
            color="#3b6ea5",
            alpha=0.85,
            shade=True,
        )
        ax.set_title(title)
        ax.set_xticks(range(4), qstate.BASIS)
        ax.set_yticks(range(4), qstate.BASIS)
        ax.set_zlim(-0.5, 0.5)
    _save(fig, path)


def render_metric_histograms(mc_samples: dict, path) -> None:
    names = list(mc_samples)
    fig, axes = plt.subplots(1, len(names), figsize=(3.0 * len(names), 3.0))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        data = mc_samples[name]
        ax.hist(data, bins=40, color="#3b6ea5")
        ax.set_title(f"{name}\n{np.mean(data):.3f} ± {np.std(data):.3f}", fontsize=9)
        ax.set_yticks([])
    fig.tight_layout()
    _save(fig, path)

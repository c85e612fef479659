"""Static SVG figures: current traces, weak-value histogram and window sweep.

Files hold SI values; only the axis labels are rescaled (fs, uA, THz).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "thznoise"
plt.rcParams["svg.fonttype"] = "none"

UA = 1e6
FS = 1e15
THZ = 1e-12


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_trace(trace, path):
    """Total and device-only current against time."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(trace.t * FS, trace.i_total * UA, lw=0.8, label="total (device + probe)")
    ax.plot(trace.t * FS, trace.i_system * UA, lw=1.6, label="device only")
    ax.set_xlabel("time (fs)")
    ax.set_ylabel("displacement current (uA)")
    ax.legend(loc="best")
    _save(fig, path)


def plot_histogram(edges, counts, path, frozen_mean=None, mean_measured=None):
    """Histogram of windowed currents with the decoupled-probe mean marked."""
    edges = np.asarray(edges)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.stairs(counts, edges * UA, fill=True, alpha=0.6, label="windowed current")
    if mean_measured is not None:
        ax.axvline(mean_measured * UA, color="k", ls="--", label="ensemble mean")
    if frozen_mean is not None:
        ax.axvline(frozen_mean * UA, color="r", label="device-only mean")
    ax.set_xlabel("measured current (uA)")
    ax.set_ylabel("count")
    ax.legend(loc="best")
    _save(fig, path)


def plot_frequency_histograms(histograms, sigma_w, path):
    """One normalized histogram per window frequency on shared bins."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for f in sorted(histograms, reverse=True):
        edges, counts = histograms[f]
        total = counts.sum()
        width = np.diff(edges)
        density = counts / (total * width * UA) if total else counts.astype(float)
        ax.stairs(density, np.asarray(edges) * UA,
                  label=f"{f * THZ:g} THz, sigma_w = {sigma_w[f] * UA:.3g} uA")
    ax.set_xlabel("measured current (uA)")
    ax.set_ylabel("probability density (1/uA)")
    ax.legend(loc="best", fontsize="small")
    _save(fig, path)

"""Render simulation traces (and certificate bounds) to figure files."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simloop import SimulationTrace
from .stability import StabilityCertificate

_RC = {
    "figure.figsize": (8.0, 4.5),
    "axes.grid": True,
    "grid.linestyle": ":",
    "legend.fontsize": 9,
    "axes.labelsize": 10,
}


def render_trace_figures(tr: SimulationTrace, out_dir, stem: str = "trace",
                         certificate: StabilityCertificate = None,
                         dpi: int = 120) -> list:
    """Write tracking, input, and error figures next to the trace data.

    Returns the list of written paths.  When a certificate with a finite
    bound is given, the error figure carries the certified level.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    n_y = tr.r.shape[1]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(n_y, 1, sharex=True, squeeze=False)
        for i, ax in enumerate(axes[:, 0]):
            ax.plot(tr.t, tr.r[:, i], "k--", label=f"r{i+1}")
            ax.plot(tr.t, tr.y[:, i], label=f"y{i+1}")
            ax.set_ylabel(f"channel {i+1}")
            ax.legend(loc="best")
        axes[-1, 0].set_xlabel("step")
        fig.suptitle("Reference tracking")
        paths.append(_save(fig, out_dir / f"{stem}_tracking.png", dpi))

        n_u = tr.u.shape[1]
        fig, axes = plt.subplots(n_u, 1, sharex=True, squeeze=False)
        for j, ax in enumerate(axes[:, 0]):
            ax.plot(tr.t, tr.u[:, j], label=f"u{j+1}")
            ax.plot(tr.t, tr.u_nl[:, j], alpha=0.7, label=f"unl{j+1}")
            ax.plot(tr.t, tr.u_lin[:, j], alpha=0.7, label=f"ulin{j+1}")
            ax.axhline(tr.u_bar, color="r", lw=0.8, ls=":")
            ax.axhline(-tr.u_bar, color="r", lw=0.8, ls=":")
            ax.set_ylabel(f"input {j+1}")
            ax.legend(loc="best")
        axes[-1, 0].set_xlabel("step")
        fig.suptitle("Control decomposition")
        paths.append(_save(fig, out_dir / f"{stem}_inputs.png", dpi))

        fig, ax = plt.subplots()
        err = np.abs(tr.e).max(axis=1)
        ax.plot(tr.t, err, label="|e| (worst channel)")
        if certificate is not None and math.isfinite(certificate.constants.e_bar):
            ax.axhline(certificate.constants.e_bar, color="r", ls="--",
                       label="certified bound")
        ax.set_xlabel("step")
        ax.set_ylabel("tracking error")
        ax.legend(loc="best")
        fig.suptitle("Tracking error")
        paths.append(_save(fig, out_dir / f"{stem}_error.png", dpi))
    return paths


def _save(fig, path: Path, dpi: int) -> Path:
    fig.savefig(path, dpi=dpi, bbox_inches="tight")
    plt.close(fig)
    return path

"""Figure rendering for solver traces and kernel benchmarks.

Companion to the CSV outputs: the same records that go into the delimited
files can be rendered to PNG next to them, so convergence and scaling
plots come straight from a run without external tooling.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def render_trace_figure(trace, out_path: str | Path, title: str = "") -> Path:
    """Plot objective curves and duality gap from per-iteration records
    (iter, phi, psi, gap, restarted); restarts are marked on the gap curve."""
    its = [r[0] for r in trace]
    phi = [r[1] for r in trace]
    psi = [r[2] for r in trace]
    gap = [max(r[3], 1e-300) for r in trace]
    restarts = [r[0] for r in trace if r[4]]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax1.plot(its, phi, label=r"primal $\Phi$", color="tab:blue")
    ax1.plot(its, psi, label=r"dual $\Psi$", color="tab:orange")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("objective")
    ax1.legend(frameon=False)

    ax2.semilogy(its, gap, color="tab:green")
    for r in restarts:
        ax2.axvline(r, color="gray", alpha=0.35, linewidth=0.8)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("duality gap")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_bench_figure(rows, out_path: str | Path, title: str = "") -> Path:
    """Log-log runtime-vs-dimension plot from benchmark rows of the form
    (kernel, p, mean_seconds, std_seconds)."""
    kernels = sorted({r[0] for r in rows})
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for kern in kernels:
        pts = sorted((r[1], r[2]) for r in rows if r[0] == kern)
        ax.loglog([p for p, _ in pts], [t for _, t in pts], marker="o", label=kern)
    ax.set_xlabel("dimension p")
    ax.set_ylabel("mean seconds")
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path

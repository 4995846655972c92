"""Static SVG rendering of study CSVs (headless matplotlib)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import read_csv  # noqa: E402

plt.rcParams["svg.hashsalt"] = "pteit"


def _cols(rows, *names):
    return [np.array([float(r[n]) if r[n] != "" else np.nan for r in rows]) for n in names]


def _image(ax, rows):
    x, y, m = _cols(rows, "x", "y", "m")
    sc = ax.tricontourf(x, y, m, levels=30, cmap="viridis")
    ax.set_aspect("equal")
    plt.colorbar(sc, ax=ax, label="conductivity")


def _run_log(ax, rows):
    k, rel = _cols(rows, "iter", "rel_resid")
    ax.semilogy(k, rel, marker=".")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative residual")


def _hessian_diag(ax, rows):
    e, t, a, f = _cols(rows, "element", "true", "approx", "approx_freespace")
    ax.plot(e, t, label="true")
    ax.plot(e, a, label="disc Neumann")
    ax.plot(e, f, label="free space")
    ax.set_xlabel("element")
    ax.set_ylabel("Hessian diagonal")
    ax.legend()


def _saturation(ax, rows):
    s, e, t, a = _cols(rows, "sigma", "element", "true", "approx")
    for el in np.unique(e):
        sel = e == el
        ax.plot(s[sel], t[sel], label=f"true {int(el)}")
        ax.plot(s[sel], a[sel], "--", label=f"approx {int(el)}")
    ax.set_xlabel("inclusion conductivity")
    ax.legend(fontsize="small")


def _errors(ax, rows):
    k, h, g = _cols(rows, "iter", "error_H", "error_GN")
    ax.semilogy(k, h, label="H~ init")
    ax.semilogy(k, g, label="diag(J^T J) init")
    ax.set_xlabel("BFGS iteration")
    ax.set_ylabel("relative Frobenius error")
    ax.legend()


def _slice(ax, rows):
    t, m = _cols(rows, "t", "m")
    ax.plot(t, m)
    ax.set_xlabel("position along x = y")
    ax.set_ylabel("conductivity")


_KINDS = [
    ({"element", "x", "y", "m"}, _image),
    ({"iter", "phi", "rel_resid"}, _run_log),
    ({"true", "approx", "approx_freespace"}, _hessian_diag),
    ({"sigma", "true", "approx"}, _saturation),
    ({"error_H", "error_GN"}, _errors),
    ({"t", "m"}, _slice),
]


def plot_csv(csv_path, svg_path=None):
    """Render a study CSV to SVG; the plot kind is inferred from the header."""
    csv_path = Path(csv_path)
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no data rows")
    header = set(rows[0])
    for need, draw in _KINDS:
        if need <= header:
            break
    else:
        raise ValueError(f"don't know how to plot columns {sorted(header)}")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    draw(ax, rows)
    ax.set_title(csv_path.stem)
    fig.tight_layout()
    svg_path = Path(svg_path) if svg_path else csv_path.with_suffix(".svg")
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path

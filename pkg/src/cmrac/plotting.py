"""SVG figures for trajectories, comparisons, feasibility regions and sweeps.

Figures are built with the object API (no pyplot state) and saved with a
fixed hash salt and no date metadata, so the bytes depend only on the data.
"""
from __future__ import annotations

import matplotlib
import numpy as np
from matplotlib.colors import ListedColormap
from matplotlib.figure import Figure

_RC = {"svg.hashsalt": "cmrac", "svg.fonttype": "none", "font.size": 9, "axes.grid": True, "grid.alpha": 0.3}
_COLORS = ("tab:blue", "tab:red", "tab:green", "tab:purple")


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _figure(rows, height=2.2):
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(7.0, height * rows + 0.6))
        axes = fig.subplots(rows, 1, sharex=True, squeeze=False)[:, 0]
    return fig, axes


def _norm_panels(traj):
    t = traj.t
    return t, np.linalg.norm(traj.x, axis=1), np.linalg.norm(traj.u, axis=1), traj.column("e_norm")


def plot_norms(traj, cs, path, title=""):
    """State, input and error norms against their bounds."""
    return plot_compare({"": traj}, cs, path, title)


def plot_compare(trajs, cs, path, title=""):
    """Overlay of several runs; ``trajs`` maps a label to a Trajectory."""
    with matplotlib.rc_context(_RC):
        fig, (ax_x, ax_u, ax_e) = _figure(3)
        for (label, traj), color in zip(trajs.items(), _COLORS):
            t, nx_, nu, ne = _norm_panels(traj)
            kw = {"color": color, "lw": 1.1}
            if label:
                kw["label"] = label
            ax_x.plot(t, nx_, **kw)
            ax_u.plot(t, nu, **kw)
            ax_e.plot(t, ne, **kw)
        ax_x.axhline(cs.x_bar, color="k", ls="--", lw=0.9, label=f"x_bar = {cs.x_bar:g}")
        ax_x.axhline(cs.xa_bar, color="0.5", ls=":", lw=0.9, label=f"xa_bar = {cs.xa_bar:g}")
        ax_u.axhline(cs.u_bar, color="k", ls="--", lw=0.9, label=f"u_bar = {cs.u_bar:g}")
        ax_e.axhline(cs.xi, color="k", ls="--", lw=0.9, label=f"xi = {cs.xi:g}")
        ax_x.set_ylabel("||x||")
        ax_u.set_ylabel("||u||")
        ax_e.set_ylabel("||e||")
        ax_e.set_xlabel("t [s]")
        for ax in (ax_x, ax_u, ax_e):
            ax.legend(loc="upper right", fontsize=7)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
    return _save(fig, path)


def plot_region(grid, path, point=None, title=""):
    """Shaded feasible set of a RegionGrid; ``point`` marks a chosen (x_bar, u_bar)."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.5, 4.5))
        ax = fig.subplots()
        cmap = ListedColormap(["#f4f4f4", "#9ecae1"])
        ax.pcolormesh(grid.x_axis, grid.u_axis, grid.feasible.astype(float), cmap=cmap, vmin=0, vmax=1, shading="nearest")
        xs = np.array([grid.x_axis[0], grid.x_axis[-1]])
        ax.plot(xs, grid.alpha * xs + grid.beta, color="k", lw=1.0, label=f"u = {grid.alpha:.4g} x + {grid.beta:.4g}")
        if point is not None:
            ax.plot([point[0]], [point[1]], "o", color="tab:red", ms=5, label=f"({point[0]:g}, {point[1]:g})")
        ax.set_xlim(grid.x_axis[0], grid.x_axis[-1])
        ax.set_ylim(grid.u_axis[0], grid.u_axis[-1])
        ax.set_xlabel("x_bar")
        ax.set_ylabel("u_bar")
        ax.legend(loc="best", fontsize=7)
        ax.set_title(title or "feasible (shaded)")
        fig.tight_layout()
    return _save(fig, path)


def plot_heatmap(x_axis, y_axis, values, path, xlabel, ylabel, title=""):
    """Heatmap of ``values[i_y, i_x]``; NaN cells are left blank."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.5, 4.5))
        ax = fig.subplots()
        Z = np.ma.masked_invalid(np.asarray(values, dtype=float))
        mesh = ax.pcolormesh(x_axis, y_axis, Z, shading="nearest", cmap="viridis")
        fig.colorbar(mesh, ax=ax)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def plot_curve(x, series, path, xlabel, title=""):
    """Line plot of one-axis sweep results; ``series`` maps label -> values."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(6.0, 3.5))
        ax = fig.subplots()
        for (label, y), color in zip(series.items(), _COLORS):
            y = np.asarray(y, dtype=float)
            ax.plot(x, y, "o-", color=color, ms=3, lw=1.0, label=label)
        ax.set_xlabel(xlabel)
        ax.legend(loc="best", fontsize=7)
        if title:
            ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


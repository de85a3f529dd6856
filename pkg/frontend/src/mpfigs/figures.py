"""Render figure analogs from mpsim's CSV outputs.

Inputs are the files the simulator CLI writes into a results directory:

* ``runs/*.csv``       per-run minute series (config echoed in a ``#`` line)
* ``sweep_t.csv``      decision-period sweep aggregates
* ``sweep_penetration.csv``  probe-penetration sweep aggregates

Each figure groups per-run series by controller, draws the seed mean, and
shades +-1 standard deviation across seeds (zero-width with a single seed).
Rendering is deterministic: fixed canvas, glyphs as paths, pinned SVG hash
salt, and no timestamps in the output, so re-rendering the same inputs is
byte-identical.
"""

from __future__ import annotations

import glob
import json
import os
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "mpfigs"
matplotlib.rcParams["svg.fonttype"] = "path"

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

CONTROLLER_ORDER = ("dmp", "ttmp", "hmp", "qmp")
COLORS = {"dmp": "#d62728", "ttmp": "#2ca02c", "hmp": "#ff7f0e", "qmp": "#1f77b4"}


class MissingColumnError(KeyError):
    def __init__(self, column: str, path: str):
        super().__init__(f"column {column!r} missing from {path}")
        self.column = column
        self.path = path


@dataclass(frozen=True)
class FigureSpec:
    figure_id: str
    inputs: tuple[str, ...]           # CSV paths
    group_keys: tuple[str, ...] = ("controller",)
    xlabel: str = ""
    ylabel: str = ""
    shading: bool = True


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def run_config(path: str) -> dict:
    """Config echo from a per-run CSV's leading comment line."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("# config:"):
        return {}
    return json.loads(first[len("# config:"):])


def require(df: pd.DataFrame, columns, path: str) -> None:
    for col in columns:
        if col not in df.columns:
            raise MissingColumnError(col, path)


def _grouped_runs(paths) -> dict[str, list[pd.DataFrame]]:
    """Per-run minute series grouped by controller."""
    groups: dict[str, list[pd.DataFrame]] = {}
    for path in sorted(paths):
        cfg = run_config(path)
        df = read_csv(path)
        require(df, ("t_min", "delay_veh_s", "vehicles", "blocked",
                     "entered_cum", "exited_cum", "waiting_s_cum"), path)
        groups.setdefault(cfg.get("controller", "run"), []).append(df)
    return groups


def _mean_std(frames: list[pd.DataFrame], column: str):
    data = np.stack([f[column].to_numpy(float) for f in frames])
    return data.mean(axis=0), data.std(axis=0)


def _annotate_empty(ax) -> None:
    ax.text(0.5, 0.5, "no data", transform=ax.transAxes,
            ha="center", va="center", color="0.5")


def _series_panel(ax, groups, column, transform=None, shading=True):
    any_data = False
    for ctrl in CONTROLLER_ORDER:
        frames = groups.get(ctrl)
        if not frames:
            continue
        any_data = True
        t = frames[0]["t_min"].to_numpy(float)
        mean, std = _mean_std(frames, column)
        if transform is not None:
            stacked = np.stack([transform(f) for f in frames])
            mean, std = stacked.mean(axis=0), stacked.std(axis=0)
        color = COLORS.get(ctrl, "0.3")
        ax.plot(t, mean, label=ctrl, color=color, lw=1.2)
        if shading:
            ax.fill_between(t, mean - std, mean + std, color=color, alpha=0.2, lw=0)
    if not any_data:
        _annotate_empty(ax)
    else:
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("time (min)")


def _new_fig(n_axes=1, width=6.0, height=3.4):
    fig, axes = plt.subplots(1, n_axes, figsize=(width * n_axes, height),
                             squeeze=False, constrained_layout=True)
    return fig, axes[0]


def _save(fig, out_path: str) -> str:
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


# ---------------------------------------------------------------------------
# figure builders
# ---------------------------------------------------------------------------

def fig_sweep_t(spec: FigureSpec, out_dir: str) -> list[str]:
    """Delay / queue / throughput versus the decision period, per controller."""
    out = []
    for path in spec.inputs:
        df = read_csv(path)
        require(df, ("controller", "demand_veh_h", "T_s",
                     "avg_total_delay_s_mean", "avg_total_delay_s_std",
                     "avg_queue_per_link_mean", "avg_queue_per_link_std",
                     "throughput_veh_h_mean", "throughput_veh_h_std"), path)
        for ctrl, sub in df.groupby("controller"):
            fig, axes = _new_fig(3, width=3.6)
            panels = (("avg_total_delay_s", "average delay (s/veh)"),
                      ("avg_queue_per_link", "average queue (veh/link)"),
                      ("throughput_veh_h", "throughput (veh/h)"))
            for ax, (metric, label) in zip(axes, panels):
                plotted = False
                for demand, rows in sub.groupby("demand_veh_h"):
                    rows = rows.sort_values("T_s")
                    m = rows[f"{metric}_mean"].to_numpy(float)
                    s = rows[f"{metric}_std"].to_numpy(float)
                    T = rows["T_s"].to_numpy(float)
                    ax.plot(T, m, marker="o", ms=3, lw=1.1,
                            label=f"{demand:g} veh/h")
                    if spec.shading:
                        ax.fill_between(T, m - s, m + s, alpha=0.2, lw=0)
                    plotted = True
                if not plotted:
                    _annotate_empty(ax)
                ax.set_xlabel("decision period T (s)")
                ax.set_ylabel(label)
                ax.legend(frameon=False, fontsize=7)
            fig.suptitle(f"{ctrl}: effect of decision period", fontsize=10)
            out.append(_save(fig, os.path.join(out_dir, f"{spec.figure_id}_{ctrl}.svg")))
    return out


def fig_delay_per_minute(spec: FigureSpec, out_dir: str) -> list[str]:
    groups = _grouped_runs(spec.inputs)
    fig, (ax,) = _new_fig()
    _series_panel(ax, groups, "delay_veh_s", shading=spec.shading)
    ax.set_ylabel("delay per minute (veh·s)")
    return [_save(fig, os.path.join(out_dir, f"{spec.figure_id}.svg"))]


def fig_cumulative_delay(spec: FigureSpec, out_dir: str) -> list[str]:
    groups = _grouped_runs(spec.inputs)
    fig, (ax,) = _new_fig()
    _series_panel(ax, groups, "delay_veh_s",
                  transform=lambda f: np.cumsum(f["delay_veh_s"].to_numpy(float)),
                  shading=spec.shading)
    ax.set_ylabel("cumulative delay (veh·s)")
    return [_save(fig, os.path.join(out_dir, f"{spec.figure_id}.svg"))]


def fig_vehicles(spec: FigureSpec, out_dir: str) -> list[str]:
    groups = _grouped_runs(spec.inputs)
    fig, (ax,) = _new_fig()
    _series_panel(ax, groups, "vehicles", shading=spec.shading)
    ax.set_ylabel("vehicles in network")
    return [_save(fig, os.path.join(out_dir, f"{spec.figure_id}.svg"))]


def fig_blocked_waiting(spec: FigureSpec, out_dir: str) -> list[str]:
    groups = _grouped_runs(spec.inputs)
    fig, axes = _new_fig(2)
    _series_panel(axes[0], groups, "blocked", shading=spec.shading)
    axes[0].set_ylabel("blocked vehicles")

    def avg_wait(f):
        created = f["entered_cum"].to_numpy(float) + f["blocked"].to_numpy(float)
        return f["waiting_s_cum"].to_numpy(float) / np.maximum(created, 1.0)

    _series_panel(axes[1], groups, "waiting_s_cum", transform=avg_wait,
                  shading=spec.shading)
    axes[1].set_ylabel("average waiting time (s)")
    return [_save(fig, os.path.join(out_dir, f"{spec.figure_id}.svg"))]


def fig_flow_difference(spec: FigureSpec, out_dir: str) -> list[str]:
    """Cumulative entered/exited counts relative to the delay-based model."""
    groups = _grouped_runs(spec.inputs)
    base = groups.get("dmp")
    fig, axes = _new_fig(2)
    for ax, column, label in ((axes[0], "entered_cum", "entered vehicles vs dmp"),
                              (axes[1], "exited_cum", "exited vehicles vs dmp")):
        if not base:
            _annotate_empty(ax)
            continue
        ref, _ = _mean_std(base, column)
        shown = False
        for ctrl in CONTROLLER_ORDER:
            frames = groups.get(ctrl)
            if not frames or ctrl == "dmp":
                continue
            t = frames[0]["t_min"].to_numpy(float)
            mean, std = _mean_std(frames, column)
            color = COLORS.get(ctrl, "0.3")
            ax.plot(t, mean - ref, label=ctrl, color=color, lw=1.2)
            if spec.shading:
                ax.fill_between(t, mean - ref - std, mean - ref + std,
                                color=color, alpha=0.2, lw=0)
            shown = True
        if not shown:
            _annotate_empty(ax)
        else:
            ax.axhline(0.0, color="0.6", lw=0.8, ls="--")
            ax.legend(frameon=False, fontsize=8)
        ax.set_xlabel("time (min)")
        ax.set_ylabel(label)
    return [_save(fig, os.path.join(out_dir, f"{spec.figure_id}.svg"))]


def fig_penetration(spec: FigureSpec, out_dir: str) -> list[str]:
    """Delay versus penetration with full-information benchmark lines."""
    out = []
    for path in spec.inputs:
        df = read_csv(path)
        require(df, ("model", "demand_veh_h", "penetration",
                     "avg_total_delay_s_mean", "avg_total_delay_s_std"), path)
        demands = sorted(df["demand_veh_h"].unique())
        fig, axes = _new_fig(max(len(demands), 1), width=3.8)
        if not demands:
            _annotate_empty(axes[0])
        for ax, demand in zip(axes, demands):
            sub = df[df["demand_veh_h"] == demand]
            swept = sub[~sub["model"].astype(str).str.endswith("-benchmark")]
            swept = swept.sort_values("penetration")
            p = swept["penetration"].to_numpy(float)
            m = swept["avg_total_delay_s_mean"].to_numpy(float)
            s = swept["avg_total_delay_s_std"].to_numpy(float)
            name = swept["model"].iloc[0] if len(swept) else "swept"
            ax.plot(p, m, marker="o", ms=3, color=COLORS.get(str(name), "#d62728"),
                    label=str(name))
            if spec.shading:
                ax.fill_between(p, m - s, m + s, alpha=0.2, lw=0,
                                color=COLORS.get(str(name), "#d62728"))
            for _, row in sub[sub["model"].astype(str).str.endswith("-benchmark")].iterrows():
                ctrl = str(row["model"]).replace("-benchmark", "")
                ax.axhline(row["avg_total_delay_s_mean"], lw=1.0, ls="--",
                           color=COLORS.get(ctrl, "0.4"), label=f"{ctrl} (full info)")
            ax.set_title(f"{demand:g} veh/h", fontsize=9)
            ax.set_xlabel("penetration rate")
            ax.set_ylabel("average delay (s/veh)")
            ax.legend(frameon=False, fontsize=7)
        out.append(_save(fig, os.path.join(out_dir, f"{spec.figure_id}.svg")))
    return out


FIGURES = {
    "sweep_t": fig_sweep_t,
    "delay_per_minute": fig_delay_per_minute,
    "cumulative_delay": fig_cumulative_delay,
    "vehicles_in_network": fig_vehicles,
    "blocked_and_waiting": fig_blocked_waiting,
    "flow_difference": fig_flow_difference,
    "penetration": fig_penetration,
}

RUN_FIGURES = ("delay_per_minute", "cumulative_delay", "vehicles_in_network",
               "blocked_and_waiting", "flow_difference")


def default_specs(in_dir: str, figures=None) -> list[FigureSpec]:
    """Build specs for whatever inputs exist under ``in_dir``."""
    wanted = set(figures) if figures else set(FIGURES)
    unknown = wanted - set(FIGURES)
    if unknown:
        raise ValueError(f"unknown figures: {sorted(unknown)}")
    specs = []
    run_csvs = tuple(sorted(glob.glob(os.path.join(in_dir, "runs", "*.csv"))))
    for fid in RUN_FIGURES:
        if fid in wanted and run_csvs:
            specs.append(FigureSpec(fid, run_csvs))
    sweep_t = os.path.join(in_dir, "sweep_t.csv")
    if "sweep_t" in wanted and os.path.exists(sweep_t):
        specs.append(FigureSpec("sweep_t", (sweep_t,)))
    sweep_p = os.path.join(in_dir, "sweep_penetration.csv")
    if "penetration" in wanted and os.path.exists(sweep_p):
        specs.append(FigureSpec("penetration", (sweep_p,)))
    return specs


def render(spec: FigureSpec, out_dir: str) -> list[str]:
    """Render one figure spec; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    return FIGURES[spec.figure_id](spec, out_dir)


def render_all(in_dir: str, out_dir: str, figures=None) -> list[str]:
    written = []
    for spec in default_specs(in_dir, figures):
        written.extend(render(spec, out_dir))
    return written

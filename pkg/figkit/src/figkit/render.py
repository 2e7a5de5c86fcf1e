"""Figure builders for the six diagnostic kinds.

Inputs are the experiment CSVs (stations, controls, scores, forecasts,
member hydrographs) and ESRI ASCII contingency rasters. Rendering is
deterministic: fixed Agg backend, fixed dpi, no timestamps or version
strings embedded, so re-rendering the same inputs is byte-identical.
"""

from __future__ import annotations

import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DPI = 110

# station colour convention: first three stations blue / orange / green
STATION_COLOURS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")
EXPERIMENT_COLOURS = ("#d62728", "#1f77b4", "#2ca02c", "#17becf", "#9467bd")

# contingency colour code: correctly flooded dark blue, correctly dry light
# blue, under-prediction yellow, over-prediction red; excluded pixels white
CONTINGENCY_RGB = {
    1: (0, 0, 139),        # TP
    0: (173, 216, 230),    # TN
    3: (255, 255, 0),      # FN
    2: (255, 0, 0),        # FP
    -1: (255, 255, 255),   # excluded
}


class SchemaError(ValueError):
    """An input file does not match its documented schema."""


def _read_csv(path, required):
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column '{col}'")
        for row in reader:
            rows.append(row)
    return rows


def _floats(rows, col):
    return np.array([float(r[col]) for r in rows])


def _read_ascii_grid(path):
    header = {}
    data = []
    keys = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0].lower() in keys and len(parts) == 2:
                header[parts[0].lower()] = float(parts[1])
            else:
                data.extend(float(v) for v in parts)
    if "ncols" not in header or "nrows" not in header:
        raise SchemaError(f"{path}: missing column 'ncols/nrows header'")
    values = np.array(data).reshape(int(header["nrows"]), int(header["ncols"]))
    return values, header


def _save(fig, out_path):
    fig.savefig(out_path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)


def _hours(ts):
    return np.asarray(ts) / 3600.0


# -- figure kinds ---------------------------------------------------------------


def hydrograph_fan(inputs, out_path, options):
    """Member inflow curves (light blue) with their mean (orange dashed);
    an optional second input draws the base hydrograph in black."""
    rows = _read_csv(inputs[0], ("member", "t_s", "q_m3s"))
    fig, ax = plt.subplots(figsize=(7, 4))
    members = {}
    for r in rows:
        members.setdefault(r["member"], []).append((float(r["t_s"]), float(r["q_m3s"])))
    curves = []
    for member, pts in sorted(members.items()):
        pts = np.array(sorted(pts))
        curves.append(pts[:, 1])
        ax.plot(_hours(pts[:, 0]), pts[:, 1], color="lightblue", lw=0.8, zorder=1)
    if curves:
        mean = np.mean(np.stack(curves), axis=0)
        ax.plot(_hours(pts[:, 0]), mean, "--", color="#ff7f0e", lw=1.8,
                zorder=3, label="ensemble mean")
    if len(inputs) > 1:
        base = _read_csv(inputs[1], ("t_s", "q_m3s"))
        ax.plot(_hours(_floats(base, "t_s")), _floats(base, "q_m3s"),
                color="black", lw=1.5, zorder=2, label="base inflow")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("discharge [m$^3$/s]")
    ax.set_title("ensemble inflow hydrographs")
    if curves or len(inputs) > 1:
        ax.legend(loc="best")
    _save(fig, out_path)


def station_panel(inputs, out_path, options):
    """Water level (top) and model-minus-observation error (bottom) at one
    station. First input: gauge observations CSV; remaining inputs: model
    station series, labelled via --labels."""
    station = options.get("station")
    obs_rows = _read_csv(inputs[0], ("station", "t_s", "value_m"))
    if station is None:
        station = obs_rows[0]["station"] if obs_rows else ""
    obs = np.array(sorted((float(r["t_s"]), float(r["value_m"]))
                          for r in obs_rows if r["station"] == station))
    labels = options.get("labels") or [os.path.basename(os.path.dirname(p) or p)
                                       for p in inputs[1:]]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 5.5), sharex=True,
                                   height_ratios=[2, 1])
    if obs.size:
        ax0.plot(_hours(obs[:, 0]), obs[:, 1], "k--", lw=1.2, label="observed")
    for k, path in enumerate(inputs[1:]):
        rows = _read_csv(path, ("station", "t_s", "z_mean"))
        series = np.array(sorted((float(r["t_s"]), float(r["z_mean"]))
                                 for r in rows if r["station"] == station))
        if series.size == 0:
            continue
        colour = EXPERIMENT_COLOURS[k % len(EXPERIMENT_COLOURS)]
        label = labels[k] if k < len(labels) else f"model {k}"
        ax0.plot(_hours(series[:, 0]), series[:, 1], color=colour, lw=1.3,
                 label=label)
        if obs.size:
            err = np.interp(obs[:, 0], series[:, 0], series[:, 1]) - obs[:, 1]
            ax1.plot(_hours(obs[:, 0]), err, color=colour, lw=1.0)
    ax1.axhline(0.0, color="k", lw=0.6)
    ax0.set_ylabel("water level [m]")
    ax1.set_ylabel("model - obs [m]")
    ax1.set_xlabel("time [h]")
    ax0.set_title(f"station {station}")
    ax0.legend(loc="best", fontsize=8)
    _save(fig, out_path)


CONTROL_COLUMNS = ("ks0", "ks1", "ks2", "ks3", "a", "b", "c")


def controls(inputs, out_path, options):
    """Evolution of the seven analysed control components over the cycles,
    one panel each, with the first-cycle forecast mean as the dashed
    background reference."""
    fig, axes = plt.subplots(7, 1, figsize=(6.5, 11), sharex=True)
    for k, path in enumerate(inputs):
        rows = _read_csv(path, ("cycle", "phase", "member") + CONTROL_COLUMNS)
        cycles = sorted({int(r["cycle"]) for r in rows})
        colour = EXPERIMENT_COLOURS[k % len(EXPERIMENT_COLOURS)]
        labels = options.get("labels") or []
        label = labels[k] if k < len(labels) else os.path.basename(os.path.dirname(path) or path)
        for ci, comp in enumerate(CONTROL_COLUMNS):
            mean = []
            spread = []
            for c in cycles:
                vals = np.array([float(r[comp]) for r in rows
                                 if int(r["cycle"]) == c and r["phase"] == "analysis"])
                mean.append(vals.mean())
                spread.append(vals.std(ddof=1) if vals.size > 1 else 0.0)
            mean = np.array(mean)
            spread = np.array(spread)
            axes[ci].plot(cycles, mean, "-o", ms=3, color=colour, lw=1.2,
                          label=label if ci == 0 else None)
            axes[ci].fill_between(cycles, mean - spread, mean + spread,
                                  color=colour, alpha=0.15, lw=0)
            if k == 0:
                bg = np.array([float(r[comp]) for r in rows
                               if int(r["cycle"]) == cycles[0]
                               and r["phase"] == "forecast"])
                axes[ci].axhline(bg.mean(), color="k", ls="--", lw=0.8)
            axes[ci].set_ylabel(comp)
    axes[-1].set_xlabel("cycle")
    axes[0].set_title("analysed control components")
    axes[0].legend(loc="best", fontsize=8)
    _save(fig, out_path)


SCORE_METRICS = ("csi", "f1", "kappa")


def scores_2d(inputs, out_path, options):
    """CSI / F1 / kappa time series at the overpass times, one panel per
    metric, one colour per experiment."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    labels = options.get("labels") or []
    for k, path in enumerate(inputs):
        rows = _read_csv(path, ("experiment", "time_s", "metric", "target",
                                "lead_s", "value"))
        colour = EXPERIMENT_COLOURS[k % len(EXPERIMENT_COLOURS)]
        name = labels[k] if k < len(labels) else (
            rows[0]["experiment"] if rows else os.path.basename(path))
        for mi, metric in enumerate(SCORE_METRICS):
            pts = [(float(r["time_s"]), 100.0 * float(r["value"]))
                   for r in rows
                   if r["metric"] == metric and r["target"] == "extent"
                   and r["value"] != "NA" and r["time_s"] != ""]
            if not pts:
                continue
            pts = np.array(sorted(pts))
            axes[mi].plot(_hours(pts[:, 0]), pts[:, 1], "-o", ms=4,
                          color=colour, label=name if mi == 0 else None)
    for mi, metric in enumerate(SCORE_METRICS):
        axes[mi].set_ylabel(f"{metric} [%]")
        axes[mi].set_ylim(0, 105)
    axes[-1].set_xlabel("overpass time [h]")
    axes[0].set_title("flood-extent scores at overpass times")
    handles, _ = axes[0].get_legend_handles_labels()
    if handles:
        axes[0].legend(loc="best", fontsize=8)
    _save(fig, out_path)


def contingency_map(inputs, out_path, options):
    """Pixel-exact contingency image: dark blue TP, light blue TN, yellow
    under-prediction, red over-prediction (white for excluded pixels)."""
    values, header = _read_ascii_grid(inputs[0])
    nodata = header.get("nodata_value", -9999.0)
    codes = np.where(values == nodata, -1, values).astype(int)
    known = set(CONTINGENCY_RGB)
    bad = {int(c) for c in np.unique(codes)} - known
    if bad:
        raise SchemaError(f"{inputs[0]}: missing column 'contingency codes "
                          f"{sorted(known)}' (found unexpected {sorted(bad)})")
    rgb = np.zeros(codes.shape + (3,), dtype=np.uint8)
    for code, colour in CONTINGENCY_RGB.items():
        rgb[codes == code] = colour
    plt.imsave(out_path, rgb)


def forecast_leads(inputs, out_path, options):
    """Forecast RMSE against lead time, one curve per station."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    rows = _read_csv(inputs[0], ("experiment", "time_s", "metric", "target",
                                 "lead_s", "value"))
    by_station = {}
    for r in rows:
        if r["metric"] != "forecast_rmse" or r["target"] == "all" or r["value"] == "NA":
            continue
        by_station.setdefault(r["target"], []).append(
            (float(r["lead_s"]), float(r["value"])))
    for k, (name, pts) in enumerate(sorted(by_station.items())):
        pts = np.array(sorted(pts))
        ax.plot(_hours(pts[:, 0]), pts[:, 1], "-o",
                color=STATION_COLOURS[k % len(STATION_COLOURS)], label=name)
    ax.set_xlabel("forecast lead time [h]")
    ax.set_ylabel("RMSE [m]")
    ax.set_title("forecast error vs lead time (flood-peak window)")
    if by_station:
        ax.legend(loc="best", fontsize=8)
    _save(fig, out_path)


FIGURE_KINDS = {
    "hydrograph-fan": hydrograph_fan,
    "station-panel": station_panel,
    "controls": controls,
    "scores-2d": scores_2d,
    "contingency-map": contingency_map,
    "forecast-leads": forecast_leads,
}


def render(kind, inputs, out_path, options=None):
    if kind not in FIGURE_KINDS:
        raise SchemaError(f"unknown figure kind {kind!r}; expected one of "
                          f"{sorted(FIGURE_KINDS)}")
    if not inputs:
        raise SchemaError("at least one input file is required")
    for path in inputs:
        if not os.path.exists(path):
            raise FileNotFoundError(path)
    FIGURE_KINDS[kind](list(inputs), out_path, options or {})
    return out_path

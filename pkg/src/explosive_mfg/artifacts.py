"""Writers for run artifacts: JSON reports, CSV tables, the plotting script."""
from __future__ import annotations

import csv
import json
import math
import os

import numpy as np


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(to_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_table(path, header, rows):
    """RFC 4180 CSV; floats use repr so they round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in r])


def read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


PLOT_SCRIPT = '''"""Render the CSV outputs of this run directory to plots.png.

Generated by explosive-mfg; run with ``python plot.py``.
"""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))


def read(name):
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        return None
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = {}
    for j, key in enumerate(rows[0]):
        vals = []
        for r in rows[1:]:
            try:
                vals.append(float(r[j]))
            except ValueError:
                vals.append(float("nan"))
        cols[key] = vals
    return cols


def field(ax, data, title):
    key = [k for k in data if k not in ("node", "x", "y")][-1]
    if "y" in data:
        sc = ax.scatter(data["x"], data["y"], c=data[key], s=4)
        plt.colorbar(sc, ax=ax)
        ax.set_aspect("equal")
    else:
        ax.plot(data["x"], data[key])
        ax.set_xlabel("x")
    ax.set_title(title)


panels = []
for name, title in (("u.csv", "value u"), ("m.csv", "density m"),
                    ("histogram.csv", "particle histogram")):
    data = read(name)
    if data is not None:
        panels.append(("field", data, title))
trace = read("residual_trace.csv")
if trace is not None:
    panels.append(("trace", trace, "residual trace"))
bands = read("bands.csv")
if bands is not None:
    panels.append(("bands", bands, "boundary sequences"))
fits = read("fits.csv")
if fits is not None:
    panels.append(("fits", fits, "fits vs resolution"))
uni = read("uniformity.csv")
if uni is not None:
    panels.append(("uniformity", uni, "drift deviation per band"))

if panels:
    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 4), squeeze=False)
    for ax, (kind, data, title) in zip(axes[0], panels):
        if kind == "field":
            field(ax, data, title)
        elif kind == "trace":
            ax.semilogy([v for v in data["residual"] if v > 0])
            ax.set_xlabel("iteration")
            ax.set_title(title)
        elif kind == "bands":
            ax.plot(data["d"], data["grad_seq"], "o-", label="(Du.nu) d^(1/(q-1))")
            ax.plot(data["d"], data["drift_seq"], "s-", label="(b.nu) d")
            ax.set_xscale("log")
            ax.set_xlabel("d")
            ax.legend()
            ax.set_title(title)
        elif kind == "fits":
            key = "exponent" if any(v == v for v in data["exponent"]) else "log_coefficient"
            ax.plot(data["resolution"], data[key], "o")
            ax.set_xscale("log")
            ax.set_xlabel("resolution")
            ax.set_ylabel(key)
            ax.set_title(title)
        else:
            mids = [0.5 * (a + b) for a, b in zip(data["band_lo"], data["band_hi"])]
            ax.scatter(mids, data["deviation"], c=data["g_norm"])
            ax.set_xscale("log")
            ax.set_xlabel("band centre d")
            ax.set_title(title)
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, "plots.png"), dpi=120)
'''


def write_plot_script(directory):
    path = os.path.join(directory, "plot.py")
    with open(path, "w") as fh:
        fh.write(PLOT_SCRIPT)
    return path

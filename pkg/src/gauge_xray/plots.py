"""Static gnuplot scripts for report directories.

Scripts reference their CSV inputs by paths relative to the report
directory, so a directory can be moved as a whole and plotted with
``gnuplot <script>.gp`` from inside it.
"""
from __future__ import annotations

import json
import os
import warnings
from pathlib import Path

import numpy as np


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and ``os.replace``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def spectrum_script(csv_name: str, title="singular values", cut=None) -> str:
    lines = [
        "set terminal pngcairo size 800,500",
        f"set output '{Path(csv_name).stem}.png'",
        "set datafile separator ','",
        "set logscale y",
        "set format y '10^{%L}'",
        "set xlabel 'index'",
        "set ylabel 'sigma / sigma_max'",
        f"set title '{title}'",
    ]
    if cut is not None:
        lines.append(f"set arrow from {cut},graph 0 to {cut},graph 1 nohead dt 2")
    lines.append(f"plot '{csv_name}' using 1:3 skip 1 with points pt 7 ps 0.5 title 'sigma'")
    return "\n".join(lines) + "\n"


def slope_script(csv_name: str, names, slopes: dict) -> str:
    """Log-log residual against ``h`` with the fitted order in the key."""
    lines = [
        "set terminal pngcairo size 800,500",
        f"set output '{Path(csv_name).stem}.png'",
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'h'",
        "set ylabel 'relative residual'",
        "set key left top",
    ]
    plots = []
    for i, name in enumerate(names):
        s = slopes.get(name)
        label = name if s is None else f"{name} (order {s:.2f})"
        plots.append(f"'{csv_name}' using 1:{i + 2} skip 1 with linespoints title '{label}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def heatmap_script(csv_name: str, title="|C_- - Id|") -> str:
    return "\n".join([
        "set terminal pngcairo size 800,600",
        f"set output '{Path(csv_name).stem}.png'",
        "set datafile separator ','",
        "set xlabel 'beta'",
        "set ylabel 'mu'",
        f"set title '{title}'",
        "set view map",
        f"splot '{csv_name}' using 1:2:3 skip 1 with points pt 5 ps 0.6 palette notitle",
    ]) + "\n"


def bars_script(csv_name: str, title="residuals") -> str:
    return "\n".join([
        "set terminal pngcairo size 900,500",
        f"set output '{Path(csv_name).stem}.png'",
        "set datafile separator ','",
        "set logscale y",
        "set style data histograms",
        "set style fill solid 0.6",
        "set xtics rotate by -30",
        f"set title '{title}'",
        f"plot '{csv_name}' using 2:xtic(1) skip 1 title 'value', '' using 3 skip 1 title 'tolerance'",
    ]) + "\n"


def write_slope_csv(path, hs, columns: dict):
    names = list(columns)
    rows = np.column_stack([np.asarray(hs, float)] + [np.asarray(columns[k], float) for k in names])
    header = ",".join(["h"] + names)
    body = "\n".join(",".join(f"{v:.17g}" for v in r) for r in rows)
    atomic_write(path, header + "\n" + body + "\n")


def emit_plots(report_dir) -> list:
    """Write plot scripts for every report found in ``report_dir``.

    Returns the script paths.  An empty directory is a no-op with a warning;
    a missing directory raises ``FileNotFoundError``.
    """
    d = Path(report_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"no report directory {d}")
    reports = sorted(d.glob("*_report.json"))
    if not reports:
        warnings.warn(f"no reports in {d}; nothing to plot")
        return []
    out = []
    for rp in reports:
        with open(rp, encoding="utf-8") as fh:
            rep = json.load(fh)
        cmd = rep.get("command")
        res = rep.get("results", {})
        if cmd == "kernel" and (d / "kernel_spectrum.csv").exists():
            cut = res.get("probe", {}).get("predicted_dim")
            cols = res.get("operator", {}).get("cols")
            pos = None if cut is None or cols is None else cols - cut - 0.5
            out.append(_emit(d / "kernel_spectrum.gp", spectrum_script("kernel_spectrum.csv", cut=pos)))
        elif cmd == "verify" and (d / "verify_residuals.csv").exists():
            slopes = res.get("slopes", {})
            names = res.get("columns", list(slopes))
            out.append(_emit(d / "verify_residuals.gp", slope_script("verify_residuals.csv", names, slopes)))
        elif cmd == "scatter" and (d / "scatter_C.csv").exists():
            out.append(_emit(d / "scatter_C.gp", heatmap_script("scatter_C.csv")))
        elif cmd in ("transform",) and (d / "transform_data.csv").exists():
            out.append(_emit(d / "transform_data.gp",
                             heatmap_script("transform_data.csv", "|I f| on the incoming boundary")))
        elif cmd in ("holo", "rigidity") and (d / f"{cmd}_summary.csv").exists():
            out.append(_emit(d / f"{cmd}_summary.gp", bars_script(f"{cmd}_summary.csv", f"{cmd} residuals")))
    return out


def _emit(path, text):
    atomic_write(path, text)
    return str(path)

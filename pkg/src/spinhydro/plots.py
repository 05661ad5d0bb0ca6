"""Plot-ready column files and quick-look SVG line plots from a run directory."""
from __future__ import annotations

import csv
import json
from html import escape
from pathlib import Path

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def _write_dat(path: Path, header: list[str], columns: list[np.ndarray], blocks: int | None = None) -> None:
    """Whitespace-separated columns; with ``blocks`` a blank line separates each run of that many rows."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        n = len(columns[0])
        for r in range(n):
            if blocks and r and r % blocks == 0:
                fh.write("\n")
            fh.write(" ".join(repr(float(c[r])) for c in columns) + "\n")


def svg_line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "",
                  width: int = 640, height: int = 400) -> str:
    """Self-contained SVG of one or more (label, x, y) polylines on shared linear axes."""
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([np.asarray(x, float) for _, x, _ in series])
    ys = np.concatenate([np.asarray(y, float) for _, _, y in series])
    ok = np.isfinite(xs) & np.isfinite(ys)
    if not ok.any():
        xs, ys = np.zeros(1), np.zeros(1)
    else:
        xs, ys = xs[ok], ys[ok]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 == y0:
        pad = max(abs(y0), 1.0) * 0.1
        y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle">{escape(title)}</text>',
        f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{left - 5}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
    for k, (label, x, y) in enumerate(series):
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[keep], y[keep]))
        color = COLORS[k % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{left + 8}" y="{top + 16 + 14 * k}" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _profiles(run: Path, dest: Path, written: list) -> None:
    for path in sorted(run.glob("hydro_*.csv")):
        header, data = _read_csv(path)
        col = {h: data[:, i] for i, h in enumerate(header)}
        frame = path.stem.split("_")[1]
        two_d = "y" in col
        names = ["x", "y"] if two_d else ["x"]
        names += ["rho", "Q_amp", "Q_kin", "v_B_x", "v_B_y", "v_S_x", "v_S_y"] if two_d else ["rho", "Q_amp", "Q_kin", "v_B_x", "v_S_x"]
        blocks = int(round(np.sqrt(len(col["x"])))) if two_d else None
        out = dest / f"profiles_{frame}.dat"
        _write_dat(out, names, [col[n] for n in names], blocks)
        written.append(out)
        if not two_d:
            valid = col["mask"] == 0
            x = col["x"][valid]
            svg = svg_line_plot(
                [("rho", x, col["rho"][valid]), ("Q", x, col["Q_amp"][valid])],
                title=f"frame {int(frame)}",
                xlabel="x",
            )
            out = dest / f"profiles_{frame}.svg"
            out.write_text(svg)
            written.append(out)


def _traces(run: Path, dest: Path, written: list) -> None:
    paths = sorted(run.glob("traj_*.csv")) + sorted(run.glob("split_*.csv"))
    lines = []
    for path in paths:
        header, data = _read_csv(path)
        keep = [h for h in header if not h.startswith("v_total")]
        out = dest / f"trace_{path.stem}.dat"
        _write_dat(out, keep, [data[:, header.index(h)] for h in keep])
        written.append(out)
        if path.stem.startswith("traj_"):
            t = data[:, 0]
            lines.append((f"{path.stem} x", t, data[:, header.index("x_total_x")]))
            lines.append((f"{path.stem} y", t, data[:, header.index("x_total_y")]))
    if lines:
        out = dest / "traces.svg"
        out.write_text(svg_line_plot(lines, title="trajectories", xlabel="t", ylabel="position"))
        written.append(out)


def _tv(run: Path, dest: Path, written: list) -> None:
    path = run / "ensemble_summary.json"
    if not path.exists():
        return
    summary = json.loads(path.read_text())
    lines = []
    for mode in sorted(summary):
        times = np.array(summary[mode]["times"], dtype=float)
        tv = np.array([np.nan if v is None else v for v in summary[mode]["tv"]], dtype=float)
        out = dest / f"tv_{mode}.dat"
        _write_dat(out, ["time", "tv"], [times, tv])
        written.append(out)
        lines.append((mode, times, tv))
    out = dest / "tv.svg"
    out.write_text(svg_line_plot(lines, title="ensemble vs density", xlabel="t", ylabel="TV distance"))
    written.append(out)


def _residual_series(run: Path, dest: Path, written: list) -> None:
    path = run / "residuals.json"
    series = json.loads(path.read_text())
    times = np.array(series["times"], dtype=float)
    full, interior = [], []
    for key in sorted(series):
        vals = series[key]
        if key == "times" or not isinstance(vals, list) or not vals or isinstance(vals[0], list):
            continue
        arr = np.array([np.nan if v is None else v for v in vals], dtype=float)
        if arr.size == times.size:
            full.append((key, arr))
        elif arr.size == times.size - 2:
            interior.append((key, arr))
    for name, group, t in (("residuals", full, times), ("residuals_interior", interior, times[1:-1])):
        if group:
            out = dest / f"{name}.dat"
            _write_dat(out, ["time"] + [k for k, _ in group], [t] + [a for _, a in group])
            written.append(out)


def emit_plots(run_dir: str | Path, dest: str | Path | None = None) -> list[Path]:
    """Write column files and SVGs for a finished run; returns the written paths."""
    run = Path(run_dir)
    if not (run / "residuals.json").exists() or not any(run.glob("hydro_*.csv")):
        raise FileNotFoundError(f"no scenario outputs in {run} (expected residuals.json and hydro_*.csv; run the scenario first)")
    dest = Path(dest) if dest else run / "plots"
    dest.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    _profiles(run, dest, written)
    _traces(run, dest, written)
    _tv(run, dest, written)
    _residual_series(run, dest, written)
    return written

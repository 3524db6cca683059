"""Result tables and standalone SVG charts (polylines and bars only)."""
from __future__ import annotations

import re
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from .errors import DataError

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
RISKY_LABEL = "Risky asset"


def slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def format_table(comparison: pd.DataFrame) -> str:
    """Text table: one block per window, columns return, Sortino, Sharpe, max DD."""
    out = []
    width = max([len(m) for m in comparison["model"]] + [12])

    def fmt(v, pct=False):
        if v is None or (isinstance(v, float) and np.isnan(v)):
            return "n/a"
        return f"{100 * v:.2f}%" if pct else f"{v:.2f}"

    for years, block in comparison.groupby("window_years", sort=True):
        out.append(f"{'':{width}}  {years} Years")
        out.append(f"{'':{width}}  {'return':>9} {'Sortino':>8} {'Sharpe':>8} {'max DD':>8}")
        for _, row in block.iterrows():
            # drawdowns print as losses, so a 34% drawdown reads -0.34
            out.append(f"{row['model']:<{width}}  {fmt(row['return_ann'], True):>9} "
                       f"{fmt(row['sortino']):>8} {fmt(row['sharpe']):>8} "
                       f"{fmt(-row['max_dd']):>8}")
        out.append("")
    return "\n".join(out).rstrip() + "\n"


def _svg(width, height, body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<title>{escape(title)}</title>\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}</svg>\n')


def line_chart(series: dict, title: str, width=900, height=480) -> str:
    """One polyline per named series of ``(dates, values)``."""
    left, right, top, bottom = 60, 180, 40, 40
    all_dates = pd.DatetimeIndex(np.concatenate([pd.DatetimeIndex(d).values for d, _ in series.values()]))
    all_vals = np.concatenate([np.asarray(v, float) for _, v in series.values()])
    t0, t1 = all_dates.min().value, all_dates.max().value
    lo, hi = float(all_vals.min()), float(all_vals.max())
    hi = hi if hi > lo else lo + 1.0
    span_t = max(t1 - t0, 1)

    def xy(d, v):
        x = left + (pd.DatetimeIndex(d).asi8 - t0) / span_t * (width - left - right)
        y = top + (hi - np.asarray(v, float)) / (hi - lo) * (height - top - bottom)
        return x, y

    parts = [f'<text x="{left}" y="24" font-size="16" font-family="sans-serif">{escape(title)}</text>',
             f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        val = lo + frac * (hi - lo)
        y = top + (1 - frac) * (height - top - bottom)
        parts.append(f'<text x="{left - 6}" y="{y:.1f}" font-size="11" text-anchor="end" '
                     f'font-family="sans-serif">{val:.2f}</text>')
    for i, (name, (dates, values)) in enumerate(series.items()):
        x, y = xy(dates, values)
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(x, y))
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 16 * i
        parts.append(f'<text x="{width - right + 10}" y="{ly + 4}" font-size="12" fill="{color}" '
                     f'font-family="sans-serif">{escape(name)}</text>')
    return _svg(width, height, "\n".join(parts) + "\n", title)


def bar_chart(table: pd.DataFrame, title: str, width=700, height=400) -> str:
    """Stacked bars: rows are periods, columns strategies, values weights."""
    left, right, top, bottom = 50, 150, 40, 40
    n = len(table)
    slot = (width - left - right) / max(n, 1)
    total = max(float(table.sum(axis=1).max()), 1e-12)
    parts = [f'<text x="{left}" y="24" font-size="16" font-family="sans-serif">{escape(title)}</text>']
    for i, (period, row) in enumerate(table.iterrows()):
        base = height - bottom
        x = left + i * slot + 0.1 * slot
        for j, (strategy, w) in enumerate(row.items()):
            h = float(w) / total * (height - top - bottom)
            parts.append(f'<rect class="bar" x="{x:.1f}" y="{base - h:.1f}" width="{0.8 * slot:.1f}" '
                         f'height="{h:.1f}" fill="{PALETTE[j % len(PALETTE)]}"/>')
            base -= h
        parts.append(f'<text x="{x + 0.4 * slot:.1f}" y="{height - bottom + 14}" font-size="11" '
                     f'text-anchor="middle" font-family="sans-serif">{escape(str(period))}</text>')
    for j, strategy in enumerate(table.columns):
        parts.append(f'<text x="{width - right + 10}" y="{top + 16 * j + 4}" font-size="12" '
                     f'fill="{PALETTE[j % len(PALETTE)]}" font-family="sans-serif">'
                     f'{escape(str(strategy))}</text>')
    return _svg(width, height, "\n".join(parts) + "\n", title)


def annual_weights(weights: pd.DataFrame, model: str) -> pd.DataFrame:
    """Mean weight per strategy and calendar year, from rows of ``date,model,strategy,weight``."""
    w = weights[weights["model"] == model].copy()
    w["year"] = pd.to_datetime(w["date"]).dt.year
    return w.pivot_table(index="year", columns="strategy", values="weight", aggfunc="mean",
                         sort=True)


REQUIRED = ("comparison.csv", "weights.csv", "risky_asset.csv")


def render(results: Path) -> tuple[str, list[Path]]:
    """Build the text table and write SVG charts into ``results``."""
    results = Path(results)
    if not results.is_dir():
        raise DataError(f"results directory {results} does not exist")
    missing = [name for name in REQUIRED if not (results / name).exists()]
    paths = sorted(results.glob("stitched_path_*.csv"))
    if not paths:
        missing.append("stitched_path_<model>.csv")
    if missing:
        raise DataError(f"missing result files in {results}: {', '.join(missing)}")
    comparison = pd.read_csv(results / "comparison.csv")
    weights = pd.read_csv(results / "weights.csv")
    risky = pd.read_csv(results / "risky_asset.csv", parse_dates=["date"])
    names = {slug(m): m for m in comparison["model"].unique()}

    series = {}
    for p in paths:
        key = p.stem[len("stitched_path_"):]
        name = names.get(key, key)
        if name == RISKY_LABEL:
            continue
        df = pd.read_csv(p, parse_dates=["date"])
        series[name] = (df["date"], df["value"])
    series[RISKY_LABEL] = (risky["date"], risky["value"])

    # render everything first so a failure leaves no partial output
    charts = {results / "performance.svg": line_chart(series, "Cumulative value")}
    for model in weights["model"].unique():
        table = annual_weights(weights, model)
        charts[results / f"weights_{slug(model)}.svg"] = bar_chart(table, f"{model}: mean annual weights")
    for path, svg in charts.items():
        path.write_text(svg)
    return format_table(comparison), list(charts)

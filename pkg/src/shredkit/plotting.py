"""Standalone SVG line charts for ensemble summaries and forecast curves.

Each series is drawn as one ``<polyline>`` through its medians, with the
interquartile band as a translucent ``<polygon>`` behind it. Axes, ticks and
legend swatches use ``<line>`` elements, so the polyline count equals the
number of series.
"""

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import InvalidArgumentError

WIDTH, HEIGHT = 800, 500
MARGIN = dict(left=80, right=190, top=50, bottom=60)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
LOG_FLOOR = 1e-16


@dataclass
class Series:
    label: str
    x: np.ndarray
    median: np.ndarray
    q25: np.ndarray = None
    q75: np.ndarray = None
    dashed: bool = False


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v):
    return f"{v:.3g}"


class _Axes:
    def __init__(self, xs, ys, log_y):
        self.log_y = log_y
        x_lo, x_hi = float(np.min(xs)), float(np.max(xs))
        if x_hi == x_lo:
            x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
        ys = np.asarray(ys, dtype=np.float64)
        if log_y:
            ys = np.log10(np.maximum(ys, LOG_FLOOR))
            y_lo, y_hi = math.floor(ys.min()), math.ceil(ys.max())
            if y_hi == y_lo:
                y_hi += 1
        else:
            y_lo, y_hi = min(0.0, float(ys.min())), float(ys.max())
            if y_hi == y_lo:
                y_hi = y_lo + 1.0
            y_hi *= 1.05 if y_hi > 0 else 1.0
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = x_lo, x_hi, y_lo, y_hi
        self.left, self.top = MARGIN["left"], MARGIN["top"]
        self.w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x):
        return self.left + (x - self.x_lo) / (self.x_hi - self.x_lo) * self.w

    def py(self, y):
        if self.log_y:
            y = math.log10(max(y, LOG_FLOOR))
        return self.top + (1.0 - (y - self.y_lo) / (self.y_hi - self.y_lo)) * self.h

    def y_ticks(self):
        if self.log_y:
            return [(10.0**e, f"1e{e}") for e in range(int(self.y_lo), int(self.y_hi) + 1)]
        return [(v, _fmt(v)) for v in _nice_ticks(self.y_lo, self.y_hi)]

    def x_ticks(self, xs):
        uniq = sorted(set(float(v) for v in xs))
        if len(uniq) <= 10:
            return [(v, _fmt(v)) for v in uniq]
        return [(v, _fmt(v)) for v in _nice_ticks(self.x_lo, self.x_hi)]


def _points(ax, xs, ys):
    return " ".join(f"{ax.px(x):.2f},{ax.py(y):.2f}" for x, y in zip(xs, ys))


def line_chart(series, title="", xlabel="", ylabel="", log_y=False):
    """SVG text for a set of median curves with optional IQR bands."""
    if not series:
        raise InvalidArgumentError("nothing to plot")
    for s in series:
        if len(s.x) == 0 or len(s.x) != len(s.median):
            raise InvalidArgumentError(f"series {s.label!r} needs matching nonempty x and median")
    all_x = np.concatenate([np.asarray(s.x, float) for s in series])
    all_y = np.concatenate([np.asarray(v, float) for s in series for v in (s.median, s.q25, s.q75) if v is not None])
    ax = _Axes(all_x, all_y, log_y)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>',
    ]
    x0, x1 = ax.left, ax.left + ax.w
    y0, y1 = ax.top + ax.h, ax.top
    for v, text in ax.y_ticks():
        y = ax.py(v)
        out.append(f'<line x1="{x0}" y1="{y:.2f}" x2="{x1}" y2="{y:.2f}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end">{escape(text)}</text>')
    for v, text in ax.x_ticks(all_x):
        x = ax.px(v)
        out.append(f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y0 + 20}" text-anchor="middle">{escape(text)}</text>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(20 {(y0 + y1) / 2:.0f}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>')

    for i, s in enumerate(series):
        if s.q25 is None or s.q75 is None:
            continue
        color = PALETTE[i % len(PALETTE)]
        upper = _points(ax, s.x, s.q75)
        lower = _points(ax, s.x[::-1], np.asarray(s.q25)[::-1])
        out.append(f'<polygon class="iqr" points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline class="median" data-label="{escape(s.label)}" points="{_points(ax, s.x, s.median)}" '
                   f'fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = ax.top + 10 + 20 * i
        lx = x1 + 20
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 32}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _group(summaries, key):
    groups = {}
    for s in summaries:
        groups.setdefault(key(s), []).append(s)
    return groups


def summary_series(summaries, x="n_sensors"):
    """Group summaries into one series per remaining cell coordinate, sorted along ``x``."""
    if x == "n_sensors":
        key = lambda s: (s.method, s.placement, s.alpha)  # noqa: E731
        name = lambda k: f"{k[0]} ({k[1]})" + (f", alpha={k[2]:g}" if k[2] else "")  # noqa: E731
    elif x == "alpha":
        key = lambda s: (s.method, s.placement, s.n_sensors)  # noqa: E731
        name = lambda k: f"{k[0]} ({k[1]}, {k[2]} sensors)"  # noqa: E731
    else:
        raise InvalidArgumentError(f"x must be 'n_sensors' or 'alpha', got {x!r}")
    out = []
    for k, group in _group(summaries, key).items():
        group = sorted(group, key=lambda s: getattr(s, x))
        out.append(Series(name(k), np.array([getattr(s, x) for s in group], float),
                          np.array([s.median for s in group]), np.array([s.q25 for s in group]),
                          np.array([s.q75 for s in group])))
    return out


def plot_summaries(summaries, x="n_sensors", log_y=False, title=None):
    xlabel = "number of sensors" if x == "n_sensors" else "noise level alpha"
    title = title or ("Reconstruction error vs sensor count" if x == "n_sensors" else "Reconstruction error vs noise")
    return line_chart(summary_series(summaries, x), title, xlabel, "relative test error", log_y)


def plot_forecast(result, log_y=False, title="Forecast reconstruction error"):
    """SHRED and POD per-step medians with IQR bands, plus the dashed ensemble curve."""
    steps = np.arange(1, result.horizon + 1, dtype=float)
    series = []
    for label, errs in (("SHRED", result.shred_errors), ("POD", result.pod_errors)):
        q25, med, q75 = np.quantile(errs, [0.25, 0.5, 0.75], axis=0, method="linear")
        series.append(Series(f"{label} median", steps, med, q25, q75))
    series.append(Series("SHRED ensemble", steps, np.asarray(result.ensemble_errors), dashed=True))
    return line_chart(series, title, "forecast step", "relative error", log_y)


def write_svg(path, svg):
    with open(path, "w") as fh:
        fh.write(svg)

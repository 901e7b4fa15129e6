"""Self-contained SVG line charts for Monte Carlo results.

Only lines, markers, translucent ribbons, axes and text are drawn, with
no scripts, fonts or linked images, so each file renders on its own.
"""
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .montecarlo import ESTIMANDS, MonteCarloResult

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
PANEL_W, PANEL_H = 300, 220
MARGIN = dict(left=58, right=14, top=34, bottom=44)


def _ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + step * 1e-9:
        out.append(round(v, 12))
        v += step
    return out


def _fmt(v):
    return format(v, ".3g")


class _Panel:
    def __init__(self, x0, y0, title, xs, ys, xlabel, ylabel, log_x=False):
        self.x0, self.y0 = x0, y0
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.log_x = log_x
        fx = [math.log10(x) for x in xs] if log_x else list(xs)
        self.xmin, self.xmax = min(fx), max(fx)
        if self.xmin == self.xmax:
            self.xmin, self.xmax = self.xmin - 0.5, self.xmax + 0.5
        finite = [y for y in ys if y is not None and math.isfinite(y)] or [0.0]
        lo, hi = min(finite), max(finite)
        pad = (hi - lo) * 0.08 or max(abs(hi) * 0.1, 1e-3)
        self.ymin, self.ymax = lo - pad, hi + pad
        self.iw = PANEL_W - MARGIN["left"] - MARGIN["right"]
        self.ih = PANEL_H - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x):
        x = math.log10(x) if self.log_x else x
        return self.x0 + MARGIN["left"] + (x - self.xmin) / (self.xmax - self.xmin) * self.iw

    def py(self, y):
        return self.y0 + MARGIN["top"] + (1 - (y - self.ymin) / (self.ymax - self.ymin)) * self.ih

    def frame(self, xticks):
        left, top = self.x0 + MARGIN["left"], self.y0 + MARGIN["top"]
        parts = [f'<rect x="{left:.1f}" y="{top:.1f}" width="{self.iw}" height="{self.ih}" '
                 f'fill="none" stroke="#444" stroke-width="1"/>',
                 f'<text x="{self.x0 + PANEL_W / 2:.1f}" y="{self.y0 + 20:.1f}" text-anchor="middle" '
                 f'font-size="13" font-weight="bold">{escape(self.title)}</text>']
        for x in xticks:
            X = self.px(x)
            parts.append(f'<line x1="{X:.1f}" y1="{top + self.ih:.1f}" x2="{X:.1f}" y2="{top + self.ih + 4:.1f}" stroke="#444"/>')
            parts.append(f'<text x="{X:.1f}" y="{top + self.ih + 16:.1f}" text-anchor="middle" font-size="10">{_fmt(x)}</text>')
        for y in _ticks(self.ymin, self.ymax):
            Y = self.py(y)
            parts.append(f'<line x1="{left - 4:.1f}" y1="{Y:.1f}" x2="{left:.1f}" y2="{Y:.1f}" stroke="#444"/>')
            parts.append(f'<line x1="{left:.1f}" y1="{Y:.1f}" x2="{left + self.iw:.1f}" y2="{Y:.1f}" stroke="#eee"/>')
            parts.append(f'<text x="{left - 6:.1f}" y="{Y + 3:.1f}" text-anchor="end" font-size="10">{_fmt(y)}</text>')
        if self.ymin < 0 < self.ymax:
            Y = self.py(0.0)
            parts.append(f'<line x1="{left:.1f}" y1="{Y:.1f}" x2="{left + self.iw:.1f}" y2="{Y:.1f}" '
                         f'stroke="#999" stroke-dasharray="4 3"/>')
        parts.append(f'<text x="{self.x0 + MARGIN["left"] + self.iw / 2:.1f}" y="{self.y0 + PANEL_H - 8:.1f}" '
                     f'text-anchor="middle" font-size="11">{escape(self.xlabel)}</text>')
        cy = self.y0 + MARGIN["top"] + self.ih / 2
        parts.append(f'<text x="{self.x0 + 14:.1f}" y="{cy:.1f}" text-anchor="middle" font-size="11" '
                     f'transform="rotate(-90 {self.x0 + 14:.1f} {cy:.1f})">{escape(self.ylabel)}</text>')
        return parts

    def series(self, xs, ys, color, lo=None, hi=None, dash=None):
        pts = [(x, y) for x, y in zip(xs, ys) if y is not None and math.isfinite(y)]
        parts = []
        if lo is not None and hi is not None:
            band = [(x, l, h) for x, l, h in zip(xs, lo, hi)
                    if l is not None and h is not None and math.isfinite(l) and math.isfinite(h)]
            if len(band) > 1:
                poly = [f"{self.px(x):.1f},{self.py(h):.1f}" for x, _, h in band]
                poly += [f"{self.px(x):.1f},{self.py(l):.1f}" for x, l, _ in reversed(band)]
                parts.append(f'<polygon points="{" ".join(poly)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
            for x, l, h in band:
                X = self.px(x)
                parts.append(f'<line x1="{X:.1f}" y1="{self.py(l):.1f}" x2="{X:.1f}" y2="{self.py(h):.1f}" '
                             f'stroke="{color}" stroke-opacity="0.5"/>')
        if len(pts) > 1:
            path = " ".join(f"{self.px(x):.1f},{self.py(y):.1f}" for x, y in pts)
            style = f' stroke-dasharray="{dash}"' if dash else ""
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.8"{style}/>')
        for x, y in pts:
            parts.append(f'<circle cx="{self.px(x):.1f}" cy="{self.py(y):.1f}" r="2.8" fill="{color}"/>')
        return parts


def _legend(x, y, entries):
    parts = []
    for i, (label, color, dash) in enumerate(entries):
        yy = y + 16 * i
        style = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<line x1="{x}" y1="{yy}" x2="{x + 22}" y2="{yy}" stroke="{color}" stroke-width="2"{style}/>')
        parts.append(f'<text x="{x + 28}" y="{yy + 4}" font-size="11">{escape(label)}</text>')
    return parts


def _document(width, height, body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
            f'<title>{escape(title)}</title>\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def _values(rows, key):
    return [r[key] for r in rows]


def bias_panel(result: MonteCarloResult, estimand) -> str:
    """Mean bias against effect size, one facet per sample size, CI ribbons per estimator."""
    rows = [r for r in result.rows if r["estimand"] == estimand]
    ns = sorted({r["n"] for r in rows})
    estimators = [e for e in dict.fromkeys(r["estimator"] for r in rows)]
    effects = sorted({r["effect"] for r in rows})
    ys = [v for r in rows for v in (r["mean_bias"], r["ci_low"], r["ci_high"])]
    body = []
    for i, n in enumerate(ns):
        panel = _Panel(i * PANEL_W, 0, f"{estimand}, n={n}", effects, ys, "effect of T on O", "bias")
        body += panel.frame(effects)
        for j, est in enumerate(estimators):
            sel = sorted((r for r in rows if r["n"] == n and r["estimator"] == est), key=lambda r: r["effect"])
            body += panel.series(_values(sel, "effect"), _values(sel, "mean_bias"), PALETTE[j % len(PALETTE)],
                                 _values(sel, "ci_low"), _values(sel, "ci_high"))
    width = max(len(ns), 1) * PANEL_W + 130
    body += _legend(width - 120, MARGIN["top"] + 10,
                    [(e, PALETTE[j % len(PALETTE)], None) for j, e in enumerate(estimators)])
    return _document(width, PANEL_H, body, f"bias of {estimand}")


def bound_range_panel(result: MonteCarloResult) -> str:
    """Mean bound range of the MNAR estimate of P(O|T) against sample size, one line per effect."""
    rows = [r for r in result.rows if r["estimator"] == "mnar" and r["estimand"] in ESTIMANDS[:2]]
    ns = sorted({r["n"] for r in rows})
    effects = sorted({r["effect"] for r in rows})
    series = {}
    for e in effects:
        series[e] = [sum(r["mean_bound_range"] for r in rows if r["n"] == n and r["effect"] == e) / 2 for n in ns]
    ys = [v for vals in series.values() for v in vals]
    panel = _Panel(0, 0, "bound range", ns, ys, "sample size", "mean ub - lb", log_x=len(ns) > 1)
    body = panel.frame(ns)
    for j, e in enumerate(effects):
        body += panel.series(ns, series[e], PALETTE[j % len(PALETTE)])
    body += _legend(PANEL_W + 10, MARGIN["top"] + 10,
                    [(f"effect {_fmt(e)}", PALETTE[j % len(PALETTE)], None) for j, e in enumerate(effects)])
    return _document(PANEL_W + 130, PANEL_H, body, "bound range")


def missingness_panel(result: MonteCarloResult) -> str:
    """Missing-outcome proportion per arm against effect size, one line per (arm, n)."""
    seen = {}
    for r in result.rows:
        seen.setdefault((r["n"], r["effect"]), r)
    ns = sorted({n for n, _ in seen})
    effects = sorted({e for _, e in seen})
    ys = [r[k] for r in seen.values() for k in ("missing_t0", "missing_t1")]
    panel = _Panel(0, 0, "missing outcomes", effects, ys, "effect of T on O", "proportion missing")
    body = panel.frame(effects)
    legend = []
    for j, n in enumerate(ns):
        color = PALETTE[j % len(PALETTE)]
        for arm, dash in ((0, "5 3"), (1, None)):
            vals = [seen[(n, e)][f"missing_t{arm}"] for e in effects]
            body += panel.series(effects, vals, color, dash=dash)
            legend.append((f"T={arm}, n={n}", color, dash))
    body += _legend(PANEL_W + 10, MARGIN["top"] + 10, legend)
    return _document(PANEL_W + 140, max(PANEL_H, MARGIN["top"] + 20 + 16 * len(legend)), body, "missing outcomes")


def emit_plots(result: MonteCarloResult, out_dir) -> list:
    """Write one SVG per panel into ``out_dir`` and return the paths."""
    if not result.rows:
        raise ValueError("nothing to plot: the result has no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    present = {r["estimand"] for r in result.rows}
    names = {"P(O|T=0)": "bias_p_o_t0", "P(O|T=1)": "bias_p_o_t1", "ATE": "bias_ate", "AC-LOR": "bias_aclor"}
    for estimand in ESTIMANDS:
        if estimand in present:
            path = out / f"{names[estimand]}.svg"
            path.write_text(bias_panel(result, estimand))
            files.append(path)
    for name, make in (("bound_range", bound_range_panel), ("missingness", missingness_panel)):
        path = out / f"{name}.svg"
        path.write_text(make(result))
        files.append(path)
    return files

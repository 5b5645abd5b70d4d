"""Plot-ready files for one forecast day and a static SVG rendering of them.

Floats are written with ``repr`` so files round-trip exactly and identical
runs give identical bytes.
"""

import csv
import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import ArtifactError
from .forecaster import DEFAULT_ALPHAS

FILES = ("mixture.json", "ensemble.csv", "fan.csv", "band.csv", "best_trace.csv", "sigma_fan.csv")


def _hours(T):
    return [f"h{t:02d}" for t in range(T)]


def _num(v):
    return "nan" if np.isnan(v) else repr(float(v))


def write_rows(path, first_col, labels, rows):
    rows = np.atleast_2d(rows)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([first_col] + _hours(rows.shape[1]))
        for label, row in zip(labels, rows):
            w.writerow([label] + [_num(v) for v in row])


def read_rows(path):
    """Returns ``(labels, values)`` from a file written by ``write_rows``."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise ArtifactError(f"{path} has no data rows")
    labels = [r[0] for r in rows[1:]]
    return labels, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def write_day(directory, day, levels):
    """Write every artifact available on a ``DayForecast`` (or a QRNN fan-only record)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_rows(d / "fan.csv", "level", [repr(float(q)) for q in levels], day.fan.values)
    if day.mixture is not None:
        with open(d / "mixture.json", "w") as f:
            json.dump(day.mixture.to_dict(), f)
        ens = day.ensemble
        with open(d / "ensemble.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["member", "component"] + _hours(ens.samples.shape[1]))
            for i, (c, row) in enumerate(zip(ens.components, ens.samples)):
                w.writerow([i, int(c)] + [_num(v) for v in row])
    if day.truth is not None:
        labels, rows = ["truth"], [day.truth]
        if day.best_trace is not None:
            labels.append("best_trace")
            rows.append(day.best_trace)
        write_rows(d / "best_trace.csv", "kind", labels, np.array(rows))
    if day.sigma_fan is not None:
        write_rows(d / "sigma_fan.csv", "alpha", [repr(float(a)) for a in DEFAULT_ALPHAS], day.sigma_fan)
    if day.band is not None:
        h = (len(day.band) - 1) // 2
        write_rows(d / "band.csv", "offset", [str(i - h) for i in range(len(day.band))], day.band)


def day_dirs(root):
    """Forecast day directories (those holding a fan.csv) below ``root``, sorted."""
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.parent for p in root.rglob("fan.csv"))


# ---------------------------------------------------------------------------
# SVG


def _polyline(xs, ys, **attrs):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    extra = " ".join(f'{k.replace("_", "-")}="{escape(str(v))}"' for k, v in attrs.items())
    return f'<polyline points="{pts}" fill="none" {extra}/>'


def fan_svg(levels, fan, truth=None, best=None, band=None, title=""):
    """Fan chart (nested quantile bands, median, truth, best trace) with an optional band heatmap."""
    levels = np.asarray(levels, dtype=float)
    fan = np.asarray(fan, dtype=float)
    Q, T = fan.shape
    W, H, pad = 640, 300, 40
    series = [fan] + [np.atleast_2d(s) for s in (truth, best) if s is not None]
    lo = min(np.nanmin(s) for s in series)
    hi = max(np.nanmax(s) for s in series)
    span = hi - lo if hi > lo else 1.0
    xs = pad + np.arange(T) * (W - 2 * pad) / max(T - 1, 1)

    def ys(v):
        return H - pad - (np.asarray(v) - lo) / span * (H - 2 * pad)

    total_h = H + (H if band is not None else 0)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{total_h}" viewBox="0 0 {W} {total_h}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{W}" height="{total_h}" fill="white"/>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
    ]
    n_pairs = Q // 2
    for i in range(n_pairs):
        upper, lower = fan[Q - 1 - i], fan[i]
        pts = list(zip(xs, ys(upper))) + list(zip(xs[::-1], ys(lower)[::-1]))
        poly = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        opacity = 0.15 + 0.5 * (i + 1) / max(n_pairs, 1)
        label = f"{levels[i]:g}-{levels[Q - 1 - i]:g}"
        out.append(f'<polygon points="{poly}" fill="steelblue" fill-opacity="{opacity:.3f}"><title>{label}</title></polygon>')
    if Q % 2:
        out.append(_polyline(xs, ys(fan[Q // 2]), stroke="navy", stroke_width=1.5))
    if truth is not None:
        out.append(_polyline(xs, ys(truth), stroke="black", stroke_width=2))
    if best is not None:
        out.append(_polyline(xs, ys(best), stroke="darkorange", stroke_width=1.5, stroke_dasharray="5,3"))
    if band is not None:
        band = np.asarray(band, dtype=float)
        rows = band.shape[0]
        scale = np.nanmax(np.abs(band)) if np.any(np.isfinite(band)) else 1.0
        scale = scale if scale > 0 else 1.0
        cw, ch = (W - 2 * pad) / T, (H - 2 * pad) / rows
        out.append('<g id="band"><title>covariance band</title>')
        for i in range(rows):
            for t in range(T):
                v = band[i, t]
                if not np.isfinite(v):
                    continue
                a = abs(v) / scale
                colour = "firebrick" if v >= 0 else "royalblue"
                out.append(
                    f'<rect x="{pad + t * cw:.2f}" y="{H + pad + i * ch:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                    f'fill="{colour}" fill-opacity="{a:.3f}"/>'
                )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_day(directory):
    """Render ``fan.svg`` in a forecast day directory and return its path."""
    d = Path(directory)
    if not (d / "fan.csv").exists():
        raise ArtifactError(f"no fan.csv in {d}")
    labels, fan = read_rows(d / "fan.csv")
    truth = best = band = None
    if (d / "best_trace.csv").exists():
        kinds, rows = read_rows(d / "best_trace.csv")
        named = dict(zip(kinds, rows))
        truth, best = named.get("truth"), named.get("best_trace")
    if (d / "band.csv").exists():
        band = read_rows(d / "band.csv")[1]
    svg = fan_svg([float(x) for x in labels], fan, truth, best, band, title=f"{d.parent.name} {d.name}")
    path = d / "fan.svg"
    path.write_text(svg)
    return path

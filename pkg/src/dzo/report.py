"""Trace serialization: CSV traces, JSON summaries, SVG charts, manifests."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .engine import Trace
from .metrics import Aggregate

CSV_COLUMNS = ("k", "f_gap", "grad_norm_sq", "consensus_err", "eta", "beta", "delta", "oracle_calls")
_INT_COLUMNS = {"k", "oracle_calls"}


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    return "%.17g" % x


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_csv(trace: Trace) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in trace.records:
        row = []
        for c in CSV_COLUMNS:
            v = getattr(r, c)
            row.append(str(int(v)) if c in _INT_COLUMNS else fmt(v))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def read_trace_csv(path) -> dict[str, np.ndarray]:
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:]]).reshape(-1, len(header))
    return {c: data[:, j] for j, c in enumerate(header)}


def aggregate_csv(agg: Aggregate) -> str:
    names = list(agg.mean)
    cols = ["k"] + [f"{m}_{s}" for m in names for s in ("mean", "ci95")]
    lines = [",".join(cols)]
    for j, k in enumerate(agg.ks):
        row = [str(int(k))]
        for m in names:
            row += [fmt(agg.mean[m][j]), fmt(agg.half_width[m][j])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _clean(obj):
    # NaN and infinities have no JSON spelling; store them as null
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def dat_text(ks, values) -> str:
    """Two-column whitespace table for external plotting tools."""
    return "".join(f"{int(k)} {fmt(v)}\n" for k, v in zip(ks, values))


# -- SVG ----------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 420
_L, _R, _T, _B = 70, 170, 30, 50


def svg_loglog(series: dict[str, tuple], title: str = "") -> str:
    """Minimal log-log line chart; ``series`` maps a label to (ks, values).

    Points with k <= 0 or a nonpositive or non-finite value are skipped.
    """
    clean = {}
    for label, (ks, vals) in series.items():
        ks = np.asarray(ks, dtype=float)
        vals = np.asarray(vals, dtype=float)
        ok = (ks > 0) & np.isfinite(vals) & (vals > 0)
        if ok.sum() >= 2:
            clean[label] = (np.log10(ks[ok]), np.log10(vals[ok]))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_escape(title)}</text>')
    if not clean:
        out.append(f'<text x="{_W / 2:.1f}" y="{_H / 2:.1f}" text-anchor="middle">no positive data</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    xlo = math.floor(min(x.min() for x, _ in clean.values()))
    xhi = math.ceil(max(x.max() for x, _ in clean.values()))
    ylo = math.floor(min(y.min() for _, y in clean.values()))
    yhi = math.ceil(max(y.max() for _, y in clean.values()))
    xhi = max(xhi, xlo + 1)
    yhi = max(yhi, ylo + 1)
    pw, ph = _W - _L - _R, _H - _T - _B

    def px(x):
        return _L + (x - xlo) / (xhi - xlo) * pw

    def py(y):
        return _T + (yhi - y) / (yhi - ylo) * ph

    out.append(f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    ystep = max(1, (yhi - ylo) // 8)
    for d in range(xlo, xhi + 1):
        x = px(d)
        out.append(f'<line x1="{x:.1f}" y1="{_T}" x2="{x:.1f}" y2="{_T + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.1f}" y="{_T + ph + 16}" text-anchor="middle">1e{d}</text>')
    for d in range(ylo, yhi + 1, ystep):
        y = py(d)
        out.append(f'<line x1="{_L}" y1="{y:.1f}" x2="{_L + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{_L - 6}" y="{y + 4:.1f}" text-anchor="end">1e{d}</text>')
    out.append(f'<text x="{_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">iteration k</text>')

    for j, (label, (xs, ys)) in enumerate(clean.items()):
        color = _COLORS[j % len(_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = _T + 14 + 18 * j
        out.append(f'<line x1="{_W - _R + 12}" y1="{ly}" x2="{_W - _R + 36}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _R + 42}" y="{ly + 4}">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_manifest(out_dir, files: list[str], extra: dict | None = None) -> Path:
    """Atomically write ``manifest.json`` listing the run's output files."""
    out_dir = Path(out_dir)
    body = {"files": sorted(files)}
    if extra:
        body.update(extra)
    path = out_dir / "manifest.json"
    atomic_write_text(path, dumps_json(body))
    return path

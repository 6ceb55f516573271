"""Deterministic writers for JSON records, CSV tables, SVG plots and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _cell(v.item())
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fmt(v):
    return f"{v:.4g}"


def svg_plot(series, title="", xlabel="", ylabel="", logx=False, logy=False, width=480, height=320) -> str:
    """Line plot with markers; ``series`` is a list of ``(label, xs, ys)``."""
    pad_l, pad_r, pad_t, pad_b = 64, 16, 28, 44
    tx = (lambda x: math.log10(x)) if logx else (lambda x: x)
    ty = (lambda y: math.log10(y)) if logy else (lambda y: y)
    pts = [(tx(x), ty(y)) for _, xs, ys in series for x, y in zip(xs, ys)]
    if not pts:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    W, H = width - pad_l - pad_r, height - pad_t - pad_b

    def X(x):
        return pad_l + (tx(x) - x0) / (x1 - x0) * W

    def Y(y):
        return pad_t + H - (ty(y) - y0) / (y1 - y0) * H

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
        f'font-size="11">',
        f'<rect x="{pad_l}" y="{pad_t}" width="{W}" height="{H}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle">{title}</text>',
        f'<text x="{pad_l + W / 2:.1f}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{pad_t + H / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {pad_t + H / 2:.1f})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        xl = 10**xv if logx else xv
        yl = 10**yv if logy else yv
        out.append(f'<text x="{pad_l + frac * W:.1f}" y="{pad_t + H + 16}" text-anchor="middle">{_fmt(xl)}</text>')
        out.append(f'<text x="{pad_l - 6}" y="{pad_t + H - frac * H + 4:.1f}" text-anchor="end">{_fmt(yl)}</text>')
    for k, (label, xs, ys) in enumerate(series):
        c = colors[k % len(colors)]
        coords = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        if len(xs) <= 50:
            out += [f'<circle cx="{X(x):.2f}" cy="{Y(y):.2f}" r="2.5" fill="{c}"/>' for x, y in zip(xs, ys)]
        out.append(f'<text x="{pad_l + W - 4}" y="{pad_t + 14 + 14 * k}" text-anchor="end" fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_boxes(boxes, width=360) -> str:
    """Top view of a 2-D cell (s horizontal, z vertical)."""
    z0 = min(b.lo[1] for b in boxes)
    z1 = max(b.hi[1] for b in boxes)
    s0 = min(b.lo[0] for b in boxes)
    s1 = max(b.hi[0] for b in boxes)
    pad = 10
    scale = (width - 2 * pad) / (s1 - s0)
    height = int(round((z1 - z0) * scale + 2 * pad))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for b in boxes:
        x = pad + (b.lo[0] - s0) * scale
        y = pad + (z1 - b.hi[1]) * scale
        out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{(b.hi[0] - b.lo[0]) * scale:.2f}" '
                   f'height="{(b.hi[1] - b.lo[1]) * scale:.2f}" fill="#9ecae1" stroke="#08519c"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    geometry_label: str
    geometry_sha256: str
    parameters: dict
    version: str
    seed: int | None = None
    started: str = field(default_factory=_now)
    finished: str | None = None
    outputs: list = field(default_factory=list)

    def add(self, path):
        self.outputs.append(os.path.basename(path))
        return path

    def to_dict(self):
        return {
            "command": self.command,
            "geometry": {"label": self.geometry_label, "sha256": self.geometry_sha256},
            "parameters": self.parameters,
            "version": self.version,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "outputs": sorted(self.outputs),
        }

    def write(self, out_dir):
        self.finished = _now()
        write_json(os.path.join(out_dir, "manifest.json"), self.to_dict())

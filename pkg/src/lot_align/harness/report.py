"""Report files: canonical JSON, a wide CSV and an SVG sweep plot."""

from __future__ import annotations

import csv
import io as _sio
import json
from pathlib import Path

from .. import io
from .protocol import METRICS, MetricsReport

FORMATS = ("json", "csv", "svg")
_COLORS = {"acc": "#1f77b4", "auc": "#d62728", "f1": "#2ca02c"}


def report_json(report: MetricsReport) -> str:
    return io.canonical_json(report.to_dict())


def parse_report(text: str) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(text))


def report_csv(report: MetricsReport) -> str:
    """One row per (condition, fold, ratio); one column per model and metric."""
    models = report.models()
    keyed: dict[tuple, dict] = {}
    for r in report.rows:
        key = (r["condition"], r["ratio"], r["fold"])
        row = keyed.setdefault(key, {"protocol": r["protocol"], "condition": r["condition"],
                                     "ratio": r["ratio"], "fold": r["fold"]})
        for m in METRICS:
            row[f"{r['model']}_{m}"] = "" if r[m] is None else repr(r[m])
    header = ["protocol", "condition", "ratio", "fold"] + [f"{mo}_{m}" for mo in models for m in METRICS]
    buf = _sio.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for key in sorted(keyed):
        w.writerow(keyed[key])
    return buf.getvalue()


def report_svg(report: MetricsReport, width: int = 480, height: int = 320) -> str:
    """Mean metric vs missing ratio, one polyline per metric per model."""
    left, right, top, bottom = 56, 110, 20, 44
    pw, ph = width - left - right, height - top - bottom
    ratios = sorted({s["ratio"] for s in report.summary})
    lo, hi = (ratios[0], ratios[-1]) if ratios else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0

    def px(r):
        return left + pw * (r - lo) / span

    def py(v):
        return top + ph * (1.0 - v)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<text x="{left - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    for r in ratios:
        parts.append(f'<text x="{px(r):.1f}" y="{top + ph + 14}" text-anchor="middle">{r:g}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">missing ratio</text>')
    parts.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {top + ph / 2:.1f})">metric value</text>')

    legend_y = top + 6
    for model in report.models():
        dash = "" if model == "full" else ' stroke-dasharray="5,3"'
        for m in METRICS:
            pts = []
            for r in ratios:
                vals = [s[f"{m}_mean"] for s in report.summary
                        if s["ratio"] == r and s["model"] == model and s[f"{m}_mean"] is not None]
                if vals:
                    pts.append((px(r), py(sum(vals) / len(vals))))
            if not pts:
                continue
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            parts.append(f'<polyline data-metric="{m}" data-model="{model}" fill="none" '
                         f'stroke="{_COLORS[m]}" stroke-width="1.5"{dash} points="{coords}"/>')
            lx = left + pw + 10
            parts.append(f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 18}" y2="{legend_y}" '
                         f'stroke="{_COLORS[m]}"{dash}/>')
            parts.append(f'<text x="{lx + 22}" y="{legend_y + 4}">{model} {m.upper()}</text>')
            legend_y += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: MetricsReport, out, formats=FORMATS, stem: str = "report") -> list[Path]:
    """Write the requested formats under ``out``; returns the paths written.

    Runtime goes to ``<stem>.runtime.json`` so the main JSON stays
    byte-identical across reruns.
    """
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown report format(s): {sorted(bad)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    writers = {"json": report_json, "csv": report_csv, "svg": report_svg}
    for fmt in FORMATS:
        if fmt in formats:
            path = out / f"{stem}.{fmt}"
            path.write_text(writers[fmt](report), encoding="utf-8")
            written.append(path)
    if report.runtime is not None:
        path = out / f"{stem}.runtime.json"
        io.write_json(path, {"runtime_seconds": report.runtime})
        written.append(path)
    return written

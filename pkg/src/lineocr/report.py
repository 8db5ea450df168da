"""SVG line charts and markdown summaries of evaluation reports."""
from __future__ import annotations

from xml.sax.saxutils import escape

COLORS = {"none": "#1f77b4", "salt": "#d62728", "bold": "#2ca02c", "rotate": "#9467bd"}
LABELS = {"none": "Solid", "salt": "Salted", "bold": "Bolded", "rotate": "Rotated"}


def crr_chart(report, title="CRR vs number of words", width=480, height=300) -> str:
    """Line chart of bucket CRR against word count, one series per augmentation mode."""
    left, right, top, bottom = 50, 110, 30, 40
    pw, ph = width - left - right, height - top - bottom
    counts = sorted({b.words for b in report.buckets})
    lo, hi = (counts[0], counts[-1]) if counts else (0, 1)
    span = max(hi - lo, 1)

    def x(k):
        return left + (k - lo) / span * pw if len(counts) > 1 else left + pw / 2

    def y(v):
        return top + (1 - v / 100.0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for v in range(0, 101, 20):
        out.append(f'<line x1="{left}" y1="{y(v):.1f}" x2="{left + pw}" y2="{y(v):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y(v) + 4:.1f}" text-anchor="end">{v}</text>')
    for k in counts:
        out.append(f'<text x="{x(k):.1f}" y="{top + ph + 16}" text-anchor="middle">{k}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 6}" text-anchor="middle">words per line</text>')
    modes = [m for m in LABELS if any(b.augment == m for b in report.buckets)]
    for i, mode in enumerate(modes):
        pts = sorted((b.words, b.crr) for b in report.buckets if b.augment == mode)
        color = COLORS[mode]
        path = " ".join(f"{x(k):.1f},{y(v):.1f}" for k, v in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for k, v in pts:
            out.append(f'<circle cx="{x(k):.1f}" cy="{y(v):.1f}" r="3" fill="{color}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly}">{LABELS[mode]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def markdown_table(report, name="") -> str:
    modes = [m for m in LABELS if any(b.augment == m for b in report.buckets)]
    head = "| words | " + " | ".join(f"{LABELS[m]} CRR | {LABELS[m]} WRR" for m in modes) + " |"
    rule = "|---" * (1 + 2 * len(modes)) + "|"
    rows = [f"### {name}" if name else "", "",
            f"overall CRR {report.crr:.2f}, WRR {report.wrr:.2f} ({report.decoder} decoding)", "",
            head, rule]
    for k in sorted({b.words for b in report.buckets}):
        cells = []
        for m in modes:
            b = report.bucket(k, m)
            cells += [f"{b.crr:.2f}", f"{b.wrr:.2f}"] if b else ["-", "-"]
        rows.append(f"| {k} | " + " | ".join(cells) + " |")
    return "\n".join(rows).lstrip("\n") + "\n"

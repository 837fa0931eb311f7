"""Minimal deterministic SVG writer used by diagrams and reports.

Only the handful of primitives the package needs: rectangles, polylines,
text, and dashed strokes. Output is plain UTF-8 with fixed float formatting
so identical inputs always produce identical bytes.
"""

from __future__ import annotations


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


class SvgCanvas:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self._parts: list[str] = []

    def rect(self, x, y, w, h, fill="black", opacity=None, stroke=None):
        attrs = f'x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="{fill}"'
        if opacity is not None:
            attrs += f' fill-opacity="{_fmt(opacity)}"'
        if stroke is not None:
            attrs += f' stroke="{stroke}"'
        self._parts.append(f"<rect {attrs}/>")

    def line(self, x1, y1, x2, y2, stroke="black", width=1.0, dashed=False):
        attrs = (f'x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                 f'stroke="{stroke}" stroke-width="{_fmt(width)}"')
        if dashed:
            attrs += ' stroke-dasharray="6,4"'
        self._parts.append(f"<line {attrs}/>")

    def polyline(self, points, stroke="black", width=1.5, dashed=False):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        attrs = (f'points="{pts}" fill="none" stroke="{stroke}" '
                 f'stroke-width="{_fmt(width)}"')
        if dashed:
            attrs += ' stroke-dasharray="6,4"'
        self._parts.append(f"<polyline {attrs}/>")

    def text(self, x, y, s, size=12, anchor="start", color="black"):
        self._parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{_fmt(size)}" '
            f'font-family="sans-serif" text-anchor="{anchor}" fill="{color}">{_escape(s)}</text>')

    def to_string(self) -> str:
        body = "\n".join(self._parts)
        return (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(self.width)}" '
            f'height="{_fmt(self.height)}" viewBox="0 0 {_fmt(self.width)} {_fmt(self.height)}">\n'
            f'<rect x="0" y="0" width="{_fmt(self.width)}" height="{_fmt(self.height)}" fill="white"/>\n'
            f"{body}\n</svg>\n")


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class LineChart:
    """Simple x/y line chart with axes, ticks, and a legend."""

    def __init__(self, width=640, height=420, margin=56, title="",
                 x_label="", y_label=""):
        self.width = width
        self.height = height
        self.margin = margin
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.series: list[dict] = []

    def add_series(self, xs, ys, label="", color="black", dashed=False):
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)]
        self.series.append({"points": pts, "label": label,
                            "color": color, "dashed": dashed})

    def _bounds(self):
        xs = [p[0] for s in self.series for p in s["points"]]
        ys = [p[1] for s in self.series for p in s["points"]]
        if not xs:
            return 0.0, 1.0, 0.0, 1.0
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        if x1 - x0 < 1e-12:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 - y0 < 1e-12:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def to_string(self) -> str:
        c = SvgCanvas(self.width, self.height)
        m = self.margin
        pw, ph = self.width - 2 * m, self.height - 2 * m
        x0, x1, y0, y1 = self._bounds()

        def sx(x):
            return m + (x - x0) / (x1 - x0) * pw

        def sy(y):
            return m + ph - (y - y0) / (y1 - y0) * ph

        c.line(m, m + ph, m + pw, m + ph)
        c.line(m, m, m, m + ph)
        for i in range(5):
            xv = x0 + i * (x1 - x0) / 4
            yv = y0 + i * (y1 - y0) / 4
            c.line(sx(xv), m + ph, sx(xv), m + ph + 4)
            c.text(sx(xv), m + ph + 18, f"{xv:.2f}", size=10, anchor="middle")
            c.line(m - 4, sy(yv), m, sy(yv))
            c.text(m - 8, sy(yv) + 3, f"{yv:.2f}", size=10, anchor="end")
        if self.title:
            c.text(self.width / 2, m / 2, self.title, size=14, anchor="middle")
        if self.x_label:
            c.text(m + pw / 2, self.height - 10, self.x_label, size=12, anchor="middle")
        if self.y_label:
            c.text(14, m - 10, self.y_label, size=12)
        for s in self.series:
            if len(s["points"]) >= 2:
                c.polyline([(sx(x), sy(y)) for x, y in s["points"]],
                           stroke=s["color"], dashed=s["dashed"])
            elif len(s["points"]) == 1:
                x, y = s["points"][0]
                c.rect(sx(x) - 2, sy(y) - 2, 4, 4, fill=s["color"])
        ly = m + 14
        for s in self.series:
            if not s["label"]:
                continue
            c.line(m + pw - 130, ly - 4, m + pw - 104, ly - 4,
                   stroke=s["color"], width=2, dashed=s["dashed"])
            c.text(m + pw - 98, ly, s["label"], size=10)
            ly += 16
        return c.to_string()

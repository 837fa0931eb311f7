"""Hildebrand-style gait diagrams: black bars for stance, blank for swing.

The stride origin is the right-fore touchdown; one row per leg in the order
LH, LF, RF, RH over 0-100% of the stride. Flight intervals (no leg in
contact) are shaded in the SVG form and marked in the text form.
"""

from __future__ import annotations

from dataclasses import dataclass

from .svg import SvgCanvas
from .taxonomy import LEGS, FootfallSequence, phase_schedule

_ROW_ORDER = LEGS  # LH, LF, RF, RH


@dataclass(frozen=True)
class GaitDiagram:
    """Text and SVG renderings of one footfall sequence."""

    text: str
    svg: str


def _stance_cells(seq: FootfallSequence, leg: str, cells: int) -> list[bool]:
    return [seq.in_stance(leg, ((i + 0.5) / cells + seq.rf_td) % 1.0)
            for i in range(cells)]


def render_diagram(seq: FootfallSequence, cells: int = 50) -> GaitDiagram:
    """Render the gait diagram of a sequence in text and SVG forms."""
    rows = {leg: _stance_cells(seq, leg, cells) for leg in _ROW_ORDER}
    flight = [not any(rows[leg][i] for leg in _ROW_ORDER) for i in range(cells)]

    lines = ["stride %  0" + " " * (cells - 8) + "100"]
    for leg in _ROW_ORDER:
        bar = "".join("█" if on else "·" for on in rows[leg])
        lines.append(f"{leg:>3} |{bar}|")
    lines.append("    |" + "".join("~" if f else " " for f in flight) + "| flight(~)")
    text = "\n".join(lines) + "\n"

    cell_w, row_h, left, top = 9.0, 26.0, 60.0, 30.0
    c = SvgCanvas(left + cells * cell_w + 20, top + 5 * row_h + 30)
    for i, f in enumerate(flight):
        if f:
            c.rect(left + i * cell_w, top, cell_w, 4 * row_h,
                   fill="grey", opacity=0.25)
    for r, leg in enumerate(_ROW_ORDER):
        y = top + r * row_h
        c.text(left - 8, y + row_h * 0.7, leg, anchor="end")
        c.line(left, y + row_h, left + cells * cell_w, y + row_h,
               stroke="#cccccc", width=0.5)
        i = 0
        while i < cells:
            if rows[leg][i]:
                j = i
                while j < cells and rows[leg][j]:
                    j += 1
                c.rect(left + i * cell_w, y + 4, (j - i) * cell_w, row_h - 8)
                i = j
            else:
                i += 1
    c.text(left, top + 4 * row_h + 20, "0%", size=10)
    c.text(left + cells * cell_w, top + 4 * row_h + 20, "100%",
           size=10, anchor="end")
    c.text(left, top - 10, "gait diagram (stride origin: RF touchdown)", size=11)
    return GaitDiagram(text=text, svg=c.to_string())


def diagram_flight_cells(seq: FootfallSequence, cells: int = 50) -> int:
    """Count of shaded flight cells; used for schedule cross-checks."""
    rows = {leg: _stance_cells(seq, leg, cells) for leg in _ROW_ORDER}
    return sum(1 for i in range(cells)
               if not any(rows[leg][i] for leg in _ROW_ORDER))


def schedule_summary(seq: FootfallSequence) -> str:
    """One-line-per-domain text summary of the phase schedule."""
    sched = phase_schedule(seq)
    lines = []
    t = 0.0
    for (contact, frac), event in zip(sched.domains, sched.events):
        legs = ",".join(sorted(contact)) if contact else "flight"
        lines.append(f"[{t:5.3f} .. {t + frac:5.3f}]  after {event[0]}-{event[1]:<2}  "
                     f"contact: {legs}")
        t += frac
    return "\n".join(lines) + "\n"

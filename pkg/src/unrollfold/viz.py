"""Arc-diagram SVG rendering of a structure."""

from __future__ import annotations

from xml.sax.saxutils import escape


def crossing_pairs(pairs) -> set:
    """Pairs that cross at least one other pair."""
    ps = sorted((min(p), max(p)) for p in pairs)
    out = set()
    for a, (i, j) in enumerate(ps):
        for k, l in ps[a + 1:]:
            if k >= j:
                break
            if j < l:
                out.update({(i, j), (k, l)})
    return out


def arc_diagram_svg(bases: str, pairs, title: str = "", step: float = 12.0) -> str:
    """Bases on a baseline, one semicircular arc per pair.

    Arcs of pairs that take part in a crossing get class ``pk`` (drawn in a
    separate colour); nested arcs get class ``nested``.
    """
    L = len(bases)
    knot = crossing_pairs(pairs)
    span = max((j - i for i, j in pairs), default=1)
    height = span * step / 2 + 40
    width = L * step + 20
    base_y = height - 14
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        "<style>.nested{stroke:#3465a4;fill:none;stroke-width:1.2}"
        ".pk{stroke:#8e44ad;fill:none;stroke-width:1.6}"
        "text{font-family:monospace;font-size:10px;text-anchor:middle}</style>",
    ]
    if title:
        out.append(f'<title>{escape(title)}</title>')
    for i, j in sorted((min(p), max(p)) for p in pairs):
        x1, x2 = 10 + i * step + step / 2, 10 + j * step + step / 2
        r = (x2 - x1) / 2
        cls = "pk" if (i, j) in knot else "nested"
        out.append(f'<path class="{cls}" d="M {x1:.1f} {base_y - 10:.1f} '
                   f'A {r:.1f} {r:.1f} 0 0 1 {x2:.1f} {base_y - 10:.1f}"/>')
    for i, b in enumerate(bases):
        out.append(f'<text x="{10 + i * step + step / 2:.1f}" y="{base_y:.1f}">{escape(b)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

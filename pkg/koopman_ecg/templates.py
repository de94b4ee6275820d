# SVG Templates

svg_document = """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
<text class="title" x="{title_x}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>
{body}
</svg>
"""

unit_circle = """<circle class="unit-circle" cx="{cx:.3f}" cy="{cy:.3f}" r="{r:.3f}" fill="none" stroke="gray" stroke-dasharray="6 4"/>"""

axis_line = """<line class="axis" x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" stroke="black" stroke-width="0.5"/>"""

axis_label = """<text class="axis-label" x="{x:.3f}" y="{y:.3f}" text-anchor="middle" font-family="sans-serif" font-size="11">{text}</text>"""

# Diamond for an eigenvalue inside the frame; a triangle pointing outward when clamped.
eigen_marker = """<path class="{css}" data-re="{re:.17g}" data-im="{im:.17g}" d="M {x:.3f} {top:.3f} L {right:.3f} {y:.3f} L {x:.3f} {bottom:.3f} L {left:.3f} {y:.3f} Z" fill="{fill}"/>"""

overflow_marker = """<path class="{css}" data-re="{re:.17g}" data-im="{im:.17g}" d="M {tip_x:.3f} {tip_y:.3f} L {b1_x:.3f} {b1_y:.3f} L {b2_x:.3f} {b2_y:.3f} Z" fill="{fill}"/>"""

heat_cell = """<rect class="cell" x="{x:.3f}" y="{y:.3f}" width="{w:.3f}" height="{h:.3f}" fill="rgb({v},{v},{v})"/>"""

trace = """<polyline class="{css}" fill="none" stroke="{stroke}" stroke-width="1.2" points="{points}"/>"""

time_axis = """<g class="time-axis" data-tmin="{tmin:.17g}" data-tmax="{tmax:.17g}">
{ticks}
</g>"""

time_tick = """<text class="tick" x="{x:.3f}" y="{y:.3f}" text-anchor="middle" font-family="sans-serif" font-size="10">{label}</text>"""

legend_entry = """<line class="legend-swatch" x1="{x:.3f}" y1="{y:.3f}" x2="{x2:.3f}" y2="{y:.3f}" stroke="{stroke}" stroke-width="2"/>
<text class="legend" x="{tx:.3f}" y="{ty:.3f}" font-family="sans-serif" font-size="11">{label}</text>"""

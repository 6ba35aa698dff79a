"""Minimal SVG emission for trajectory and accuracy plots.

Hand-built strings; no plotting dependency.  World coordinates map to a
square viewport with the y axis flipped so +y points up.
"""

from __future__ import annotations

import numpy as np

from .geometry import Configuration, ObstacleSet, RobotShape, \
    extreme_point, transform_points
from .sim import TrajectoryLog


class _Canvas:
    def __init__(self, bounds, size: int = 700, pad: int = 20):
        self.xmin, self.xmax, self.ymin, self.ymax = bounds
        span = max(self.xmax - self.xmin, self.ymax - self.ymin)
        self.scale = (size - 2 * pad) / span
        self.pad = pad
        self.size = size
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size}" viewBox="0 0 {size} {size}">',
            f'<rect width="{size}" height="{size}" fill="white"/>',
        ]

    def pt(self, x: float, y: float) -> tuple[float, float]:
        px = self.pad + (x - self.xmin) * self.scale
        py = self.size - self.pad - (y - self.ymin) * self.scale
        return px, py

    def poly(self, points, fill: str, stroke: str, width: float = 1.0,
             opacity: float = 1.0):
        coords = " ".join(f"{px:.2f},{py:.2f}"
                          for px, py in (self.pt(x, y) for x, y in points))
        self.parts.append(
            f'<polygon points="{coords}" fill="{fill}" stroke="{stroke}" '
            f'stroke-width="{width}" fill-opacity="{opacity}"/>')

    def polyline(self, points, stroke: str, width: float = 1.5):
        coords = " ".join(f"{px:.2f},{py:.2f}"
                          for px, py in (self.pt(x, y) for x, y in points))
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}"/>')

    def circle(self, x: float, y: float, r_world: float, fill: str,
               stroke: str, width: float = 1.0, opacity: float = 1.0):
        px, py = self.pt(x, y)
        self.parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" '
            f'r="{r_world * self.scale:.2f}" fill="{fill}" stroke="{stroke}" '
            f'stroke-width="{width}" fill-opacity="{opacity}"/>')

    def rect(self, x: float, y: float, w_world: float, h_world: float,
             fill: str):
        px, py = self.pt(x, y + h_world)
        self.parts.append(
            f'<rect x="{px:.2f}" y="{py:.2f}" width="{w_world * self.scale:.2f}" '
            f'height="{h_world * self.scale:.2f}" fill="{fill}"/>')

    def text(self, x: float, y: float, s: str, size: int = 14):
        px, py = self.pt(x, y)
        self.parts.append(f'<text x="{px:.2f}" y="{py:.2f}" '
                          f'font-size="{size}" font-family="sans-serif">{s}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def svg_trajectory(obs: ObstacleSet, shape: RobotShape, log: TrajectoryLog,
                   waypoints=None, every: int = 25,
                   draw_balls: bool = True) -> str:
    """Obstacles, body outlines every ``every`` steps, the reference-point
    path, waypoints, and (optionally) the safety ball at each drawn pose."""
    cv = _Canvas(obs.world_bounds)
    for ob in obs.obstacles:
        cv.poly(ob.points[::4], fill="#9aa0a6", stroke="#5f6368", width=1.0)
    if waypoints:
        for w in waypoints:
            cv.circle(w.x, w.y, w.radius, fill="#fbbc04", stroke="#f29900",
                      opacity=0.5)
    recs = log.records
    for r in recs[::max(1, every)]:
        cfg = r.state.cfg
        body = transform_points(shape.boundary.points, cfg)
        cv.poly(body[::2], fill="#4285f4", stroke="#174ea6", width=0.8,
                opacity=0.35)
        if draw_balls and r.d_pred > 0.0:
            cx, cy = extreme_point(shape, cfg)
            cv.circle(cx, cy, r.d_pred, fill="none", stroke="#34a853",
                      width=0.8)
    if recs:
        cv.polyline([(r.state.x, r.state.y) for r in recs], stroke="#ea4335",
                    width=2.0)
        last = recs[-1].state
        body = transform_points(shape.boundary.points, last.cfg)
        cv.poly(body[::2], fill="#4285f4", stroke="#174ea6", width=1.2,
                opacity=0.8)
    cv.text(cv.xmin + 0.05, cv.ymin + 0.12, f"outcome: {log.outcome}")
    return cv.render()


def _ramp(t: float) -> str:
    """Linear white -> dark red."""
    t = min(max(t, 0.0), 1.0)
    r = 255 - int(75 * t)
    g = int(255 * (1.0 - t))
    b = int(255 * (1.0 - t) * 0.9)
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_heatmap(locations: np.ndarray, values: np.ndarray, bounds,
                cell: float, label: str = "per-location MSE") -> str:
    """Square cells at sample locations coloured on a linear ramp.

    The ramp spans [0, vmax] with vmax the largest finite value; the legend
    prints the min/median/max so the scale stays readable.
    """
    cv = _Canvas(bounds)
    vals = np.asarray(values, dtype=float)
    finite = vals[np.isfinite(vals)]
    vmax = float(finite.max()) if finite.size else 1.0
    if vmax <= 0.0:
        vmax = 1.0
    for (x, y), v in zip(np.asarray(locations), vals):
        t = v / vmax if np.isfinite(v) else 1.0
        cv.rect(x - cell / 2.0, y - cell / 2.0, cell, cell, fill=_ramp(t))
    med = float(np.median(finite)) if finite.size else float("nan")
    cv.text(cv.xmin + 0.05, cv.ymax - 0.05,
            f"{label}: min {finite.min():.2e} med {med:.2e} "
            f"max {vmax:.2e}" if finite.size else f"{label}: no data")
    return cv.render()

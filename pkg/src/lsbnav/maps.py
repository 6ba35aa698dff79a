"""Map and shape construction plus plain-text IO.

Map file grammar (``#`` starts a comment, blank lines ignored)::

    bounds <xmin> <xmax> <ymin> <ymax>
    obstacle
    <x> <y>
    ...
    end

Each obstacle block lists polyline vertices of a simple closed loop
(implicitly closed).  Vertices are written with 6 decimal places; loaders
resample every loop at uniform arc length with the requested max_gap.

Shape file grammar::

    reference 0 0
    boundary
    <x> <y>
    ...
    end

The body reference point is always the body-frame origin; the ``reference``
line is declarative and only ``0 0`` is accepted.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import (BoundarySamples, ObstacleSet, RobotShape,
                       DEFAULT_MAX_GAP, is_simple_loop, resample_closed)


class MapFormatError(Exception):
    """Raised when a map or shape file does not follow the grammar."""


# ---------------------------------------------------------------------------
# robot shape factories.  Vertex order starts at the corner that must win the
# lowest-index tie rule for the extreme point, then walks counter-clockwise.

def rectangle_shape(width: float = 0.35, height: float = 0.2,
                    max_gap: float = DEFAULT_MAX_GAP) -> RobotShape:
    """Axis-aligned rectangle with the reference at its center.

    The vertex walk starts at (+w/2, +h/2) so that corner wins the extreme
    point tie among the four equidistant corners.
    """
    hw, hh = width / 2.0, height / 2.0
    verts = np.array([[hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]])
    return RobotShape(BoundarySamples(resample_closed(verts, max_gap),
                                      max_gap, corners=verts))


def triangle_shape(leg_x: float = 0.4, leg_y: float = 0.3,
                   max_gap: float = DEFAULT_MAX_GAP) -> RobotShape:
    """Right triangle with legs along the body axes, reference at the
    right-angle vertex."""
    verts = np.array([[leg_x, 0.0], [0.0, leg_y], [0.0, 0.0]])
    return RobotShape(BoundarySamples(resample_closed(verts, max_gap),
                                      max_gap, corners=verts))


def cross_shape(size: float = 0.35, arm_frac: float = 1.0 / 3.0,
                max_gap: float = DEFAULT_MAX_GAP) -> RobotShape:
    """Plus-sign outline of overall width ``size``; reference at the arm
    intersection.  ``arm_frac`` is the arm width as a fraction of size."""
    h = size / 2.0
    a = size * arm_frac / 2.0
    verts = np.array([
        [h, a], [a, a], [a, h], [-a, h], [-a, a], [-h, a],
        [-h, -a], [-a, -a], [-a, -h], [a, -h], [a, -a], [h, -a],
    ])
    return RobotShape(BoundarySamples(resample_closed(verts, max_gap),
                                      max_gap, corners=verts))


def point_shape(radius: float = 1e-9) -> RobotShape:
    """Near-degenerate body used to probe the clearance field itself.

    A closed loop needs at least 3 samples, so the point is realised as a
    tiny equilateral triangle of circumscribed radius ``radius``; the error
    it introduces is orders of magnitude below the sampling gap.
    """
    ang = np.array([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0])
    verts = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return RobotShape(BoundarySamples(verts, max_gap=4.0 * radius))


def circle_vertices(cx: float, cy: float, r: float, n: int = 64) -> np.ndarray:
    """Regular n-gon approximation of a circle, for obstacle outlines."""
    ang = 2.0 * math.pi * np.arange(n) / n
    return np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1)


def _rect_vertices(x0: float, x1: float, y0: float, y1: float) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


# ---------------------------------------------------------------------------
# builtin environments (5 m x 5 m)

def toy_map(max_gap: float = DEFAULT_MAX_GAP) -> ObstacleSet:
    """Small benchmark map: one box, one circle, one L-shaped block."""
    box = _rect_vertices(0.8, 1.8, 0.8, 1.8)
    circle = circle_vertices(3.6, 3.6, 0.7, n=96)
    ell = np.array([[2.2, 3.2], [2.2, 4.6], [1.2, 4.6],
                    [1.2, 4.2], [1.8, 4.2], [1.8, 3.2]])
    obstacles = [BoundarySamples(resample_closed(v, max_gap), max_gap,
                                 corners=v)
                 for v in (box, circle, ell)]
    return ObstacleSet(obstacles, [0.0, 5.0, 0.0, 5.0])


def maze_map(max_gap: float = DEFAULT_MAX_GAP) -> ObstacleSet:
    """Serpentine maze: two staggered walls plus a block in the exit chamber.

    The free space forms an S-shaped route from the top-left corner down the
    left chamber, right along the bottom gap, up the middle chamber, right
    across the top gap and down past the block to the bottom-right corner.
    Corridor widths stay near one meter.
    """
    wall_a = _rect_vertices(1.4, 1.8, 1.2, 5.0)   # hangs from the top edge
    wall_b = _rect_vertices(2.9, 3.3, 0.0, 3.8)   # rises from the bottom edge
    block = _rect_vertices(3.75, 4.15, 2.25, 2.65)
    obstacles = [BoundarySamples(resample_closed(v, max_gap), max_gap,
                                 corners=v)
                 for v in (wall_a, wall_b, block)]
    return ObstacleSet(obstacles, [0.0, 5.0, 0.0, 5.0])


_SHAPE_FACTORIES = {
    "rectangle": rectangle_shape,
    "triangle": triangle_shape,
    "cross": cross_shape,
    "point": lambda max_gap=DEFAULT_MAX_GAP: point_shape(),
}

_MAP_BUILDERS = {
    "toy": toy_map,
    "maze": maze_map,
}


def builtin_shape(name: str, max_gap: float = DEFAULT_MAX_GAP) -> RobotShape:
    try:
        return _SHAPE_FACTORIES[name](max_gap=max_gap)
    except KeyError:
        raise MapFormatError(
            f"unknown shape '{name}' (have {sorted(_SHAPE_FACTORIES)})") from None


def builtin_map(name: str, max_gap: float = DEFAULT_MAX_GAP) -> ObstacleSet:
    try:
        return _MAP_BUILDERS[name](max_gap=max_gap)
    except KeyError:
        raise MapFormatError(
            f"unknown map '{name}' (have {sorted(_MAP_BUILDERS)})") from None


# ---------------------------------------------------------------------------
# file IO

def _tokenize(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_vertex_block(tokens, what: str) -> np.ndarray:
    verts = []
    for lineno, tok in tokens:
        if tok == ["end"]:
            if len(verts) < 3:
                raise MapFormatError(
                    f"line {lineno}: {what} needs at least 3 vertices")
            return np.array(verts)
        if len(tok) != 2:
            raise MapFormatError(f"line {lineno}: expected 'x y' or 'end'")
        try:
            verts.append([float(tok[0]), float(tok[1])])
        except ValueError:
            raise MapFormatError(f"line {lineno}: bad vertex {tok}") from None
    raise MapFormatError(f"unterminated {what} block (missing 'end')")


def loads_map(text: str, max_gap: float = DEFAULT_MAX_GAP) -> ObstacleSet:
    tokens = _tokenize(text)
    bounds = None
    loops: list[np.ndarray] = []
    for lineno, tok in tokens:
        if tok[0] == "bounds":
            if len(tok) != 5:
                raise MapFormatError(f"line {lineno}: bounds needs 4 numbers")
            try:
                bounds = [float(v) for v in tok[1:]]
            except ValueError:
                raise MapFormatError(f"line {lineno}: bad bounds") from None
        elif tok == ["obstacle"]:
            loops.append(_parse_vertex_block(tokens, "obstacle"))
        else:
            raise MapFormatError(f"line {lineno}: unexpected '{' '.join(tok)}'")
    if bounds is None:
        raise MapFormatError("map file missing 'bounds' line")
    obstacles = []
    for k, verts in enumerate(loops):
        if not is_simple_loop(verts):
            raise MapFormatError(f"obstacle {k} outline self-intersects")
        obstacles.append(
            BoundarySamples(resample_closed(verts, max_gap), max_gap,
                            corners=verts))
    return ObstacleSet(obstacles, bounds)


def dumps_map(obs: ObstacleSet, vertices: list[np.ndarray] | None = None) -> str:
    """Serialise a map.  Pass the source ``vertices`` polylines to keep files
    small; otherwise the full sample loops are written."""
    wb = obs.world_bounds
    lines = [f"bounds {wb[0]:.6f} {wb[1]:.6f} {wb[2]:.6f} {wb[3]:.6f}"]
    loops = vertices if vertices is not None \
        else [ob.points for ob in obs.obstacles]
    for loop in loops:
        lines.append("obstacle")
        lines.extend(f"{x:.6f} {y:.6f}" for x, y in np.asarray(loop))
        lines.append("end")
    return "\n".join(lines) + "\n"


def load_map(path, max_gap: float = DEFAULT_MAX_GAP) -> ObstacleSet:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_map(fh.read(), max_gap=max_gap)


def save_map(path, obs: ObstacleSet,
             vertices: list[np.ndarray] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_map(obs, vertices))


def loads_shape(text: str, max_gap: float = DEFAULT_MAX_GAP) -> RobotShape:
    tokens = _tokenize(text)
    verts = None
    for lineno, tok in tokens:
        if tok[0] == "reference":
            if tok[1:] != ["0", "0"]:
                raise MapFormatError(
                    f"line {lineno}: only 'reference 0 0' is supported")
        elif tok == ["boundary"]:
            verts = _parse_vertex_block(tokens, "boundary")
        else:
            raise MapFormatError(f"line {lineno}: unexpected '{' '.join(tok)}'")
    if verts is None:
        raise MapFormatError("shape file missing 'boundary' block")
    if not is_simple_loop(verts):
        raise MapFormatError("shape outline self-intersects")
    return RobotShape(BoundarySamples(resample_closed(verts, max_gap),
                                      max_gap, corners=verts))


def dumps_shape(vertices: np.ndarray) -> str:
    lines = ["reference 0 0", "boundary"]
    lines.extend(f"{x:.6f} {y:.6f}" for x, y in np.asarray(vertices))
    lines.append("end")
    return "\n".join(lines) + "\n"


def load_shape(path, max_gap: float = DEFAULT_MAX_GAP) -> RobotShape:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_shape(fh.read(), max_gap=max_gap)


def save_shape(path, vertices: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_shape(vertices))


def resolve_shape(spec: str, max_gap: float = DEFAULT_MAX_GAP) -> RobotShape:
    """Accept either a builtin shape name or a shape file path."""
    if spec in _SHAPE_FACTORIES:
        return builtin_shape(spec, max_gap=max_gap)
    return load_shape(spec, max_gap=max_gap)


def resolve_map(spec: str, max_gap: float = DEFAULT_MAX_GAP) -> ObstacleSet:
    """Accept either a builtin map name or a map file path."""
    if spec in _MAP_BUILDERS:
        return builtin_map(spec, max_gap=max_gap)
    return load_map(spec, max_gap=max_gap)

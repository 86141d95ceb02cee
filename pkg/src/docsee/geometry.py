"""Four-point polygons: canonical ordering, area, convex clipping, IoU.

Points live in image coordinates (x right, y down). The canonical order is
top-left first, then clockwise as seen on screen, which with y pointing down
corresponds to ascending atan2 angle about the centroid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_AREA_EPS = 1e-9
_CLIP_EPS = 1e-12

Point = tuple[float, float]


class DegeneratePolygonError(ValueError):
    """Raised when four points do not span a usable polygon."""


@dataclass(frozen=True)
class PixelPolygon:
    """Four ordered (x, y) points in pixels, canonical order TL, TR, BR, BL."""

    points: tuple[Point, Point, Point, Point]

    def __post_init__(self) -> None:
        if len(self.points) != 4:
            raise ValueError(f"polygon needs exactly 4 points, got {len(self.points)}")
        for x, y in self.points:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"non-finite polygon point ({x}, {y})")
        object.__setattr__(
            self, "points", tuple((float(x), float(y)) for x, y in self.points)
        )

    def translated(self, dx: float, dy: float) -> "PixelPolygon":
        return PixelPolygon(tuple((x + dx, y + dy) for x, y in self.points))

    def scaled(self, sx: float, sy: float | None = None) -> "PixelPolygon":
        sy = sx if sy is None else sy
        return PixelPolygon(tuple((x * sx, y * sy) for x, y in self.points))

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class QuantPolygon:
    """Eight quantized bins, layout [x1, y1, x2, y2, x3, y3, x4, y4]."""

    bins: tuple[int, int, int, int, int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.bins) != 8:
            raise ValueError(f"quantized polygon needs 8 bins, got {len(self.bins)}")
        for b in self.bins:
            if not (0 <= int(b) <= 999):
                raise ValueError(f"bin {b} outside [0, 999]")
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))

    def corner_bins(self) -> tuple[tuple[int, int], ...]:
        b = self.bins
        return ((b[0], b[1]), (b[2], b[3]), (b[4], b[5]), (b[6], b[7]))


def _shoelace(points) -> float:
    total = 0.0
    n = len(points)
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return 0.5 * total


def canonicalize(points) -> PixelPolygon:
    """Reorder 4 points to canonical TL-first clockwise order.

    The point minimizing x + y becomes top-left; the rest follow by angle
    about the centroid. Collinear or coincident inputs raise
    DegeneratePolygonError.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) != 4:
        raise ValueError(f"expected 4 points, got {len(pts)}")
    cx = sum(p[0] for p in pts) / 4.0
    cy = sum(p[1] for p in pts) / 4.0
    # Ascending atan2 with y-down axes walks the polygon clockwise on screen.
    ordered = sorted(pts, key=lambda p: math.atan2(p[1] - cy, p[0] - cx))
    start = min(range(4), key=lambda i: (ordered[i][0] + ordered[i][1],
                                         ordered[i][1], ordered[i][0]))
    ordered = ordered[start:] + ordered[:start]
    if abs(_shoelace(ordered)) <= _AREA_EPS:
        raise DegeneratePolygonError(f"points {pts} span zero area")
    return PixelPolygon(tuple(ordered))


def polygon_area(poly: PixelPolygon) -> float:
    """Absolute shoelace area in px^2."""
    return abs(_shoelace(poly.points))


def is_convex(poly: PixelPolygon) -> bool:
    """True when every turn along the boundary has one sign (or is straight)."""
    pts = poly.points
    sign = 0
    for i in range(4):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % 4]
        cx, cy = pts[(i + 2) % 4]
        cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(cross) <= _CLIP_EPS:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def _clip_convex(subject: list[Point], clipper: list[Point]) -> list[Point]:
    """Sutherland-Hodgman clip of `subject` against convex `clipper`."""
    keep_positive = _shoelace(clipper) > 0
    out = list(subject)
    m = len(clipper)
    for i in range(m):
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % m]
        if not out:
            return []
        inp = out
        out = []

        def inside(p: Point) -> bool:
            cross = (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)
            return cross >= -_CLIP_EPS if keep_positive else cross <= _CLIP_EPS

        def intersect(p: Point, q: Point) -> Point:
            # Intersection of segment pq with the infinite clip edge ab.
            dx, dy = q[0] - p[0], q[1] - p[1]
            ex, ey = bx - ax, by - ay
            den = dx * ey - dy * ex
            if abs(den) < _CLIP_EPS:
                return q
            t = ((ax - p[0]) * ey - (ay - p[1]) * ex) / den
            return (p[0] + t * dx, p[1] + t * dy)

        prev = inp[-1]
        prev_in = inside(prev)
        for cur in inp:
            cur_in = inside(cur)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
            prev, prev_in = cur, cur_in
    return out


def intersection_area(a: PixelPolygon, b: PixelPolygon) -> float:
    clipped = _clip_convex(list(a.points), list(b.points))
    if len(clipped) < 3:
        return 0.0
    return abs(_shoelace(clipped))


def polygon_iou(a: PixelPolygon, b: PixelPolygon) -> float:
    """Intersection over union of two convex four-point polygons.

    Zero-area inputs score 0.0; non-convex inputs are rejected.
    """
    for poly in (a, b):
        if not is_convex(poly):
            raise ValueError(f"polygon_iou requires convex input, got {poly.points}")
    area_a = polygon_area(a)
    area_b = polygon_area(b)
    if area_a <= _AREA_EPS or area_b <= _AREA_EPS:
        return 0.0
    inter = intersection_area(a, b)
    union = area_a + area_b - inter
    if union <= _AREA_EPS:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)

"""Quadrilateral, horizontal, and oriented box primitives.

All coordinates are pixels in image space: x grows rightward, y grows
downward.  "Clockwise" always means clockwise as drawn on screen, which
corresponds to a positive shoelace sum in this y-down frame.

The canonical vertex order for a quadrilateral is clockwise starting at
the vertex with the smallest y, ties broken by the smallest x.  Every
function in this module is pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

DEGENERATE_AREA_TOL = 1e-9
_CONVEXITY_TOL = 1e-9


class GeometryError(ValueError):
    """Base class for geometry failures."""


class ZeroAreaQuad(GeometryError):
    """Quadrilateral collapses to (near) zero area."""


class NonConvexQuad(GeometryError):
    """Quadrilateral is non-convex beyond tolerance."""


@dataclass(frozen=True, slots=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x!r}, {self.y!r})")


@dataclass(frozen=True, slots=True)
class QuadBox:
    """Four vertices in storage order; canonical form via canonicalize_quad."""

    vertices: tuple[Point2D, Point2D, Point2D, Point2D]

    def __post_init__(self) -> None:
        if len(self.vertices) != 4:
            raise GeometryError(f"quad needs exactly 4 vertices, got {len(self.vertices)}")

    @classmethod
    def from_flat(cls, coords) -> "QuadBox":
        """Build from [x1, y1, x2, y2, x3, y3, x4, y4]."""
        vals = list(coords)
        if len(vals) != 8:
            raise GeometryError(f"expected 8 coordinates, got {len(vals)}")
        pts = tuple(Point2D(float(vals[i]), float(vals[i + 1])) for i in range(0, 8, 2))
        return cls(pts)

    def flat(self) -> list[float]:
        out: list[float] = []
        for p in self.vertices:
            out.extend((p.x, p.y))
        return out


@dataclass(frozen=True, slots=True)
class HBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise GeometryError("non-finite hbox coordinates")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise GeometryError(f"hbox corners out of order: {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return self.width * self.height

    def to_quad(self) -> QuadBox:
        return QuadBox((
            Point2D(self.x1, self.y1),
            Point2D(self.x2, self.y1),
            Point2D(self.x2, self.y2),
            Point2D(self.x1, self.y2),
        ))


@dataclass(frozen=True, slots=True)
class OBox:
    """Rotated rectangle: center, size, rotation.  angle in [-pi/2, pi/2)."""

    cx: float
    cy: float
    w: float
    h: float
    angle: float

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"obox sides must be positive, got w={self.w}, h={self.h}")
        if not (-math.pi / 2 <= self.angle < math.pi / 2):
            raise GeometryError(f"obox angle {self.angle} outside [-pi/2, pi/2)")


@dataclass(frozen=True, slots=True)
class LabeledDetection:
    category: str
    box: QuadBox


class CategorySet:
    """Ordered set of distinct category names with a stable alphabetical view."""

    def __init__(self, names) -> None:
        names = list(names)
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate category names: {dupes}")
        self.names: tuple[str, ...] = tuple(names)

    def alphabetical(self) -> tuple[str, ...]:
        return tuple(sorted(self.names))

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def __repr__(self) -> str:
        return f"CategorySet({list(self.names)!r})"


def signed_area(points) -> float:
    """Shoelace sum / 2; positive for clockwise order in y-down image space."""
    total = 0.0
    n = len(points)
    for i in range(n):
        p, q = points[i], points[(i + 1) % n]
        total += p.x * q.y - q.x * p.y
    return total / 2.0


def polygon_area(points) -> float:
    return abs(signed_area(points))


def quad_area(q: QuadBox) -> float:
    """|shoelace|/2 of the stored vertex cycle."""
    return polygon_area(q.vertices)


def canonicalize_quad(q: QuadBox, tol: float = DEGENERATE_AREA_TOL) -> QuadBox:
    """Reorder vertices to the canonical cycle.

    The vertex adjacency is preserved (only cyclic shifts and reversal are
    applied), the result is clockwise in image space, and vertex 0 has the
    smallest y (ties broken by smallest x).  Idempotent.

    Raises ZeroAreaQuad when the shoelace area is below ``tol``.
    """
    pts = list(q.vertices)
    area2 = signed_area(pts)
    if abs(area2) < tol:
        raise ZeroAreaQuad(f"quad area {abs(area2):.3e} below tolerance {tol:.3e}")
    if area2 < 0:
        pts.reverse()
    start = min(range(4), key=lambda i: (pts[i].y, pts[i].x))
    pts = pts[start:] + pts[:start]
    return QuadBox(tuple(pts))


def is_convex(q: QuadBox, tol: float = _CONVEXITY_TOL) -> bool:
    """True when every turn of the (clockwise-canonicalized) cycle is right or straight."""
    pts = q.vertices
    orient = 1.0 if signed_area(pts) >= 0 else -1.0
    for i in range(4):
        a, b, c = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
        e1 = (b.x - a.x, b.y - a.y)
        e2 = (c.x - b.x, c.y - b.y)
        cross = e1[0] * e2[1] - e1[1] * e2[0]
        norm = math.hypot(*e1) * math.hypot(*e2)
        if norm > 0 and orient * cross / norm < -tol:
            return False
    return True


def convex_hull(points) -> list[Point2D]:
    """Monotone-chain hull, clockwise in image space; collinear points dropped."""
    pts = sorted(set((p.x, p.y) for p in points))
    if len(pts) <= 2:
        return [Point2D(x, y) for x, y in pts]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    # Counter-clockwise in math space == clockwise on screen with y down.
    hull = lower[:-1] + upper[:-1]
    return [Point2D(x, y) for x, y in hull]


def clip_convex(subject, clip) -> list[Point2D]:
    """Sutherland-Hodgman clip of polygon ``subject`` by convex polygon ``clip``.

    Both polygons must wind clockwise in image space.  Points on a clip edge
    count as inside, so clipping a polygon by itself returns it bit-exactly.
    """
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        a, b = clip[i], clip[(i + 1) % n]
        ex, ey = b.x - a.x, b.y - a.y
        input_pts = output
        output = []
        prev = input_pts[-1]
        prev_side = ex * (prev.y - a.y) - ey * (prev.x - a.x)
        for cur in input_pts:
            cur_side = ex * (cur.y - a.y) - ey * (cur.x - a.x)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_edge_intersection(prev, cur, a, b))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_edge_intersection(prev, cur, a, b))
            prev, prev_side = cur, cur_side
    return output


def _edge_intersection(p: Point2D, q: Point2D, a: Point2D, b: Point2D) -> Point2D:
    # Intersection of segment p-q with the infinite line through a-b.
    dx1, dy1 = q.x - p.x, q.y - p.y
    dx2, dy2 = b.x - a.x, b.y - a.y
    denom = dx1 * dy2 - dy1 * dx2
    if denom == 0:
        return q
    t = ((a.x - p.x) * dy2 - (a.y - p.y) * dx2) / denom
    return Point2D(p.x + t * dx1, p.y + t * dy1)


def _convex_cycle(q: QuadBox) -> tuple[list[Point2D], bool]:
    """Clockwise convex vertex cycle for IoU; hulls non-convex input (flag=True)."""
    canon = canonicalize_quad(q)
    if is_convex(canon):
        return list(canon.vertices), False
    hull = convex_hull(canon.vertices)
    if polygon_area(hull) < DEGENERATE_AREA_TOL:
        raise ZeroAreaQuad("convex hull of quad is degenerate")
    return hull, True


def quad_iou(a: QuadBox, b: QuadBox, strict_convex: bool = False) -> float:
    """Intersection-over-union of two quads via convex polygon clipping.

    Non-convex inputs are replaced by their convex hull; with
    ``strict_convex`` they raise NonConvexQuad instead.  Degenerate quads
    raise ZeroAreaQuad.
    """
    poly_a, hulled_a = _convex_cycle(a)
    poly_b, hulled_b = _convex_cycle(b)
    if strict_convex and (hulled_a or hulled_b):
        raise NonConvexQuad("non-convex quad passed with strict_convex=True")
    area_a = polygon_area(poly_a)
    area_b = polygon_area(poly_b)
    inter = polygon_area(clip_convex(poly_a, poly_b))
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_or_zero(a: QuadBox, b: QuadBox) -> float:
    """quad_iou that treats degenerate boxes as non-overlapping."""
    try:
        return quad_iou(a, b)
    except ZeroAreaQuad:
        return 0.0


def hbox_envelope(q: QuadBox) -> HBox:
    """Minimal axis-aligned box containing all vertices."""
    xs = [p.x for p in q.vertices]
    ys = [p.y for p in q.vertices]
    return HBox(min(xs), min(ys), max(xs), max(ys))


def hbox_iou(a: HBox, b: HBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    if union <= 0:
        return 0.0
    return inter / union


def obox_to_quad(o: OBox) -> QuadBox:
    """Corners of the rotated rectangle, canonicalized."""
    cos_a, sin_a = math.cos(o.angle), math.sin(o.angle)
    hw, hh = o.w / 2.0, o.h / 2.0
    pts = []
    for dx, dy in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        pts.append(Point2D(o.cx + dx * cos_a - dy * sin_a,
                           o.cy + dx * sin_a + dy * cos_a))
    return canonicalize_quad(QuadBox(tuple(pts)))


def min_area_rect(points) -> QuadBox:
    """Minimal-area enclosing rotated rectangle (rotating calipers over the hull)."""
    hull = convex_hull(points)
    if len(hull) < 3:
        raise ZeroAreaQuad("cannot fit a rectangle around a degenerate point set")
    best = None
    n = len(hull)
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        ex, ey = b.x - a.x, b.y - a.y
        norm = math.hypot(ex, ey)
        if norm == 0:
            continue
        ux, uy = ex / norm, ey / norm
        vx, vy = -uy, ux
        proj_u = [(p.x - a.x) * ux + (p.y - a.y) * uy for p in hull]
        proj_v = [(p.x - a.x) * vx + (p.y - a.y) * vy for p in hull]
        u0, u1 = min(proj_u), max(proj_u)
        v0, v1 = min(proj_v), max(proj_v)
        area = (u1 - u0) * (v1 - v0)
        if best is None or area < best[0]:
            best = (area, a, ux, uy, vx, vy, u0, u1, v0, v1)
    if best is None:
        raise ZeroAreaQuad("cannot fit a rectangle around a degenerate point set")
    _, a, ux, uy, vx, vy, u0, u1, v0, v1 = best
    corners = tuple(
        Point2D(a.x + u * ux + v * vx, a.y + u * uy + v * vy)
        for u, v in ((u0, v0), (u1, v0), (u1, v1), (u0, v1))
    )
    return canonicalize_quad(QuadBox(corners))


def scale_quad(q: QuadBox, sx: float, sy: float) -> QuadBox:
    if sx <= 0 or sy <= 0:
        raise GeometryError(f"scale factors must be positive, got ({sx}, {sy})")
    scaled = QuadBox(tuple(Point2D(p.x * sx, p.y * sy) for p in q.vertices))
    if sx == sy:
        return scaled
    return canonicalize_quad(scaled)


def translate_quad(q: QuadBox, dx: float, dy: float) -> QuadBox:
    return QuadBox(tuple(Point2D(p.x + dx, p.y + dy) for p in q.vertices))


def scale_detections(dets, sx: float, sy: float) -> list[LabeledDetection]:
    """Scale every detection componentwise; re-canonicalizes on anisotropic scaling."""
    return [LabeledDetection(d.category, scale_quad(d.box, sx, sy)) for d in dets]

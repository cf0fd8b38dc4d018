"""Shared generators and independent oracles for the test suite.

The oracles here deliberately avoid the library's own code paths: areas come
from grid counting, IoU from horizontal scanlines, orderings from exhaustive
enumeration.
"""

from __future__ import annotations

import random

import numpy as np

from rsvlkit.geometry import Point2D, QuadBox, convex_hull, polygon_area


def random_convex_quad(rng: random.Random, lo=20.0, hi=80.0, rmin=6.0, rmax=14.0,
                       min_area=8.0, center=None) -> QuadBox:
    """Rejection-sample 4 points in a disc until their hull is a real quad."""
    while True:
        if center is None:
            cx, cy = rng.uniform(lo, hi), rng.uniform(lo, hi)
        else:
            cx, cy = center
        r = rng.uniform(rmin, rmax)
        pts = [Point2D(cx + rng.uniform(-r, r), cy + rng.uniform(-r, r)) for _ in range(4)]
        hull = convex_hull(pts)
        if len(hull) == 4 and polygon_area(hull) >= min_area:
            return QuadBox(tuple(hull))


def random_quad_pair(rng: random.Random) -> tuple[QuadBox, QuadBox]:
    """Two convex quads near a common center so IoUs span (0, 1)."""
    cx, cy = rng.uniform(25.0, 75.0), rng.uniform(25.0, 75.0)
    a = random_convex_quad(rng, center=(cx, cy))
    shift = rng.uniform(0.0, 12.0)
    ang = rng.uniform(0.0, 6.283185307179586)
    import math
    b = random_convex_quad(rng, center=(cx + shift * math.cos(ang), cy + shift * math.sin(ang)))
    return a, b


def dihedral_orderings(q: QuadBox) -> list[QuadBox]:
    """All 8 cyclic shifts and reflections of the vertex list."""
    pts = list(q.vertices)
    orders = []
    for base in (pts, list(reversed(pts))):
        for s in range(4):
            orders.append(QuadBox(tuple(base[s:] + base[:s])))
    return orders


def oracle_canonical(q: QuadBox) -> QuadBox:
    """Enumerate all 8 orderings and select by the stated rule.

    Rule: clockwise in y-down image space (positive shoelace sum) and the
    first vertex has minimal y, ties broken by minimal x.
    """
    def shoelace2(pts):
        return sum(pts[i].x * pts[(i + 1) % 4].y - pts[(i + 1) % 4].x * pts[i].y
                   for i in range(4))

    candidates = []
    for cand in dihedral_orderings(q):
        pts = cand.vertices
        if shoelace2(pts) <= 0:
            continue
        key = (pts[0].y, pts[0].x)
        if key == min((p.y, p.x) for p in pts):
            candidates.append(cand)
    assert candidates, "no clockwise min-y-first ordering found"
    # All survivors describe the same cycle; with a unique min-y vertex there
    # is exactly one.
    return candidates[0]


def raster_area(q: QuadBox, step: float = 1e-3) -> float:
    """Grid-count area oracle: cells whose center falls inside, times cell area."""
    xs = np.array([p.x for p in q.vertices])
    ys = np.array([p.y for p in q.vertices])
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    nx = int(np.ceil((x1 - x0) / step))
    ny = int(np.ceil((y1 - y0) / step))
    cx = x0 + (np.arange(nx) + 0.5) * step
    count = 0
    chunk = max(1, int(4e6 // max(nx, 1)))
    for row0 in range(0, ny, chunk):
        cy = y0 + (np.arange(row0, min(row0 + chunk, ny)) + 0.5) * step
        inside = np.ones((cy.size, nx), dtype=bool)
        for i in range(4):
            ax, ay = xs[i], ys[i]
            bx, by = xs[(i + 1) % 4], ys[(i + 1) % 4]
            # clockwise on screen: interior has non-negative cross product
            cross = (bx - ax) * (cy[:, None] - ay) - (by - ay) * (cx[None, :] - ax)
            inside &= cross >= 0
        count += int(inside.sum())
    return count * step * step


def _row_intervals(q: QuadBox, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact [xmin, xmax] coverage of a convex quad on each horizontal row."""
    xmin = np.full(rows.shape, np.inf)
    xmax = np.full(rows.shape, -np.inf)
    pts = q.vertices
    for i in range(4):
        a, b = pts[i], pts[(i + 1) % 4]
        ylo, yhi = min(a.y, b.y), max(a.y, b.y)
        mask = (rows >= ylo) & (rows < yhi)
        if not mask.any():
            continue
        t = (rows[mask] - a.y) / (b.y - a.y)
        x = a.x + t * (b.x - a.x)
        xmin[mask] = np.minimum(xmin[mask], x)
        xmax[mask] = np.maximum(xmax[mask], x)
    return xmin, xmax


def scanline_iou(a: QuadBox, b: QuadBox, step: float = 1e-3) -> float:
    """Scanline rasterization IoU oracle at row step ``step``.

    Intersection area is integrated with exact per-row interval overlap;
    the individual quad areas are exact shoelace values.
    """
    ys = [p.y for p in a.vertices] + [p.y for p in b.vertices]
    y0 = max(min(p.y for p in a.vertices), min(p.y for p in b.vertices))
    y1 = min(max(p.y for p in a.vertices), max(p.y for p in b.vertices))
    area_a = polygon_area(a.vertices)
    area_b = polygon_area(b.vertices)
    if y1 <= y0:
        return 0.0
    n = int(np.ceil((y1 - y0) / step))
    rows = y0 + (np.arange(n) + 0.5) * step
    amin, amax = _row_intervals(a, rows)
    bmin, bmax = _row_intervals(b, rows)
    overlap = np.minimum(amax, bmax) - np.maximum(amin, bmin)
    inter = float(np.clip(overlap, 0.0, None)[np.isfinite(overlap)].sum()) * step
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def random_int_quad(rng: random.Random, hi: int = 800) -> QuadBox:
    """Canonical convex quad with integer coordinates (codec-friendly)."""
    from rsvlkit.geometry import canonicalize_quad, is_convex

    while True:
        q = random_convex_quad(rng, lo=hi * 0.2, hi=hi * 0.8, rmin=8.0, rmax=hi * 0.15,
                               min_area=60.0)
        pts = [Point2D(float(round(p.x)), float(round(p.y))) for p in q.vertices]
        cand = QuadBox(tuple(pts))
        if polygon_area(pts) < 1.0:
            continue
        cand = canonicalize_quad(cand)
        if is_convex(cand):
            return cand


def random_detection_set(rng: random.Random, categories=("plane", "ship", "small-vehicle"),
                         max_per_cat: int = 4, hi: int = 800):
    """Detections already in canonical response order, integer coordinates."""
    from rsvlkit.geometry import LabeledDetection
    from rsvlkit.response_codec import canonical_response_order

    dets = []
    for cat in categories:
        for _ in range(rng.randint(0, max_per_cat)):
            dets.append(LabeledDetection(cat, random_int_quad(rng, hi)))
    return canonical_response_order(dets)


def square_detection(x1, y1, x2, y2, cat):
    from rsvlkit.geometry import LabeledDetection
    return LabeledDetection(cat, QuadBox((
        Point2D(x1, y1), Point2D(x2, y1), Point2D(x2, y2), Point2D(x1, y2))))


def stability_fixture(seed: int = 1234, n_images: int = 200, n_classes: int = 15,
                      gt_per_image: int = 25, tp_rate: float = 0.8, fp_rate: float = 0.2):
    """Synthetic detection benchmark: ~n_images*gt_per_image GT squares,
    tp_rate of them re-found at IoU around 0.8, plus fp_rate spurious boxes."""
    rng = random.Random(seed)
    classes = [f"class-{i:02d}" for i in range(n_classes)]
    preds_by_image, gts_by_image = {}, {}
    for n in range(n_images):
        img = f"img-{n:04d}"
        gts, preds = [], []
        for _ in range(gt_per_image):
            cat = rng.choice(classes)
            x, y = rng.uniform(0, 900), rng.uniform(0, 900)
            s = rng.uniform(20, 60)
            gts.append(square_detection(x, y, x + s, y + s, cat))
            if rng.random() < tp_rate:
                # axis shift d gives IoU (s-d)/(s+d); d = s/9 lands at 0.8
                d = s / 9 * rng.uniform(0.8, 1.2)
                preds.append(square_detection(x + d, y, x + s + d, y + s, cat))
        for _ in range(int(gt_per_image * fp_rate)):
            cat = rng.choice(classes)
            x, y = rng.uniform(2000, 3000), rng.uniform(2000, 3000)
            s = rng.uniform(20, 60)
            preds.append(square_detection(x, y, x + s, y + s, cat))
        rng.shuffle(preds)
        preds_by_image[img] = preds
        gts_by_image[img] = gts
    return preds_by_image, gts_by_image


def oracle_average_precision(flags, n_gt, interpolation):
    """Pure-python PR-area computation, written independently of the library."""
    if n_gt == 0:
        return 0.0
    prec, rec = [], []
    tp = fp = 0
    for f in flags:
        tp, fp = (tp + 1, fp) if f else (tp, fp + 1)
        prec.append(tp / (tp + fp))
        rec.append(tp / n_gt)
    if interpolation == "voc07_11point":
        total = 0.0
        for i in range(11):
            level = i / 10
            candidates = [p for p, r in zip(prec, rec) if r >= level]
            total += max(candidates) if candidates else 0.0
        return total / 11
    # all_points: sum over recall segments of segment width x best precision
    # at or beyond the segment's right edge (sentinel precision 0 at recall 1)
    points = sorted(set([0.0, 1.0] + rec))
    area = 0.0
    for a, b in zip(points, points[1:]):
        best = max((p for p, r in zip(prec, rec) if r >= b), default=0.0)
        area += (b - a) * best
    return area

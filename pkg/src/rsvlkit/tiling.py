"""Sliding-window tiling for large images: plan, clip, merge.

Windows are laid out with a fixed stride (length - overlap) and the last
window of each axis is clamped to the image border, so every pixel is
covered and consecutive windows overlap by at least the configured amount.
Merging is score-free: windows take precedence in row-major order, which
keeps results deterministic without confidence values.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import (
    DEGENERATE_AREA_TOL,
    LabeledDetection,
    Point2D,
    QuadBox,
    canonicalize_quad,
    clip_convex,
    convex_hull,
    iou_or_zero,
    is_convex,
    min_area_rect,
    polygon_area,
    quad_area,
    translate_quad,
)
from .resolution import ImageGeometry


class TilingError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class TilingSpec:
    length: int = 512
    overlap: int = 100

    def __post_init__(self) -> None:
        if not 0 <= self.overlap < self.length:
            raise TilingError(f"need 0 <= overlap < length, got {self.overlap}/{self.length}")


@dataclass(frozen=True, slots=True)
class TileWindow:
    x0: int
    y0: int
    w: int
    h: int


def _axis_starts(dim: int, length: int, stride: int) -> list[int]:
    if dim <= length:
        return [0]
    starts = []
    pos = 0
    while pos + length < dim:
        starts.append(pos)
        pos += stride
    starts.append(dim - length)
    return starts


def plan_windows(g: ImageGeometry, spec: TilingSpec) -> list[TileWindow]:
    """Deterministic row-major window grid covering the whole image."""
    stride = spec.length - spec.overlap
    xs = _axis_starts(g.width, spec.length, stride)
    ys = _axis_starts(g.height, spec.length, stride)
    w = min(spec.length, g.width)
    h = min(spec.length, g.height)
    return [TileWindow(x0, y0, w, h) for y0 in ys for x0 in xs]


def windows_manifest(g: ImageGeometry, spec: TilingSpec, image_id: str = "") -> dict:
    """JSON-ready window plan for external croppers."""
    windows = plan_windows(g, spec)
    return {
        "image_id": image_id,
        "height": g.height,
        "width": g.width,
        "length": spec.length,
        "overlap": spec.overlap,
        "windows": [
            {"window_id": i, "x0": win.x0, "y0": win.y0, "w": win.w, "h": win.h}
            for i, win in enumerate(windows)
        ],
    }


def _window_quad(win: TileWindow) -> list[Point2D]:
    return [
        Point2D(win.x0, win.y0),
        Point2D(win.x0 + win.w, win.y0),
        Point2D(win.x0 + win.w, win.y0 + win.h),
        Point2D(win.x0, win.y0 + win.h),
    ]


def clip_annotations(dets, win: TileWindow, keep_ratio: float = 0.7) -> list[LabeledDetection]:
    """Intersect detections with a window and translate survivors to its frame.

    A detection is kept when the clipped fraction of its area reaches
    ``keep_ratio``.  Partially clipped polygons are re-fitted with the
    minimal-area enclosing rotated rectangle; untouched ones keep their
    exact geometry.
    """
    rect = _window_quad(win)
    kept: list[LabeledDetection] = []
    for det in dets:
        area = quad_area(det.box)
        if area < DEGENERATE_AREA_TOL:
            continue
        subject = list(det.box.vertices)
        if not is_convex(det.box):
            subject = convex_hull(subject)
        clipped = clip_convex(subject, rect)
        clipped_area = polygon_area(clipped) if len(clipped) >= 3 else 0.0
        if clipped_area < DEGENERATE_AREA_TOL or clipped_area / area < keep_ratio:
            continue
        if clipped_area >= area * (1.0 - 1e-12):
            box = det.box  # fully inside, geometry untouched
        else:
            box = min_area_rect(clipped)
        kept.append(LabeledDetection(det.category, translate_quad(box, -win.x0, -win.y0)))
    return kept


def merge_windows(per_window, dedup_iou: float = 0.5) -> list[LabeledDetection]:
    """Translate window-local detections to the global frame and dedup.

    Windows are processed row-major; the first occurrence of an object wins
    and any later same-category detection with IoU >= ``dedup_iou`` against a
    kept one is dropped.
    """
    ordered = sorted(per_window, key=lambda item: (item[0].y0, item[0].x0))
    kept: list[LabeledDetection] = []
    for win, dets in ordered:
        for det in dets:
            candidate = LabeledDetection(det.category, translate_quad(det.box, win.x0, win.y0))
            duplicate = any(
                prev.category == candidate.category
                and iou_or_zero(prev.box, candidate.box) >= dedup_iou
                for prev in kept
            )
            if not duplicate:
                kept.append(candidate)
    return kept

"""Model-input resolution planning and native/model coordinate transforms.

A plan maps a native image size (H, W) to patch-aligned target dims
(H_hat, W_hat): each dimension is ceiled to the nearest patch multiple
("tightest wrap"), and images whose pixel count falls outside the
configured [min_pixels, max_pixels] window are first rescaled uniformly.
The search for the uniform factor is exact integer arithmetic, so plans
are reproducible across platforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

from .geometry import LabeledDetection, scale_detections

logger = logging.getLogger(__name__)


class ResolutionError(ValueError):
    pass


class Unsatisfiable(ResolutionError):
    """No patch-aligned target exists inside the pixel window."""


class OutOfBounds(ResolutionError):
    """A transformed coordinate lands more than 1 px outside the frame."""


@dataclass(frozen=True, slots=True)
class ImageGeometry:
    height: int
    width: int

    def __post_init__(self) -> None:
        for name in ("height", "width"):
            v = getattr(self, name)
            if v != int(v):
                raise ResolutionError(f"image {name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.height < 1 or self.width < 1:
            raise ResolutionError(f"image dims must be >= 1, got {self.height}x{self.width}")

    @property
    def pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True, slots=True)
class PatchSpec:
    patch_len: int = 28
    min_pixels: int = 224 * 224
    max_pixels: int = 1008 * 1008

    def __post_init__(self) -> None:
        if self.patch_len < 1:
            raise ResolutionError(f"patch_len must be >= 1, got {self.patch_len}")
        if not (0 < self.min_pixels <= self.max_pixels):
            raise ResolutionError(
                f"need 0 < min_pixels <= max_pixels, got [{self.min_pixels}, {self.max_pixels}]")


@dataclass(frozen=True, slots=True)
class ResizePlan:
    source: ImageGeometry
    target: ImageGeometry
    sx: float  # target.width / source.width
    sy: float  # target.height / source.height


class ScaleClass(Enum):
    SMALL = "small"
    REGULAR = "regular"
    UHR = "uhr"


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _max_true(pred, hi_start: int = 1) -> int:
    """Largest n >= 1 with pred(n) true (monotone true->false); 0 when pred(1) fails."""
    if not pred(1):
        return 0
    hi = hi_start
    while pred(hi):
        hi *= 2
    lo = hi // 2  # pred(lo) true, pred(hi) false
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _min_true(pred) -> int:
    """Smallest n >= 1 with pred(n) true (monotone false->true)."""
    hi = 1
    while not pred(hi):
        hi *= 2
    lo = hi // 2  # pred(lo) false (or lo == 0), pred(hi) true
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _largest_grid(h: int, w: int, limit: int) -> tuple[int, int]:
    """Patch grid (rows, cols) for the largest uniform scale with rows*cols <= limit.

    The optimum scale sits at a breakpoint where one axis' ceiling ticks over,
    i.e. t = a/h or t = b/w with rows = ceil(t*h), cols = ceil(t*w); each
    family is searched by bisection on exact integers.
    """
    a1 = _max_true(lambda a: a * _ceil_div(a * w, h) <= limit)
    b1 = _max_true(lambda b: b * _ceil_div(b * h, w) <= limit)
    if a1 == 0 and b1 == 0:
        raise Unsatisfiable(f"no uniform scale keeps {h}x{w} within {limit} patches")
    if a1 * w >= b1 * h:  # a1/h >= b1/w
        return a1, _ceil_div(a1 * w, h)
    return _ceil_div(b1 * h, w), b1


def _smallest_grid(h: int, w: int, need: int) -> tuple[int, int]:
    """Patch grid for the smallest uniform scale with rows*cols >= need."""
    a1 = _min_true(lambda a: a * _ceil_div(a * w, h) >= need)
    b1 = _min_true(lambda b: b * _ceil_div(b * h, w) >= need)
    if a1 * w <= b1 * h:  # a1/h <= b1/w
        return a1, _ceil_div(a1 * w, h)
    return _ceil_div(b1 * h, w), b1


def smart_resize(g: ImageGeometry, p: PatchSpec, max_mode: bool = False) -> ResizePlan:
    """Plan the patch-aligned model-input size for a native image.

    In-window images get the plain per-dimension ceiling.  Small images are
    enlarged and oversized images shrunk by the extremal uniform factor whose
    patch-ceiled area lands back inside the window.  ``max_mode`` ignores the
    source area and targets the largest admissible area (test-time upscaling).
    """
    patch_area = p.patch_len * p.patch_len
    pmin = _ceil_div(p.min_pixels, patch_area)
    pmax = p.max_pixels // patch_area
    if pmax < 1 or pmin > pmax:
        raise Unsatisfiable(
            f"patch window empty: need {pmin}..{pmax} patches of {p.patch_len}px")

    if max_mode:
        rows, cols = _largest_grid(g.height, g.width, pmax)
    elif g.pixels < p.min_pixels:
        rows, cols = _smallest_grid(g.height, g.width, pmin)
    elif g.pixels > p.max_pixels:
        rows, cols = _largest_grid(g.height, g.width, pmax)
    else:
        rows = _ceil_div(g.height, p.patch_len)
        cols = _ceil_div(g.width, p.patch_len)
        if rows * cols > pmax:
            # ceiling pushed a near-limit image over the top bound
            rows, cols = _largest_grid(g.height, g.width, pmax)

    if not (pmin <= rows * cols <= pmax):
        raise Unsatisfiable(
            f"{g.height}x{g.width} with patch {p.patch_len} cannot land in "
            f"[{p.min_pixels}, {p.max_pixels}] px (grid {rows}x{cols})")
    target = ImageGeometry(rows * p.patch_len, cols * p.patch_len)
    return ResizePlan(source=g, target=target,
                      sx=target.width / g.width, sy=target.height / g.height)


def classify_scale(g: ImageGeometry, p: PatchSpec) -> ScaleClass:
    if g.pixels < p.min_pixels:
        return ScaleClass.SMALL
    if g.pixels > p.max_pixels:
        return ScaleClass.UHR
    return ScaleClass.REGULAR


def _check_bounds(det: LabeledDetection, g: ImageGeometry, what: str) -> LabeledDetection:
    from .geometry import Point2D, QuadBox

    clamped = []
    dirty = False
    for pt in det.box.vertices:
        x, y = pt.x, pt.y
        if x < -1.0 or x > g.width + 1.0 or y < -1.0 or y > g.height + 1.0:
            raise OutOfBounds(
                f"{what}: vertex ({pt.x:.2f}, {pt.y:.2f}) exceeds {g.width}x{g.height} frame by > 1 px")
        nx = min(max(x, 0.0), float(g.width))
        ny = min(max(y, 0.0), float(g.height))
        if nx != x or ny != y:
            dirty = True
        clamped.append(Point2D(nx, ny))
    if not dirty:
        return det
    logger.warning("%s: clamped vertices of %r into %dx%d frame",
                   what, det.category, g.width, g.height)
    return LabeledDetection(det.category, QuadBox(tuple(clamped)))


def to_model_space(det: LabeledDetection, plan: ResizePlan) -> LabeledDetection:
    """Rescale a native-frame detection into the plan's model frame."""
    (scaled,) = scale_detections([det], plan.sx, plan.sy)
    return _check_bounds(scaled, plan.target, "to_model_space")


def from_model_space(det: LabeledDetection, plan: ResizePlan) -> LabeledDetection:
    """Inverse of to_model_space: model frame back to the native frame."""
    (scaled,) = scale_detections([det], 1.0 / plan.sx, 1.0 / plan.sy)
    return _check_bounds(scaled, plan.source, "from_model_space")

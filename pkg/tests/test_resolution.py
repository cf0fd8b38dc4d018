import math
import random
from fractions import Fraction

import pytest

from rsvlkit.geometry import LabeledDetection, Point2D, QuadBox
from rsvlkit.resolution import (
    ImageGeometry,
    OutOfBounds,
    PatchSpec,
    ResizePlan,
    ScaleClass,
    Unsatisfiable,
    classify_scale,
    from_model_space,
    smart_resize,
    to_model_space,
)

DEFAULT = PatchSpec()


def scan_resize_oracle(h: int, w: int, p: PatchSpec) -> tuple[int, int]:
    """Linear scan over uniform scale factors in exact 1e-4 steps.

    Exact rational arithmetic so ceilings at breakpoints behave; returns the
    target dims for the extremal in-window factor.
    """
    def dims(s: Fraction) -> tuple[int, int]:
        rows = math.ceil(s * h / p.patch_len)
        cols = math.ceil(s * w / p.patch_len)
        return rows * p.patch_len, cols * p.patch_len

    def area(s: Fraction) -> int:
        th, tw = dims(s)
        return th * tw

    raw = h * w
    if p.min_pixels <= raw <= p.max_pixels and area(Fraction(1)) <= p.max_pixels:
        return dims(Fraction(1))
    if raw < p.min_pixels:
        k = 1
        while area(Fraction(k, 10000)) < p.min_pixels:
            k += 1
        return dims(Fraction(k, 10000))
    k = 30000
    while k > 0 and area(Fraction(k, 10000)) > p.max_pixels:
        k -= 1
    assert k > 0, "oracle found no feasible scale"
    return dims(Fraction(k, 10000))


class TestSmartResize:
    def test_in_window_patch_multiple_is_fixed_point(self):
        plan = smart_resize(ImageGeometry(448, 448), DEFAULT)
        assert (plan.target.height, plan.target.width) == (448, 448)
        assert plan.sx == plan.sy == 1.0

    def test_in_window_ceiling(self):
        spec = PatchSpec(patch_len=14)
        plan = smart_resize(ImageGeometry(500, 300), spec)
        assert (plan.target.height, plan.target.width) == (504, 308)
        assert plan.sx == pytest.approx(308 / 300)
        assert plan.sy == pytest.approx(504 / 500)

    def test_uhr_downscale_matches_scan_oracle(self):
        spec = PatchSpec(patch_len=14)
        plan = smart_resize(ImageGeometry(5000, 4000), spec)
        assert (plan.target.height, plan.target.width) == scan_resize_oracle(5000, 4000, spec)
        assert (plan.target.height, plan.target.width) == (1120, 896)
        assert plan.target.pixels <= spec.max_pixels

    def test_small_upscale_matches_scan_oracle(self):
        plan = smart_resize(ImageGeometry(100, 150), DEFAULT)
        assert (plan.target.height, plan.target.width) == scan_resize_oracle(100, 150, DEFAULT)
        assert plan.target.pixels >= DEFAULT.min_pixels
        assert plan.target.height % 28 == 0 and plan.target.width % 28 == 0

    def test_more_scan_oracle_cases(self):
        for h, w in [(2000, 3000), (50, 60), (1, 4000), (223, 224), (1100, 1100)]:
            plan = smart_resize(ImageGeometry(h, w), DEFAULT)
            assert (plan.target.height, plan.target.width) == scan_resize_oracle(h, w, DEFAULT)

    def test_random_plans_keep_all_invariants(self):
        rng = random.Random(424242)
        for _ in range(2000):
            h, w = rng.randint(1, 12000), rng.randint(1, 12000)
            g = ImageGeometry(h, w)
            try:
                plan = smart_resize(g, DEFAULT)
            except Unsatisfiable:
                continue
            t = plan.target
            assert t.height % DEFAULT.patch_len == 0
            assert t.width % DEFAULT.patch_len == 0
            assert DEFAULT.min_pixels <= t.pixels <= DEFAULT.max_pixels
            if DEFAULT.min_pixels <= g.pixels <= DEFAULT.max_pixels:
                assert t.height - g.height < DEFAULT.patch_len
                assert t.width - g.width < DEFAULT.patch_len

    def test_in_window_input_whose_ceiling_overflows_reroutes(self):
        # 1009x1000 is inside the pixel window, but ceiling both dims to
        # patch multiples (1036x1008) would overflow it; the planner must
        # fall back to the uniform-downscale search and keep all invariants
        g = ImageGeometry(1009, 1000)
        assert DEFAULT.min_pixels <= g.pixels <= DEFAULT.max_pixels
        raw_ceiling = (math.ceil(1009 / 28) * 28) * (math.ceil(1000 / 28) * 28)
        assert raw_ceiling > DEFAULT.max_pixels
        plan = smart_resize(g, DEFAULT)
        t = plan.target
        assert t.height % 28 == 0 and t.width % 28 == 0
        assert DEFAULT.min_pixels <= t.pixels <= DEFAULT.max_pixels
        assert t.height - g.height < 28 and t.width - g.width < 28

    def test_max_mode_targets_the_ceiling_area(self):
        plan = smart_resize(ImageGeometry(512, 512), DEFAULT, max_mode=True)
        assert plan.target.pixels > 512 * 512
        assert plan.target.pixels <= DEFAULT.max_pixels
        # square source saturates the window exactly
        assert (plan.target.height, plan.target.width) == (1008, 1008)

    def test_unsatisfiable_window(self):
        with pytest.raises(Unsatisfiable):
            smart_resize(ImageGeometry(500, 500), PatchSpec(patch_len=1000, min_pixels=1, max_pixels=999 * 999))


class TestClassify:
    def test_small(self):
        assert classify_scale(ImageGeometry(100, 100), DEFAULT) is ScaleClass.SMALL

    def test_regular(self):
        assert classify_scale(ImageGeometry(448, 448), DEFAULT) is ScaleClass.REGULAR

    def test_uhr_average_large_scene(self):
        assert classify_scale(ImageGeometry(7099, 6329), DEFAULT) is ScaleClass.UHR

    def test_partition_and_monotone_in_area(self):
        prev = None
        for scale in range(1, 60):
            g = ImageGeometry(20 * scale, 30 * scale)
            cls = classify_scale(g, DEFAULT)
            order = {ScaleClass.SMALL: 0, ScaleClass.REGULAR: 1, ScaleClass.UHR: 2}[cls]
            if prev is not None:
                assert order >= prev
            prev = order


def square_det(x1, y1, x2, y2, cat="ship") -> LabeledDetection:
    return LabeledDetection(cat, QuadBox((
        Point2D(x1, y1), Point2D(x2, y1), Point2D(x2, y2), Point2D(x1, y2))))


class TestModelSpace:
    def test_identity_plan(self):
        g = ImageGeometry(448, 448)
        plan = smart_resize(g, DEFAULT)
        det = square_det(10, 10, 20, 20)
        assert to_model_space(det, plan) == det

    def test_doubling_plan(self):
        plan = ResizePlan(ImageGeometry(100, 100), ImageGeometry(200, 200), 2.0, 2.0)
        got = to_model_space(square_det(10, 10, 20, 20), plan)
        assert got.box.flat() == [20.0, 20.0, 40.0, 20.0, 40.0, 40.0, 20.0, 40.0]

    def test_direct_multiply_oracle(self):
        spec = PatchSpec(patch_len=14)
        plan = smart_resize(ImageGeometry(500, 300), spec)  # -> (504, 308)
        det = LabeledDetection("ship", QuadBox((
            Point2D(299, 499), Point2D(299.5, 499), Point2D(299.5, 499.5), Point2D(299, 499.5))))
        got = to_model_space(det, plan)
        assert got.box.vertices[0].x == pytest.approx(299 * 308 / 300)
        assert got.box.vertices[0].y == pytest.approx(499 * 504 / 500)

    def test_round_trip_identity(self):
        rng = random.Random(77)
        spec = PatchSpec(patch_len=14)
        plan = smart_resize(ImageGeometry(500, 300), spec)
        for _ in range(200):
            x1, y1 = rng.uniform(0, 290), rng.uniform(0, 490)
            det = square_det(x1, y1, x1 + 9, y1 + 9)
            back = from_model_space(to_model_space(det, plan), plan)
            for p, q in zip(back.box.vertices, det.box.vertices):
                assert abs(p.x - q.x) < 1e-9 and abs(p.y - q.y) < 1e-9

    def test_integer_rendering_error_bounded(self):
        spec = PatchSpec(patch_len=14)
        plan = smart_resize(ImageGeometry(500, 300), spec)
        det = square_det(13.3, 27.9, 100.2, 141.1)
        got = to_model_space(det, plan)
        for p in got.box.vertices:
            assert abs(round(p.x) - p.x) <= 0.5 and abs(round(p.y) - p.y) <= 0.5

    def test_slightly_out_clamps_with_warning(self, caplog):
        plan = ResizePlan(ImageGeometry(100, 100), ImageGeometry(100, 100), 1.0, 1.0)
        det = square_det(0, 0, 100.8, 100.8)
        with caplog.at_level("WARNING"):
            got = to_model_space(det, plan)
        assert "clamped" in caplog.text
        assert max(p.x for p in got.box.vertices) == 100.0

    def test_far_out_raises(self):
        plan = ResizePlan(ImageGeometry(100, 100), ImageGeometry(100, 100), 1.0, 1.0)
        with pytest.raises(OutOfBounds):
            to_model_space(square_det(0, 0, 105, 105), plan)

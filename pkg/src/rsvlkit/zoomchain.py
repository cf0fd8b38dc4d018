"""Two-turn zoom-in conversations and the synthesis recipes backing them.

A zoom sample shows the model a downsampled view first; the assistant
predicts a region of interest, receives the native-resolution crop of that
region, and then answers.  Only the two assistant turns carry loss.  The
open-ended recipes (grid-region counting, category comparison), the external
QA ingestion path, and the multiple-choice conversion are all deterministic
given their seeds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .data_engine import ConversationRecord, Message, derive_seed, image_part, text_part
from .geometry import HBox, hbox_envelope
from .resolution import ImageGeometry, PatchSpec, ResizePlan, smart_resize
from .response_codec import render_hbox

logger = logging.getLogger(__name__)

REGION_NAMES = (
    "top-left", "top-center", "top-right",
    "middle-left", "center", "middle-right",
    "bottom-left", "bottom-center", "bottom-right",
)

DEFAULT_ZOOM_PROMPT = (
    "This is a downsampled overview of a large image. First output the "
    "region of interest as [x1, y1, x2, y2], then answer after zooming in.")


class ZoomChainError(ValueError):
    pass


class RoiOutOfBounds(ZoomChainError):
    pass


class ValidationError(ZoomChainError):
    pass


@dataclass(frozen=True, slots=True)
class GridRegion:
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index <= 8:
            raise ZoomChainError(f"grid region index {self.index} outside 0..8")

    @property
    def name(self) -> str:
        return REGION_NAMES[self.index]


def region_of_point(x: float, y: float, g: ImageGeometry) -> GridRegion:
    """3x3 grid cell of a point; splits at floor(dim/3) and floor(2*dim/3),
    half-open intervals."""
    bx1, bx2 = g.width // 3, (2 * g.width) // 3
    by1, by2 = g.height // 3, (2 * g.height) // 3
    col = 0 if x < bx1 else (1 if x < bx2 else 2)
    row = 0 if y < by1 else (1 if y < by2 else 2)
    return GridRegion(row * 3 + col)


def quad_centroid(quad) -> tuple[float, float]:
    xs = [p.x for p in quad.vertices]
    ys = [p.y for p in quad.vertices]
    return sum(xs) / 4.0, sum(ys) / 4.0


@dataclass(frozen=True, slots=True)
class ZoomSample:
    image: str
    native: ImageGeometry
    plan: ResizePlan  # native -> downsampled
    question: str
    roi: HBox  # downsampled frame
    final_answer: str

    def __post_init__(self) -> None:
        t = self.plan.target
        r = self.roi
        if r.x1 < 0 or r.y1 < 0 or r.x2 > t.width or r.y2 > t.height:
            raise RoiOutOfBounds(
                f"roi {(r.x1, r.y1, r.x2, r.y2)} outside downsampled {t.width}x{t.height}")


@dataclass(frozen=True, slots=True)
class McqItem:
    question: str
    options: tuple[str, str, str, str]
    answer_letter: str

    def __post_init__(self) -> None:
        if len(self.options) != 4 or len(set(self.options)) != 4:
            raise ValidationError(f"need 4 unique options, got {self.options!r}")
        if self.answer_letter not in "ABCD":
            raise ValidationError(f"bad answer letter {self.answer_letter!r}")

    @property
    def answer_text(self) -> str:
        return self.options["ABCD".index(self.answer_letter)]

    def render_question(self) -> str:
        lines = [self.question]
        for letter, option in zip("ABCD", self.options):
            lines.append(f"{letter}. {option}")
        return "\n".join(lines)


def _expand_to_min_side(x1: float, y1: float, x2: float, y2: float,
                        min_side: float, w: int, h: int):
    """Grow a box symmetrically to min_side per axis, shifting at borders."""
    def one_axis(lo, hi, dim):
        side = hi - lo
        want = min(min_side, dim)
        if side < want:
            c = (lo + hi) / 2
            lo, hi = c - want / 2, c + want / 2
            if lo < 0:
                lo, hi = 0.0, want
            elif hi > dim:
                lo, hi = dim - want, float(dim)
        return max(lo, 0.0), min(hi, float(dim))

    x1, x2 = one_axis(x1, x2, w)
    y1, y2 = one_axis(y1, y2, h)
    return x1, y1, x2, y2


def compute_crop(roi: HBox, plan: ResizePlan, min_side: int = 224) -> HBox:
    """Map a downsampled-frame RoI back to an integer native-frame crop.

    Divides by the plan's scale factors, clamps to the native frame, grows
    tiny regions to ``min_side``, and snaps outward to whole pixels.
    """
    w, h = plan.source.width, plan.source.height
    x1 = min(max(roi.x1 / plan.sx, 0.0), w)
    x2 = min(max(roi.x2 / plan.sx, 0.0), w)
    y1 = min(max(roi.y1 / plan.sy, 0.0), h)
    y2 = min(max(roi.y2 / plan.sy, 0.0), h)
    x1, y1, x2, y2 = _expand_to_min_side(x1, y1, x2, y2, min_side, w, h)
    return HBox(max(0, math.floor(x1)), max(0, math.floor(y1)),
                min(w, math.ceil(x2)), min(h, math.ceil(y2)))


def build_zoom_conversation(sample: ZoomSample, prompt: str = DEFAULT_ZOOM_PROMPT,
                            min_crop_side: int = 224) -> ConversationRecord:
    """Assemble the two-turn protocol with loss only on the assistant turns."""
    down = sample.plan.target
    down_ref = f"{sample.image}#resize={down.width}x{down.height}"
    crop = compute_crop(sample.roi, sample.plan, min_side=min_crop_side)
    crop_ref = (f"{sample.image}#crop="
                f"{int(crop.x1)},{int(crop.y1)},{int(crop.x2)},{int(crop.y2)}")
    roi_text = render_hbox(sample.roi)
    messages = (
        Message("user", (text_part(prompt), image_part(down_ref),
                         text_part(sample.question))),
        Message("assistant", (text_part(roi_text),), trainable=True),
        Message("tool", (text_part(f"Zoom-in(image, {roi_text})"), image_part(crop_ref))),
        Message("assistant", (text_part(sample.final_answer),), trainable=True),
    )
    geoms = {
        down_ref: down,
        crop_ref: ImageGeometry(int(crop.y2 - crop.y1), int(crop.x2 - crop.x1)),
    }
    qdigest = derive_seed(0, sample.question) % 10**8  # stable across processes
    return ConversationRecord(f"zoom:{sample.image}:{qdigest}", messages, geoms)


# --------------------------------------------------------------------- #
# recipe 1: template counting / comparison QA
# --------------------------------------------------------------------- #

def gen_counting_qa(det_record, density_threshold: int = 10) -> list[dict]:
    """Counting questions per category: total when sparse, per grid region
    when the category count exceeds the density threshold.

    Evidence boxes ride along so downstream builders can keep absolute
    coordinates in the training data.
    """
    by_cat: dict[str, list] = {}
    for det in det_record.annotations:
        by_cat.setdefault(det.category, []).append(det)
    out: list[dict] = []
    for cat in sorted(by_cat):
        dets = by_cat[cat]
        if len(dets) > density_threshold:
            buckets: dict[int, list] = {}
            for det in dets:
                cx, cy = quad_centroid(det.box)
                buckets.setdefault(region_of_point(cx, cy, det_record.geometry).index,
                                   []).append(det)
            for index in sorted(buckets):
                region = GridRegion(index)
                members = buckets[index]
                out.append({
                    "question": f"How many {cat} are there in the {region.name} region of the image?",
                    "answer": str(len(members)),
                    "category": cat,
                    "region": region.name,
                    "evidence": [d.box.flat() for d in members],
                })
        else:
            out.append({
                "question": f"How many {cat} are there in the image?",
                "answer": str(len(dets)),
                "category": cat,
                "region": None,
                "evidence": [d.box.flat() for d in dets],
            })
    return out


def gen_comparison_qa(det_record, cat_a: str, cat_b: str) -> dict:
    """Which of two categories is more numerous; "equal" on ties."""
    count_a = sum(1 for d in det_record.annotations if d.category == cat_a)
    count_b = sum(1 for d in det_record.annotations if d.category == cat_b)
    if count_a > count_b:
        answer = cat_a
    elif count_b > count_a:
        answer = cat_b
    else:
        answer = "equal"
    return {
        "question": f"Which object appears more frequently in the image, {cat_a} or {cat_b}?",
        "answer": answer,
        "counts": {cat_a: count_a, cat_b: count_b},
    }


def evidence_roi(evidence, plan: ResizePlan, min_side: float = 4.0) -> HBox:
    """Downsampled-frame RoI covering the evidence boxes."""
    from .geometry import QuadBox

    envs = [hbox_envelope(QuadBox.from_flat(flat)) for flat in evidence]
    x1 = min(e.x1 for e in envs) * plan.sx
    y1 = min(e.y1 for e in envs) * plan.sy
    x2 = max(e.x2 for e in envs) * plan.sx
    y2 = max(e.y2 for e in envs) * plan.sy
    t = plan.target
    x1, y1, x2, y2 = _expand_to_min_side(x1, y1, x2, y2, min_side, t.width, t.height)
    return HBox(round(x1), round(y1), round(x2), round(y2))


# --------------------------------------------------------------------- #
# recipe 2: externally synthesized QA over coarse regions
# --------------------------------------------------------------------- #

def ingest_external_qa(path, padding: float = 0.10):
    """Validate an external QA JSON Lines file (question, answer, region).

    Regions get a padding margin per side (fraction of their size) and are
    clamped into the image.  Returns (records, errors); a bad line becomes an
    error entry instead of aborting the ingest.
    """
    from .formats import read_jsonl

    records, errors = [], []
    for n, obj in read_jsonl(path):
        try:
            for key in ("image", "height", "width", "question", "answer", "region"):
                if key not in obj:
                    raise ValueError(f"missing key {key!r}")
            region = obj["region"]
            if not isinstance(region, list) or len(region) != 4:
                raise ValueError(f"region must be [x1, y1, x2, y2], got {region!r}")
            x1, y1, x2, y2 = (float(v) for v in region)
            if x2 < x1 or y2 < y1:
                raise ValueError("region corners out of order")
            g = ImageGeometry(obj["height"], obj["width"])
            pad_x, pad_y = (x2 - x1) * padding, (y2 - y1) * padding
            px1, py1 = x1 - pad_x, y1 - pad_y
            px2, py2 = x2 + pad_x, y2 + pad_y
            if px1 < 0 or py1 < 0 or px2 > g.width or py2 > g.height:
                logger.warning("line %d: padded region clamped into %dx%d",
                               n, g.width, g.height)
            region_box = HBox(max(0.0, px1), max(0.0, py1),
                              min(float(g.width), px2), min(float(g.height), py2))
            records.append({
                "image": obj["image"],
                "geometry": g,
                "question": str(obj["question"]),
                "answer": str(obj["answer"]),
                "region": region_box,
            })
        except Exception as exc:
            errors.append((n, str(exc)))
    return records, errors


# --------------------------------------------------------------------- #
# recipe 3: multiple-choice conversion
# --------------------------------------------------------------------- #

def convert_to_mcq(question: str, gold: str, distractors, seed: int) -> McqItem:
    """Shuffle gold + three distractors into lettered options (seeded)."""
    import random

    distractors = [str(d) for d in distractors]
    options = [str(gold)] + distractors
    if len(distractors) != 3:
        raise ValidationError(f"need exactly 3 distractors, got {len(distractors)}")
    if any(not opt.strip() for opt in options):
        raise ValidationError("empty option text")
    if len(set(options)) != 4:
        raise ValidationError(f"options must be pairwise distinct: {options!r}")
    rng = random.Random(seed)
    rng.shuffle(options)
    letter = "ABCD"[options.index(str(gold))]
    return McqItem(question, tuple(options), letter)


def count_distractors(gold: int) -> list[str]:
    """Rule-based numeric distractors: gold +/- {1,2,3}, positive, nearest first."""
    out: list[int] = []
    for delta in (1, -1, 2, -2, 3, -3):
        cand = gold + delta
        if cand > 0 and cand != gold and cand not in out:
            out.append(cand)
        if len(out) == 3:
            break
    if len(out) < 3:
        raise ValidationError(f"cannot build 3 positive distractors around {gold}")
    return [str(v) for v in out]


def record_seed(seed: int, record_id: str) -> int:
    """Per-record derived seed for order-independent parallel generation."""
    return derive_seed(seed, f"record:{record_id}")


def zoom_sample_from_region(image: str, geometry: ImageGeometry, question: str,
                            answer: str, native_region: HBox, patch_spec: PatchSpec,
                            roi_min_side: int = 1) -> ZoomSample:
    """Wrap a QA pair plus native-frame region into a ZoomSample."""
    plan = smart_resize(geometry, patch_spec)
    t = plan.target
    x1, y1 = native_region.x1 * plan.sx, native_region.y1 * plan.sy
    x2, y2 = native_region.x2 * plan.sx, native_region.y2 * plan.sy
    x1, y1, x2, y2 = _expand_to_min_side(x1, y1, x2, y2, roi_min_side, t.width, t.height)
    roi = HBox(round(x1), round(y1), round(x2), round(y2))
    return ZoomSample(image, geometry, plan, question, roi, answer)

"""Bit-exact rendering and tolerant parsing of model response text.

Rendering is strict: detections must already be in canonical response
order (categories alphabetical, boxes sorted by their starting vertex) and
the output grammar is frozen so round trips are byte-identical.  Parsing
is forgiving: model output is untrusted, so malformed fragments become
diagnostics instead of exceptions unless strict mode is requested.

Plain detection grammar::

    response  = "There is none." | block , { "\\n" , block } ;
    block     = category , ": " , box , { "; " , box } ;
    box       = "(" , int , 7 * ( "," , int ) , ")" ;

JSON detection mode is a single compact array of
``{"label": <category>, "poly": [x1,y1,...,y4]}`` objects.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum

from .geometry import HBox, LabeledDetection, QuadBox, ZeroAreaQuad, canonicalize_quad, is_convex

EMPTY_RESPONSE = "There is none."


class CodecError(ValueError):
    pass


class UncanonicalInput(CodecError):
    """Detections handed to the renderer violate the canonical response order."""


class MalformedBox(CodecError):
    pass


class NoChoiceFound(CodecError):
    pass


class StrictParseError(CodecError):
    pass


class ResponseMode(Enum):
    PLAIN = "plain"
    JSON = "json"


@dataclass(frozen=True, slots=True)
class DetectionResponse:
    detections: tuple[LabeledDetection, ...]
    empty_marker: bool

    @classmethod
    def of(cls, detections) -> "DetectionResponse":
        dets = tuple(detections)
        return cls(dets, empty_marker=not dets)


@dataclass(slots=True)
class ParsedDetections:
    response: DetectionResponse
    diagnostics: list[str] = field(default_factory=list)
    mode: ResponseMode = ResponseMode.PLAIN


def round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def _start_key(det: LabeledDetection) -> tuple[float, float]:
    v0 = det.box.vertices[0]
    return (v0.y, v0.x)


def canonical_response_order(dets) -> list[LabeledDetection]:
    """Sort detections into the frozen response order (stable)."""
    return sorted(dets, key=lambda d: (d.category, *_start_key(d)))


def _check_canonical_order(dets) -> None:
    keys = [(d.category, *_start_key(d)) for d in dets]
    if keys != sorted(keys):
        raise UncanonicalInput(
            "detections are not grouped alphabetically / sorted by start vertex; "
            "apply canonical_response_order first")


def render_detections(dets, mode: ResponseMode = ResponseMode.PLAIN) -> str:
    """Serialize detections; empty input renders the literal empty marker."""
    dets = list(dets)
    _check_canonical_order(dets)
    if not dets:
        return EMPTY_RESPONSE
    if mode is ResponseMode.JSON:
        payload = [
            {"label": d.category, "poly": [round_half_up(v) for v in d.box.flat()]}
            for d in dets
        ]
        return json.dumps(payload, separators=(",", ":"))
    lines = []
    current: str | None = None
    boxes: list[str] = []
    for d in dets:
        tup = "(" + ",".join(str(round_half_up(v)) for v in d.box.flat()) + ")"
        if d.category != current:
            if current is not None:
                lines.append(f"{current}: " + "; ".join(boxes))
            current, boxes = d.category, [tup]
        else:
            boxes.append(tup)
    lines.append(f"{current}: " + "; ".join(boxes))
    return "\n".join(lines)


_TUPLE_RE = re.compile(r"\(([^()]*)\)")
_INT_RE = re.compile(r"-?\d+")
_BLOCK_RE = re.compile(r"([^:;\n(){}\[\]]+):\s*((?:\([^()]*\)\s*;?\s*)+)")


def _finish_detection(category: str, numbers: list[int], categories, diagnostics):
    quad = QuadBox.from_flat([float(n) for n in numbers])
    try:
        quad = canonicalize_quad(quad)
        if not is_convex(quad):
            # metrics fall back to the convex hull for IoU; record it here
            diagnostics.append(f"nonconvex_box: {category} {numbers}")
    except ZeroAreaQuad:
        diagnostics.append(f"degenerate_box: {category} {numbers}")
    if categories is not None and category not in categories:
        diagnostics.append(f"unknown_category: {category}")
    return LabeledDetection(category, quad)


def _parse_plain(text: str, categories, diagnostics) -> list[LabeledDetection]:
    dets: list[LabeledDetection] = []
    matched_any = False
    for block in _BLOCK_RE.finditer(text):
        matched_any = True
        category = block.group(1).strip()
        for tup in _TUPLE_RE.finditer(block.group(2)):
            numbers = [int(m.group()) for m in _INT_RE.finditer(tup.group(1))]
            if len(numbers) != 8:
                diagnostics.append(
                    f"malformed_tuple: {category} ({tup.group(1).strip()}) has {len(numbers)} numbers")
                continue
            dets.append(_finish_detection(category, numbers, categories, diagnostics))
    if not matched_any and text.strip():
        diagnostics.append("no_detections_parsed")
    return dets


def _extract_json_array(text: str):
    stripped = text.strip()
    if stripped.startswith("```"):
        stripped = re.sub(r"^```[a-zA-Z]*\s*|\s*```$", "", stripped)
    try:
        val = json.loads(stripped)
        if isinstance(val, list):
            return val
    except json.JSONDecodeError:
        pass
    start, end = stripped.find("["), stripped.rfind("]")
    if start != -1 and end > start:
        try:
            val = json.loads(stripped[start:end + 1])
            if isinstance(val, list):
                return val
        except json.JSONDecodeError:
            return None
    return None


def _parse_json(text: str, categories, diagnostics) -> list[LabeledDetection] | None:
    items = _extract_json_array(text)
    if items is None:
        return None
    dets: list[LabeledDetection] = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "label" not in item or "poly" not in item:
            diagnostics.append(f"malformed_item: index {i} lacks label/poly")
            continue
        poly = item["poly"]
        if not isinstance(poly, list) or len(poly) != 8 \
                or not all(isinstance(v, (int, float)) for v in poly):
            diagnostics.append(f"malformed_poly: index {i}")
            continue
        numbers = [round_half_up(float(v)) for v in poly]
        dets.append(_finish_detection(str(item["label"]), numbers, categories, diagnostics))
    return dets


def parse_detections(text: str, mode_hint: ResponseMode | None = None,
                     categories=None, strict: bool = False) -> ParsedDetections:
    """Extract every well-formed (category, 8-integer) group from model text.

    The mode is auto-detected when no hint is given.  Unknown categories are
    kept but flagged so metrics can count them as false positives.  In strict
    mode any diagnostic raises StrictParseError.
    """
    diagnostics: list[str] = []
    if text.strip() == EMPTY_RESPONSE:
        return ParsedDetections(DetectionResponse.of([]), [], mode_hint or ResponseMode.PLAIN)

    dets: list[LabeledDetection] | None = None
    mode = mode_hint
    if mode_hint in (None, ResponseMode.JSON):
        dets = _parse_json(text, categories, diagnostics)
        if dets is not None:
            mode = ResponseMode.JSON
        elif mode_hint is ResponseMode.JSON:
            diagnostics.append("json_array_not_found")
            dets = []
    if dets is None:
        mode = ResponseMode.PLAIN
        dets = _parse_plain(text, categories, diagnostics)

    if strict and diagnostics:
        raise StrictParseError("; ".join(diagnostics))
    dets = canonical_response_order(dets)
    return ParsedDetections(DetectionResponse.of(dets), diagnostics, mode or ResponseMode.PLAIN)


_HBOX_RE = re.compile(
    r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]")


def render_hbox(box: HBox, mode: ResponseMode = ResponseMode.PLAIN) -> str:
    coords = [round_half_up(v) for v in (box.x1, box.y1, box.x2, box.y2)]
    if mode is ResponseMode.JSON:
        return json.dumps({"bbox": coords}, separators=(",", ":"))
    return "[" + ", ".join(str(c) for c in coords) + "]"


def parse_hbox(text: str, min_size: int | None = None) -> HBox:
    """First [x1, y1, x2, y2] tuple in the text; whitespace is optional.

    ``min_size`` enforces a minimum side length (degenerate-RoI policy).
    """
    m = _HBOX_RE.search(text)
    if not m:
        raise MalformedBox(f"no [x1, y1, x2, y2] group in {text!r}")
    x1, y1, x2, y2 = (int(g) for g in m.groups())
    if x2 < x1 or y2 < y1:
        raise MalformedBox(f"corners out of order: {(x1, y1, x2, y2)}")
    if min_size is not None and (x2 - x1 < min_size or y2 - y1 < min_size):
        raise MalformedBox(f"box {(x1, y1, x2, y2)} smaller than min side {min_size}")
    return HBox(x1, y1, x2, y2)


_CHOICE_CUE = re.compile(
    r"(?i)\b(?:answers?|options?|choices?|select|choose|pick|go with|is)\b"
    r"[^A-Za-z0-9]{0,12}\(?\**([A-D])\**\)?(?![A-Za-z0-9])")
_CHOICE_PUNCT = re.compile(r"(?<![A-Za-z0-9])\(?([A-D])[\).:](?![A-Za-z0-9])")
_CHOICE_BARE = re.compile(r"(?<![A-Za-z0-9])([A-D])(?![A-Za-z0-9])")


def parse_choice(text: str) -> str:
    """Extract the intended option letter from free-form MCQ output."""
    m = _CHOICE_CUE.search(text)
    if m:
        return m.group(1).upper()
    m = _CHOICE_PUNCT.search(text)
    if m:
        return m.group(1)
    for m in _CHOICE_BARE.finditer(text):
        letter = m.group(1)
        if letter == "A":
            # skip the article "A" when it clearly starts a noun phrase
            tail = text[m.end():]
            if re.match(r"\s+[a-z]", tail):
                continue
        return letter
    raise NoChoiceFound(f"no option letter in {text!r}")

"""Offline record unification, rule-based cleaning, and the online sampler.

Heterogeneous source annotations (horizontal / oriented / quadrilateral
boxes, descriptor-tagged prompts) are normalized into a small set of record
types.  At training time a WeightedSampler draws records subset-by-subset
with configurable weights and the augmentation pipeline renders each record
into a conversation sample: prompt choice, plain/JSON answer mode, synonym
replacement, and synchronized random resizing all flow from one seed.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import re
from dataclasses import dataclass, field

from .geometry import (
    HBox,
    LabeledDetection,
    QuadBox,
    ZeroAreaQuad,
    canonicalize_quad,
    hbox_envelope,
    obox_to_quad,
    OBox,
)
from .resolution import ImageGeometry, PatchSpec, ResizePlan, smart_resize, to_model_space
from .response_codec import ResponseMode, canonical_response_order, render_detections, render_hbox

logger = logging.getLogger(__name__)

DEFAULT_DESCRIPTOR_TAGS = ("grounding", "refer", "identify")

DEFAULT_PROMPT_POOLS = {
    "detection": [
        "Detect all objects in this aerial image and report their quadrilateral boxes.",
        "Find every object in the image and give its category and corner coordinates.",
        "Locate all objects present in the image.",
    ],
    "grounding": [
        "Locate the region this refers to:",
        "Find the bounding box for:",
        "Point out the object described by:",
    ],
    "vqa": [
        "Answer the question about the image.",
    ],
}

JSON_SUFFIX_DEFAULT = " Answer in JSON format."


class DataEngineError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Message:
    role: str
    content: tuple[dict, ...]
    trainable: bool = False

    def __post_init__(self) -> None:
        if self.role not in ("user", "assistant", "tool"):
            raise DataEngineError(f"unknown role {self.role!r}")
        if self.trainable and self.role != "assistant":
            raise DataEngineError(f"{self.role} messages can never be trainable")
        object.__setattr__(self, "content", tuple(self.content))

    def image_refs(self) -> list[str]:
        return [part["image"] for part in self.content if part.get("type") == "image"]

    def text(self) -> str:
        return " ".join(part["text"] for part in self.content if part.get("type") == "text")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": list(self.content), "trainable": self.trainable}


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(ref: str) -> dict:
    return {"type": "image", "image": ref}


@dataclass(frozen=True, slots=True)
class ConversationRecord:
    id: str
    messages: tuple[Message, ...]
    image_geometries: dict

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        for prev, cur in zip(self.messages, self.messages[1:]):
            if prev.role == "assistant" and cur.role == "assistant":
                raise DataEngineError(f"record {self.id}: consecutive assistant turns")
        for msg in self.messages:
            for ref in msg.image_refs():
                if ref not in self.image_geometries:
                    raise DataEngineError(f"record {self.id}: unresolvable image ref {ref!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "messages": [m.to_dict() for m in self.messages],
            "images": {
                ref: {"height": g.height, "width": g.width}
                for ref, g in self.image_geometries.items()
            },
        }


@dataclass(frozen=True, slots=True)
class DetectionRecord:
    image: str
    geometry: ImageGeometry
    annotations: tuple[LabeledDetection, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for det in self.annotations:
            for p in det.box.vertices:
                if not (-1e-6 <= p.x <= self.geometry.width + 1e-6
                        and -1e-6 <= p.y <= self.geometry.height + 1e-6):
                    raise DataEngineError(
                        f"{self.image}: annotation {det.category} out of bounds at "
                        f"({p.x:.1f}, {p.y:.1f})")


@dataclass(frozen=True, slots=True)
class GroundingRecord:
    image: str
    geometry: ImageGeometry
    expression: str
    target: HBox

    def __post_init__(self) -> None:
        t = self.target
        if t.x1 < -1e-6 or t.y1 < -1e-6 \
                or t.x2 > self.geometry.width + 1e-6 or t.y2 > self.geometry.height + 1e-6:
            raise DataEngineError(f"{self.image}: grounding target out of bounds")


@dataclass(slots=True)
class SubsetUnit:
    name: str
    task: str
    records: list
    weight: float

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise DataEngineError(f"subset {self.name}: negative weight")


@dataclass(slots=True)
class AugmentationPolicy:
    prompt_pools: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_PROMPT_POOLS.items()})
    json_mode_probability: float = 0.5
    json_instruction_suffix: str = JSON_SUFFIX_DEFAULT
    synonyms: dict = field(default_factory=dict)
    synonym_probability: float = 0.1
    typo_table: dict = field(default_factory=dict)
    resize_scale_range: tuple[float, float] = (0.5, 2.0)
    descriptor_tags: tuple[str, ...] = DEFAULT_DESCRIPTOR_TAGS
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("json_mode_probability", "synonym_probability"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise DataEngineError(f"{name} must be in [0, 1], got {v}")
        lo, hi = self.resize_scale_range
        if not (0 < lo <= hi):
            raise DataEngineError(f"bad resize scale range {self.resize_scale_range}")


# --------------------------------------------------------------------- #
# rule-based text cleaning
# --------------------------------------------------------------------- #

def strip_task_descriptors(text: str, tags=DEFAULT_DESCRIPTOR_TAGS,
                           prompt: str | None = None) -> str:
    """Remove bracketed task descriptor tags like "[refer]" from a prompt.

    When the text *started* with a tag and ``prompt`` is given, the prompt is
    injected in its place so the instruction stays natural language.
    Idempotent: a tag-free text is returned unchanged.
    """
    tag_re = re.compile(r"\[\s*(?:" + "|".join(re.escape(t) for t in tags) + r")\s*\]",
                        re.IGNORECASE)
    had_leading = bool(tag_re.match(text.lstrip()))
    stripped = tag_re.sub(" ", text)
    stripped = re.sub(r"[ \t]{2,}", " ", stripped).strip()
    if had_leading and prompt:
        stripped = f"{prompt} {stripped}".strip()
    return stripped


_SPACE_RUN = re.compile(r"[ \t]{2,}")
_SPACE_AROUND_NL = re.compile(r"[ \t]*\n[ \t]*")
_MANY_DOTS = re.compile(r"\.{4,}")
_DOUBLE_DOT = re.compile(r"(?<!\.)\.\.(?!\.)")
_BANGS = re.compile(r"!{2,}")
_QUESTIONS = re.compile(r"\?{2,}")
_COMMAS = re.compile(r",{2,}")


def clean_text(text: str, typo_table: dict | None = None) -> str:
    """Collapse space runs, drop doubled terminal punctuation, fix typos.

    A literal ellipsis "..." is preserved.  Idempotent as long as the typo
    table's outputs are not themselves typo keys.
    """
    out = text.replace("\t", " ")
    out = _SPACE_RUN.sub(" ", out)
    out = _SPACE_AROUND_NL.sub("\n", out)
    out = _MANY_DOTS.sub("...", out)
    out = _DOUBLE_DOT.sub(".", out)
    out = _BANGS.sub("!", out)
    out = _QUESTIONS.sub("?", out)
    out = _COMMAS.sub(",", out)
    for wrong, right in (typo_table or {}).items():
        out = re.sub(rf"\b{re.escape(wrong)}\b", right, out)
    return out.strip()


# --------------------------------------------------------------------- #
# box unification
# --------------------------------------------------------------------- #

def raw_box_to_quad(raw) -> QuadBox:
    """Normalize a tagged raw box ({"kind", "coords"}) to a canonical quad."""
    kind, coords = raw["kind"], raw["coords"]
    if kind == "quad":
        return canonicalize_quad(QuadBox.from_flat(coords))
    if kind == "hbox":
        x1, y1, x2, y2 = coords
        return canonicalize_quad(HBox(x1, y1, x2, y2).to_quad())
    if kind == "obox":
        cx, cy, w, h, angle = coords
        return obox_to_quad(OBox(cx, cy, w, h, angle))
    raise DataEngineError(f"unknown box kind {kind!r}")


def raw_box_to_hbox(raw) -> HBox:
    """Normalize a tagged raw box to its axis-aligned envelope."""
    if raw["kind"] == "hbox":
        x1, y1, x2, y2 = raw["coords"]
        return HBox(x1, y1, x2, y2)
    return hbox_envelope(raw_box_to_quad(raw))


def unify_boxes(record: dict, on_degenerate: str = "drop"):
    """Convert a raw record dict into a DetectionRecord or GroundingRecord.

    Detection targets become canonical quads, grounding targets horizontal
    envelopes.  Degenerate quads are dropped with a warning by default;
    ``on_degenerate="error"`` re-raises (metrics-grade validation).
    """
    geometry = ImageGeometry(record["height"], record["width"])
    if "expression" in record:
        return GroundingRecord(record["image"], geometry, record["expression"],
                               raw_box_to_hbox(record["target"]))
    annotations = []
    for ann in record.get("annotations", []):
        try:
            quad = raw_box_to_quad(ann["box"])
        except ZeroAreaQuad:
            if on_degenerate == "error":
                raise
            logger.warning("%s: dropped degenerate %s annotation",
                           record["image"], ann.get("category"))
            continue
        annotations.append(LabeledDetection(ann["category"], quad))
    return DetectionRecord(record["image"], geometry, tuple(annotations))


# --------------------------------------------------------------------- #
# weighted sampling
# --------------------------------------------------------------------- #

def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed (process-independent, unlike hash())."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class WeightedSampler:
    """Draw records subset-by-subset with probability proportional to weight.

    Draws are with replacement at the subset level; within a subset records
    stream in a seeded shuffled order that reshuffles each pass.  The whole
    sequence is a pure function of (units, seed).  The sampler is one
    logical stream: concurrent consumers must stride it (consumer k of m
    takes draws k, k+m, ...) to preserve global determinism.
    """

    def __init__(self, units, seed: int) -> None:
        self.units = list(units)
        if not self.units or not any(u.weight > 0 for u in self.units):
            raise DataEngineError("at least one subset needs weight > 0")
        self.seed = seed
        self._rng = random.Random(derive_seed(seed, "sampler"))
        self._weights = [u.weight for u in self.units]
        self._streams = [
            _SubsetStream(u, random.Random(derive_seed(seed, f"subset:{u.name}")))
            for u in self.units
        ]
        self._warned_empty: set[str] = set()
        self._draws = 0

    def __iter__(self):
        return self

    def __next__(self):
        while True:
            if not any(w > 0 for w in self._weights):
                raise DataEngineError("all positively weighted subsets are empty")
            (idx,) = self._rng.choices(range(len(self.units)), weights=self._weights)
            unit = self.units[idx]
            if not unit.records:
                if unit.name not in self._warned_empty:
                    logger.warning("subset %s is empty; redrawing", unit.name)
                    self._warned_empty.add(unit.name)
                self._weights[idx] = 0.0
                continue
            record_index, record = self._streams[idx].next()
            provenance = {
                "subset": unit.name,
                "task": unit.task,
                "record_index": record_index,
                "draw": self._draws,
            }
            self._draws += 1
            return record, provenance


class _SubsetStream:
    def __init__(self, unit: SubsetUnit, rng: random.Random) -> None:
        self._unit = unit
        self._rng = rng
        self._order: list[int] = []
        self._cursor = 0

    def next(self):
        if self._cursor >= len(self._order):
            self._order = list(range(len(self._unit.records)))
            self._rng.shuffle(self._order)
            self._cursor = 0
        idx = self._order[self._cursor]
        self._cursor += 1
        return idx, self._unit.records[idx]


# --------------------------------------------------------------------- #
# augmentation pipeline
# --------------------------------------------------------------------- #

_NUMERIC = re.compile(r"^\d+(\.\d+)?$")
_WORD = re.compile(r"[A-Za-z][A-Za-z'-]*")


def _replace_synonyms(text: str, policy: AugmentationPolicy, rng: random.Random,
                      protected: set[str]) -> str:
    if not policy.synonyms or policy.synonym_probability == 0:
        return text

    def repl(m: re.Match) -> str:
        word = m.group()
        low = word.lower()
        if low in protected or _NUMERIC.match(word) or word in ("A", "B", "C", "D"):
            return word
        options = policy.synonyms.get(low)
        if not options or rng.random() >= policy.synonym_probability:
            return word
        choice = rng.choice(list(options))
        if word[0].isupper():
            choice = choice[0].upper() + choice[1:]
        return choice

    return _WORD.sub(repl, text)


def _clamped_scale(g: ImageGeometry, policy: AugmentationPolicy, p: PatchSpec,
                   rng: random.Random) -> float:
    s = rng.uniform(*policy.resize_scale_range)
    area = g.pixels
    s_min = math.sqrt(p.min_pixels / area)
    s_max = math.sqrt(p.max_pixels / area)
    s = min(max(s, s_min), s_max)
    # never collapse a dimension
    return max(s, 1.0 / min(g.height, g.width))


def augment(record, policy: AugmentationPolicy, patch_spec: PatchSpec,
            rng: random.Random, task: str | None = None, record_id: str | None = None) -> dict:
    """Render one record into a JSON-ready training sample.

    Pipeline: prompt draw, plain/JSON answer mode, synonym replacement on the
    user text (never touching category names, coordinates, or option
    letters), synchronized random resize, and model-space coordinate
    rendering.
    """
    if isinstance(record, DetectionRecord):
        return _augment_detection(record, policy, patch_spec, rng, record_id)
    if isinstance(record, GroundingRecord):
        return _augment_grounding(record, policy, patch_spec, rng, record_id)
    if isinstance(record, ConversationRecord):
        return _augment_conversation(record, policy, patch_spec, rng, task)
    raise DataEngineError(f"cannot augment record of type {type(record).__name__}")


def _finish_sample(record_id, task, messages, images, meta) -> dict:
    return {"id": record_id, "task": task,
            "messages": [m.to_dict() for m in messages], "images": images, "meta": meta}


def _scaled_record_plan(g: ImageGeometry, policy, patch_spec, rng):
    s = _clamped_scale(g, policy, patch_spec, rng)
    scaled = ImageGeometry(max(1, round(g.height * s)), max(1, round(g.width * s)))
    plan = smart_resize(scaled, patch_spec)
    # overall native -> model factors, applied to boxes in one step
    sx = scaled.width / g.width * plan.sx
    sy = scaled.height / g.height * plan.sy
    return s, plan, sx, sy


def _image_meta(ref: str, g: ImageGeometry, plan) -> dict:
    return {ref: {"height": plan.target.height, "width": plan.target.width,
                  "source_height": g.height, "source_width": g.width}}


def _augment_detection(record: DetectionRecord, policy, patch_spec, rng, record_id):
    pool = policy.prompt_pools.get("detection") or DEFAULT_PROMPT_POOLS["detection"]
    prompt = rng.choice(pool)
    mode = ResponseMode.JSON if rng.random() < policy.json_mode_probability else ResponseMode.PLAIN
    if mode is ResponseMode.JSON:
        prompt += policy.json_instruction_suffix
    protected = {d.category.lower() for d in record.annotations}
    for cat in protected.copy():
        protected |= set(cat.replace("-", " ").split())
    prompt = _replace_synonyms(prompt, policy, rng, protected)

    s, plan, sx, sy = _scaled_record_plan(record.geometry, policy, patch_spec, rng)
    combined = ResizePlan(record.geometry, plan.target, sx=sx, sy=sy)
    model_dets = [to_model_space(d, combined) for d in record.annotations]
    answer = render_detections(canonical_response_order(model_dets), mode)

    messages = [
        Message("user", (image_part(record.image), text_part(prompt))),
        Message("assistant", (text_part(answer),), trainable=True),
    ]
    meta = {"mode": mode.value, "scale": s}
    return _finish_sample(record_id or record.image, "detection", messages,
                          _image_meta(record.image, record.geometry, plan), meta)


def _augment_grounding(record: GroundingRecord, policy, patch_spec, rng, record_id):
    pool = policy.prompt_pools.get("grounding") or DEFAULT_PROMPT_POOLS["grounding"]
    prompt = rng.choice(pool)
    mode = ResponseMode.JSON if rng.random() < policy.json_mode_probability else ResponseMode.PLAIN
    suffix = policy.json_instruction_suffix if mode is ResponseMode.JSON else ""
    expression = record.expression
    user_text = clean_text(f"{prompt} {expression}{suffix}")
    user_text = _replace_synonyms(user_text, policy, rng, protected=set())

    s, plan, sx, sy = _scaled_record_plan(record.geometry, policy, patch_spec, rng)
    t = record.target
    target = HBox(min(t.x1 * sx, plan.target.width), min(t.y1 * sy, plan.target.height),
                  min(t.x2 * sx, plan.target.width), min(t.y2 * sy, plan.target.height))
    answer = render_hbox(target, mode)

    messages = [
        Message("user", (image_part(record.image), text_part(user_text))),
        Message("assistant", (text_part(answer),), trainable=True),
    ]
    meta = {"mode": mode.value, "scale": s}
    return _finish_sample(record_id or f"{record.image}#{expression[:24]}", "grounding",
                          messages, _image_meta(record.image, record.geometry, plan), meta)


def _augment_conversation(record: ConversationRecord, policy, patch_spec, rng, task):
    # free-form conversations carry no machine-readable boxes, so resizing is
    # limited to planning the model-input geometry; text coordinates are the
    # generator's responsibility (see zoom-chain builder)
    messages = []
    for msg in record.messages:
        if msg.role == "user":
            parts = tuple(
                text_part(_replace_synonyms(part["text"], policy, rng, protected=set()))
                if part.get("type") == "text" else part
                for part in msg.content
            )
            messages.append(Message(msg.role, parts, msg.trainable))
        else:
            messages.append(msg)
    images = {}
    for ref, g in record.image_geometries.items():
        plan = smart_resize(g, patch_spec)
        images.update(_image_meta(ref, g, plan))
    return _finish_sample(record.id, task or "conversation", messages, images,
                          {"mode": "plain", "scale": 1.0})

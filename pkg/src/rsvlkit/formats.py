"""File formats: JSON Lines record schemas and COCO-style detection JSON.

Every writer emits sorted keys and newline-terminated lines so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .data_engine import (
    ConversationRecord,
    DetectionRecord,
    GroundingRecord,
    Message,
    unify_boxes,
)
from .geometry import LabeledDetection, QuadBox, ZeroAreaQuad, canonicalize_quad, hbox_envelope
from .metrics import ScoredDetection
from .resolution import ImageGeometry

logger = logging.getLogger(__name__)


class SchemaError(ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def read_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield n, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", line=n) from exc


def write_jsonl(path, rows) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            count += 1
    return count


def _require(obj: dict, keys, line: int) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise SchemaError(f"missing keys {missing}", line=line)


# --------------------------------------------------------------------- #
# detection / grounding / conversation records
# --------------------------------------------------------------------- #

def _normalize_box_field(value) -> dict:
    """Accept {"kind","coords"} dicts, flat 8-lists (quad) or 4-lists (hbox)."""
    if isinstance(value, dict):
        return value
    if isinstance(value, (list, tuple)):
        if len(value) == 8:
            return {"kind": "quad", "coords": list(value)}
        if len(value) == 4:
            return {"kind": "hbox", "coords": list(value)}
        if len(value) == 5:
            return {"kind": "obox", "coords": list(value)}
    raise ValueError(f"unrecognized box payload {value!r}")


def load_detection_records(path, on_degenerate: str = "drop") -> list[DetectionRecord]:
    records = []
    for n, obj in read_jsonl(path):
        _require(obj, ("image", "height", "width"), n)
        try:
            raw = {
                "image": obj["image"],
                "height": obj["height"],
                "width": obj["width"],
                "annotations": [
                    {"category": a["category"], "box": _normalize_box_field(a.get("box", a.get("poly")))}
                    for a in obj.get("annotations", [])
                ],
            }
            records.append(unify_boxes(raw, on_degenerate=on_degenerate))
        except SchemaError:
            raise
        except Exception as exc:
            raise SchemaError(str(exc), line=n) from exc
    return records


def dump_detection_record(rec: DetectionRecord) -> dict:
    return {
        "image": rec.image,
        "height": rec.geometry.height,
        "width": rec.geometry.width,
        "annotations": [
            {"category": d.category, "poly": d.box.flat()} for d in rec.annotations
        ],
    }


def load_grounding_records(path) -> list[GroundingRecord]:
    records = []
    for n, obj in read_jsonl(path):
        _require(obj, ("image", "height", "width", "expression", "target"), n)
        try:
            raw = {
                "image": obj["image"],
                "height": obj["height"],
                "width": obj["width"],
                "expression": obj["expression"],
                "target": _normalize_box_field(obj["target"]),
            }
            records.append(unify_boxes(raw))
        except Exception as exc:
            raise SchemaError(str(exc), line=n) from exc
    return records


def dump_grounding_record(rec: GroundingRecord) -> dict:
    t = rec.target
    return {
        "image": rec.image,
        "height": rec.geometry.height,
        "width": rec.geometry.width,
        "expression": rec.expression,
        "target": [t.x1, t.y1, t.x2, t.y2],
    }


def load_conversation_records(path) -> list[ConversationRecord]:
    records = []
    for n, obj in read_jsonl(path):
        _require(obj, ("id", "messages"), n)
        try:
            messages = [
                Message(m["role"],
                        tuple(m["content"]) if isinstance(m["content"], list)
                        else ({"type": "text", "text": m["content"]},),
                        m.get("trainable", False))
                for m in obj["messages"]
            ]
            geoms = {
                ref: ImageGeometry(entry["height"], entry["width"])
                for ref, entry in obj.get("images", {}).items()
            }
            records.append(ConversationRecord(obj["id"], tuple(messages), geoms))
        except Exception as exc:
            raise SchemaError(str(exc), line=n) from exc
    return records


# --------------------------------------------------------------------- #
# prediction / ground-truth files for evaluation
# --------------------------------------------------------------------- #

def detections_from_entries(entries, scored: bool = False, on_degenerate: str = "keep",
                            where: str = "<memory>"):
    """Detection dicts ({category, poly[, score]}) to LabeledDetections.

    Degenerate polygons are kept by default because a malformed model output
    is still a countable false positive.
    """
    dets = []
    for d in entries:
        if "category" not in d or "poly" not in d or len(d["poly"]) != 8:
            raise SchemaError(f"bad detection entry {d!r}")
        quad = QuadBox.from_flat(d["poly"])
        try:
            quad = canonicalize_quad(quad)
        except ZeroAreaQuad:
            if on_degenerate == "error":
                raise SchemaError(f"degenerate polygon {d['poly']}")
            if on_degenerate == "drop":
                logger.warning("%s: dropped degenerate detection", where)
                continue
        det = LabeledDetection(d["category"], quad)
        if scored:
            if "score" not in d:
                raise SchemaError("scored input requires a 'score' field")
            dets.append(ScoredDetection(det, float(d["score"])))
        else:
            dets.append(det)
    return dets


def load_predictions(path, scored: bool = False, on_degenerate: str = "keep"):
    """Per-image detection lists: {"image_id", "detections": [{category, poly[, score]}]}.

    With ``scored`` each detection needs a confidence value (threshold-sweep
    input).
    """
    by_image: dict[str, list] = {}
    for n, obj in read_jsonl(path):
        _require(obj, ("image_id", "detections"), n)
        try:
            by_image[obj["image_id"]] = detections_from_entries(
                obj["detections"], scored=scored, on_degenerate=on_degenerate,
                where=obj["image_id"])
        except SchemaError as exc:
            raise SchemaError(str(exc), line=n) from exc
    return by_image


def dump_predictions(by_image) -> list[dict]:
    rows = []
    for image_id, dets in by_image.items():
        entry = []
        for det in dets:
            if isinstance(det, ScoredDetection):
                entry.append({"category": det.det.category, "poly": det.det.box.flat(),
                              "score": det.score})
            else:
                entry.append({"category": det.category, "poly": det.box.flat()})
        rows.append({"image_id": image_id, "detections": entry})
    return rows


# --------------------------------------------------------------------- #
# COCO-style detection JSON
# --------------------------------------------------------------------- #

def load_coco_detections(path, on_degenerate: str = "drop") -> list[DetectionRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid COCO JSON: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in blob:
            raise SchemaError(f"COCO file lacks {key!r}")
    cat_names = {c["id"]: c["name"] for c in blob["categories"]}
    anns_by_image: dict = {}
    for ann in blob["annotations"]:
        anns_by_image.setdefault(ann["image_id"], []).append(ann)
    records = []
    for img in blob["images"]:
        raw_anns = []
        for ann in anns_by_image.get(img["id"], []):
            seg = ann.get("segmentation")
            if seg and isinstance(seg, list) and seg and isinstance(seg[0], list) \
                    and len(seg[0]) >= 8:
                box = {"kind": "quad", "coords": seg[0][:8]}
            elif "bbox" in ann:
                x, y, w, h = ann["bbox"]
                box = {"kind": "hbox", "coords": [x, y, x + w, y + h]}
            else:
                raise SchemaError(f"annotation {ann.get('id')} has no usable geometry")
            raw_anns.append({"category": cat_names[ann["category_id"]], "box": box})
        raw = {"image": img["file_name"], "height": img["height"], "width": img["width"],
               "annotations": raw_anns}
        records.append(unify_boxes(raw, on_degenerate=on_degenerate))
    return records


def dump_coco_detections(records) -> dict:
    categories = sorted({d.category for r in records for d in r.annotations})
    cat_ids = {name: i + 1 for i, name in enumerate(categories)}
    images, annotations = [], []
    ann_id = 1
    for i, rec in enumerate(records, 1):
        images.append({"id": i, "file_name": rec.image,
                       "height": rec.geometry.height, "width": rec.geometry.width})
        for det in rec.annotations:
            flat = det.box.flat()
            env = hbox_envelope(det.box)
            annotations.append({
                "id": ann_id,
                "image_id": i,
                "category_id": cat_ids[det.category],
                "segmentation": [flat],
                "bbox": [env.x1, env.y1, env.width, env.height],
                "area": env.width * env.height,
                "iscrowd": 0,
            })
            ann_id += 1
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": cat_ids[n], "name": n} for n in categories],
    }


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")

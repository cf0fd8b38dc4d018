"""Scripting bindings for training loops: the weighted sampler as a plain
iterable and the metric entry points as dict-in / dict-out calls.

Nothing here reimplements toolkit logic; every call goes straight through
the rsvlkit code paths the CLI uses, so results are bit-identical to the
``rsvlkit`` command on the same inputs.  Records cross the boundary as
JSON-isomorphic mappings and lists.
"""

from __future__ import annotations

from pathlib import Path

from rsvlkit.cli import generate_samples
from rsvlkit.config import RunConfig, load_config, parse_config
from rsvlkit.formats import detections_from_entries
from rsvlkit.geometry import HBox
from rsvlkit.metrics import ApNcProtocol, ap_nc, classification_accuracy, grounding_accuracy
from rsvlkit.response_codec import MalformedBox, parse_hbox

__version__ = "0.1.0"
__all__ = ["BoundSampler", "make_sampler", "evaluate_detections",
           "evaluate_grounding", "evaluate_vqa"]


class BoundSampler:
    """Iterator over training samples, identical to the CLI ``sample`` stream.

    One consumer per sampler; create several with distinct seeds to feed
    parallel loaders.
    """

    def __init__(self, cfg: RunConfig, seed: int, base_dir) -> None:
        self.seed = seed
        self._stream = generate_samples(cfg, seed, n=None, base_dir=base_dir)

    def __iter__(self):
        return self

    def __next__(self) -> dict:
        return next(self._stream)

    def take(self, n: int) -> list[dict]:
        return [next(self._stream) for _ in range(n)]


def make_sampler(config, seed: int | None = None, base_dir=None) -> BoundSampler:
    """Build a sampler from a config path or a config mapping.

    The iteration order matches ``rsvlkit sample`` for equal config/seed.
    ``seed`` overrides the config's seed and is required when the config
    does not set one.
    """
    if isinstance(config, (str, Path)):
        cfg = load_config(config)
        if base_dir is None:
            base_dir = Path(config).parent
    else:
        cfg = parse_config(dict(config))
        if base_dir is None:
            base_dir = Path(".")
    if seed is None:
        seed = cfg.seed
    if seed is None:
        raise ValueError("sampling needs a seed: pass seed= or set it in the config")
    return BoundSampler(cfg, int(seed), base_dir)


def _protocol_from_dict(protocol) -> ApNcProtocol:
    if protocol is None:
        return ApNcProtocol()
    if isinstance(protocol, ApNcProtocol):
        return protocol
    kwargs = dict(protocol)
    if "iou_thresholds" in kwargs:
        kwargs["iou_thresholds"] = tuple(kwargs["iou_thresholds"])
    return ApNcProtocol(**kwargs)


def evaluate_detections(preds, gts, protocol=None, jobs: int = 1) -> dict:
    """Confidence-free detection evaluation on plain mappings.

    ``preds`` / ``gts`` map image id to lists of ``{"category", "poly"}``
    dicts; ``protocol`` is an ApNcProtocol-shaped mapping.  Returns the
    EvalReport as a plain dict, bit-identical to the CLI's JSON report.
    """
    preds_by_image = {img: detections_from_entries(entries, where=img)
                      for img, entries in preds.items()}
    gts_by_image = {img: detections_from_entries(entries, on_degenerate="error", where=img)
                    for img, entries in gts.items()}
    report = ap_nc(preds_by_image, gts_by_image, _protocol_from_dict(protocol), jobs=jobs)
    return report.to_dict()


def evaluate_grounding(preds, gts) -> dict:
    """Acc@0.5 on plain lists.

    Each prediction may be a 4-list, a raw response string (parsed with the
    toolkit grammar), or None; ground truths are 4-lists.
    """
    gt_boxes = [HBox(*box) for box in gts]
    pred_boxes = []
    for pred in preds:
        box = None
        if isinstance(pred, (list, tuple)) and len(pred) == 4:
            try:
                box = HBox(*pred)
            except Exception:
                box = None
        elif isinstance(pred, str):
            try:
                box = parse_hbox(pred)
            except MalformedBox:
                box = None
        pred_boxes.append(box)
    acc = grounding_accuracy(pred_boxes, gt_boxes)
    return {"acc_at_0.5": acc, "total": len(gt_boxes),
            "unparseable": sum(1 for b in pred_boxes if b is None)}


def evaluate_vqa(preds, gts, aliases=None) -> dict:
    """Normalized answer accuracy (also used for scene classification)."""
    alias_map = {k: set(v) for k, v in aliases.items()} if aliases else None
    acc = classification_accuracy(list(preds), list(gts), alias_map)
    return {"accuracy": acc, "total": len(list(gts))}

"""Confidence-free detection evaluation plus the task accuracy metrics.

Detection AP is computed with injected scores instead of detector
confidences: a configurable number of seeded uniform-random trials plus one
constant-score trial whose evaluation order is the stable input order.  The
report carries mean and std across the random trials so metric stability is
visible, and everything is deterministic given (inputs, seed, protocol).
"""

from __future__ import annotations

import json
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .geometry import CategorySet, LabeledDetection, hbox_iou, iou_or_zero

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
SWEEP_GRID = tuple(round(0.05 * i, 2) for i in range(20))


class MetricsError(ValueError):
    pass


class LengthMismatch(MetricsError):
    pass


class CategoryMismatch(MetricsError):
    pass


@dataclass(frozen=True, slots=True)
class ScoredDetection:
    det: LabeledDetection
    score: float


@dataclass(frozen=True, slots=True)
class ApNcProtocol:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    trials_random: int = 10
    include_constant_trial: bool = True
    seed: int = 0
    interpolation: str = "voc07_11point"  # or "all_points"

    def __post_init__(self) -> None:
        if not self.iou_thresholds or not all(0 < t <= 1 for t in self.iou_thresholds):
            raise MetricsError(f"iou thresholds must lie in (0, 1]: {self.iou_thresholds}")
        if self.trials_random < 0:
            raise MetricsError("trials_random must be >= 0")
        if self.trials_random == 0 and not self.include_constant_trial:
            raise MetricsError("protocol needs at least one trial")
        if self.interpolation not in ("voc07_11point", "all_points"):
            raise MetricsError(f"unknown interpolation {self.interpolation!r}")

    def trial_seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.trials_random)]


def match_detections(preds, gts, iou_thr: float):
    """Greedy PASCAL-style matching in the given prediction order.

    Each prediction takes the unmatched same-category ground truth of maximal
    IoU when that IoU reaches ``iou_thr``.  Returns (tp_flags, matched) where
    ``matched`` maps prediction index to ground-truth index.
    """
    flags: list[bool] = []
    matched: dict[int, int] = {}
    taken = [False] * len(gts)
    for i, pred in enumerate(preds):
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j] or gt.category != pred.category:
                continue
            iou = iou_or_zero(pred.box, gt.box)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_thr:
            flags.append(True)
            matched[i] = best_j
            taken[best_j] = True
        else:
            flags.append(False)
    return flags, matched


def average_precision(flags, n_gt: int, interpolation: str = "voc07_11point") -> float:
    """AP of a TP/FP flag sequence already in evaluation order."""
    if n_gt < 0:
        raise MetricsError("n_gt must be >= 0")
    if n_gt == 0:
        return 0.0
    tp = fp = 0
    precisions: list[float] = []
    recalls: list[float] = []
    for f in flags:
        if f:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    if interpolation == "voc07_11point":
        total = 0.0
        for i in range(11):
            level = i / 10
            best = 0.0
            for p, r in zip(precisions, recalls):
                if r >= level and p > best:
                    best = p
            total += best
        return total / 11
    # all_points: precision envelope over the recall axis
    mrec = [0.0] + recalls + [1.0]
    mpre = [0.0] + precisions + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        if mrec[i] != mrec[i - 1]:
            ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return ap


def _threshold_key(t: float) -> str:
    return f"ap{round(t * 100):d}"


@dataclass(slots=True)
class EvalReport:
    protocol: dict
    per_class: dict
    aggregates: dict
    skipped_classes: list[str]
    counts: dict

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "per_class": self.per_class,
            "aggregates": self.aggregates,
            "skipped_classes": self.skipped_classes,
            "counts": self.counts,
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def per_class_csv(self) -> str:
        keys = sorted({k for stats in self.per_class.values() for k in stats})
        lines = ["class," + ",".join(keys)]
        for cls in sorted(self.per_class):
            row = [cls] + [f"{self.per_class[cls][k]['mean']:.6f}" for k in keys]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


class _ClassEval:
    """Cached per-class evaluation state: IoU rows and GT bookkeeping."""

    __slots__ = ("n_gt", "preds", "iou_rows", "gt_image_offsets")

    def __init__(self) -> None:
        self.n_gt = 0
        self.preds: list[int] = []      # global pred ids
        self.iou_rows: list[tuple[int, list[float]]] = []  # (image gt base, ious)
        self.gt_image_offsets: dict[str, int] = {}


def _stats(values: list[float]) -> dict:
    mean = statistics.fmean(values) if values else 0.0
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return {"mean": mean, "std": std}


def ap_nc(preds_by_image, gts_by_image, protocol: ApNcProtocol | None = None,
          categories: CategorySet | None = None, strict_categories: bool = False,
          jobs: int = 1) -> EvalReport:
    """Average precision with injected confidence scores.

    ``preds_by_image`` / ``gts_by_image`` map image id to LabeledDetection
    lists.  Runs ``trials_random`` seeded uniform-score evaluations plus one
    constant-score evaluation (stable input order); reports per-class and
    aggregate AP at every IoU threshold with mean/std across random trials.
    """
    protocol = protocol or ApNcProtocol()
    images = list(preds_by_image)
    for img in gts_by_image:
        if img not in preds_by_image:
            images.append(img)

    class_names = set()
    for img in images:
        for det in gts_by_image.get(img, []):
            class_names.add(det.category)
        for det in preds_by_image.get(img, []):
            if categories is not None and det.category not in categories:
                if strict_categories:
                    raise CategoryMismatch(
                        f"prediction category {det.category!r} not in category set")
            class_names.add(det.category)
    if categories is not None:
        class_names |= set(categories.names)
    classes = sorted(class_names)

    # global pred stream in input order; scores are drawn in this order
    stream: list[tuple[str, int, LabeledDetection]] = []
    for img in images:
        for local_i, det in enumerate(preds_by_image.get(img, [])):
            stream.append((img, local_i, det))

    def image_ious(img: str) -> list[list[float]]:
        gts = gts_by_image.get(img, [])
        return [
            [iou_or_zero(pred.box, gt.box) if gt.category == pred.category else 0.0
             for gt in gts]
            for pred in preds_by_image.get(img, [])
        ]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            iou_cache = dict(zip(images, pool.map(image_ious, images)))
    else:
        iou_cache = {img: image_ious(img) for img in images}

    gt_class_index: dict[str, dict[str, list[int]]] = {}
    n_gt: dict[str, int] = {c: 0 for c in classes}
    for img in images:
        per_img: dict[str, list[int]] = {}
        for j, gt in enumerate(gts_by_image.get(img, [])):
            per_img.setdefault(gt.category, []).append(j)
            n_gt[gt.category] += 1
        gt_class_index[img] = per_img

    pred_ids_by_class: dict[str, list[int]] = {c: [] for c in classes}
    for gid, (img, local_i, det) in enumerate(stream):
        pred_ids_by_class.setdefault(det.category, []).append(gid)

    skipped = [c for c in classes
               if n_gt[c] == 0 and not pred_ids_by_class.get(c)]
    evaluable = [c for c in classes if c not in skipped]

    def evaluate_order(order: list[int]) -> dict[str, dict[float, float]]:
        """order: global pred ids sorted for this trial; returns class->thr->AP."""
        out: dict[str, dict[float, float]] = {}
        for cls in evaluable:
            ids = [g for g in order if stream[g][2].category == cls]
            out[cls] = {}
            for thr in protocol.iou_thresholds:
                taken: dict[str, set[int]] = {}
                flags: list[bool] = []
                for gid in ids:
                    img, local_i, det = stream[gid]
                    row = iou_cache[img][local_i]
                    used = taken.setdefault(img, set())
                    best_iou, best_j = 0.0, -1
                    for j in gt_class_index[img].get(cls, []):
                        if j in used:
                            continue
                        if row[j] > best_iou:
                            best_iou, best_j = row[j], j
                    if best_j >= 0 and best_iou >= thr:
                        flags.append(True)
                        used.add(best_j)
                    else:
                        flags.append(False)
                out[cls][thr] = average_precision(flags, n_gt[cls], protocol.interpolation)
        return out

    def trial_order_random(seed: int) -> list[int]:
        rng = random.Random(seed)
        scores = [rng.random() for _ in stream]
        return sorted(range(len(stream)), key=lambda g: -scores[g])

    trial_results = [evaluate_order(trial_order_random(s)) for s in protocol.trial_seeds()]
    constant_result = None
    if protocol.include_constant_trial:
        constant_result = evaluate_order(list(range(len(stream))))

    def aggregate(result: dict[str, dict[float, float]], thr: float) -> float:
        return statistics.fmean(result[c][thr] for c in evaluable) if evaluable else 0.0

    def aggregate_all(result) -> float:
        if not evaluable:
            return 0.0
        return statistics.fmean(
            statistics.fmean(result[c][t] for t in protocol.iou_thresholds)
            for c in evaluable)

    aggregates: dict[str, dict] = {}
    named = []
    if 0.5 in protocol.iou_thresholds:
        named.append(("ap_nc50", lambda r: aggregate(r, 0.5)))
    if 0.75 in protocol.iou_thresholds:
        named.append(("ap_nc75", lambda r: aggregate(r, 0.75)))
    named.append(("ap_nc50_95", aggregate_all))
    for key, fn in named:
        trials = [fn(r) for r in trial_results]
        entry = _stats(trials)
        entry["trials"] = trials
        entry["constant"] = fn(constant_result) if constant_result is not None else None
        if not trials and constant_result is not None:
            entry["mean"] = entry["constant"]
        aggregates[key] = entry

    per_class: dict[str, dict] = {}
    for cls in evaluable:
        stats_for_cls: dict[str, dict] = {}
        for thr in protocol.iou_thresholds:
            vals = [r[cls][thr] for r in trial_results]
            entry = _stats(vals)
            entry["constant"] = constant_result[cls][thr] if constant_result is not None else None
            if not vals and constant_result is not None:
                entry["mean"] = entry["constant"]
            stats_for_cls[_threshold_key(thr)] = entry
        mean_vals = [statistics.fmean(r[cls][t] for t in protocol.iou_thresholds)
                     for r in trial_results]
        entry = _stats(mean_vals)
        entry["constant"] = (statistics.fmean(
            constant_result[cls][t] for t in protocol.iou_thresholds)
            if constant_result is not None else None)
        if not mean_vals and constant_result is not None:
            entry["mean"] = entry["constant"]
        stats_for_cls["ap50_95"] = entry
        per_class[cls] = stats_for_cls

    protocol_echo = {
        "iou_thresholds": list(protocol.iou_thresholds),
        "trials_random": protocol.trials_random,
        "include_constant_trial": protocol.include_constant_trial,
        "seed": protocol.seed,
        "trial_seeds": protocol.trial_seeds(),
        "interpolation": protocol.interpolation,
    }
    counts = {
        "images": len(images),
        "predictions": len(stream),
        "ground_truths": sum(n_gt.values()),
    }
    return EvalReport(protocol_echo, per_class, aggregates, skipped, counts)


@dataclass(slots=True)
class SweepResult:
    best_threshold: float
    curve: list[tuple[float, float]]
    objective: str

    def to_dict(self) -> dict:
        return {
            "best_threshold": self.best_threshold,
            "curve": [{"threshold": t, "value": v} for t, v in self.curve],
            "objective": self.objective,
        }


def threshold_sweep(scored_preds_by_image, gts_by_image,
                    protocol: ApNcProtocol | None = None,
                    objective: str = "ap_nc50", jobs: int = 1) -> SweepResult:
    """Scan confidence cutoffs 0.00..0.95 and pick the AP_nc-maximizing one.

    At each grid threshold, predictions scoring below it are dropped and the
    survivors are re-evaluated score-free.  Ties resolve to the smaller
    threshold.
    """
    protocol = protocol or ApNcProtocol()
    curve: list[tuple[float, float]] = []
    best_t, best_v = SWEEP_GRID[0], float("-inf")
    for t in SWEEP_GRID:
        filtered = {
            img: [sd.det for sd in dets if sd.score >= t]
            for img, dets in scored_preds_by_image.items()
        }
        report = ap_nc(filtered, gts_by_image, protocol, jobs=jobs)
        value = report.aggregates[objective]["mean"]
        curve.append((t, value))
        if value > best_v:
            best_t, best_v = t, value
    return SweepResult(best_t, curve, objective)


@dataclass(slots=True)
class F1Report:
    mean_f1: float
    per_class: dict
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mean_f1": self.mean_f1, "per_class": self.per_class, "flags": self.flags}


def mean_f1(preds_by_image, gts_by_image, iou_thr: float = 0.5) -> F1Report:
    """Score-free mean F1: match in input order, pool per class across images."""
    images = list(preds_by_image)
    for img in gts_by_image:
        if img not in preds_by_image:
            images.append(img)
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    n_gt: dict[str, int] = {}
    for img in images:
        preds = preds_by_image.get(img, [])
        gts = gts_by_image.get(img, [])
        for gt in gts:
            n_gt[gt.category] = n_gt.get(gt.category, 0) + 1
        flags, _ = match_detections(preds, gts, iou_thr)
        for pred, hit in zip(preds, flags):
            bucket = tp if hit else fp
            bucket[pred.category] = bucket.get(pred.category, 0) + 1
    classes = sorted(set(n_gt) | set(tp) | set(fp))
    if not classes:
        return F1Report(0.0, {}, flags=["no classes evaluable"])
    per_class = {}
    for cls in classes:
        t, f, n = tp.get(cls, 0), fp.get(cls, 0), n_gt.get(cls, 0)
        precision = t / (t + f) if t + f else 0.0
        recall = t / n if n else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[cls] = {"precision": precision, "recall": recall, "f1": f1,
                          "tp": t, "fp": f, "n_gt": n}
    value = statistics.fmean(per_class[c]["f1"] for c in classes)
    return F1Report(value, per_class)


def grounding_accuracy(pred_boxes, gt_boxes) -> float:
    """Acc@0.5: fraction of predictions with IoU strictly above 0.5.

    ``None`` entries (unparseable model output) count as failures.
    """
    if len(pred_boxes) != len(gt_boxes):
        raise LengthMismatch(f"{len(pred_boxes)} predictions vs {len(gt_boxes)} ground truths")
    if not gt_boxes:
        return 0.0
    hits = 0
    for pred, gt in zip(pred_boxes, gt_boxes):
        if pred is None:
            continue
        if hbox_iou(pred, gt) > 0.5:
            hits += 1
    return hits / len(gt_boxes)


def normalize_answer(text: str) -> str:
    return " ".join(text.split()).casefold()


def classification_accuracy(preds, gts, aliases=None) -> float:
    """Normalized exact-or-alias match rate; also the VQA accuracy."""
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} labels")
    if not gts:
        return 0.0
    alias_norm: dict[str, set[str]] = {}
    for label, names in (aliases or {}).items():
        alias_norm[normalize_answer(label)] = {normalize_answer(n) for n in names}
    hits = 0
    for pred, gt in zip(preds, gts):
        p, g = normalize_answer(pred), normalize_answer(gt)
        if p == g or p in alias_norm.get(g, ()):
            hits += 1
    return hits / len(gts)


def lrsvqa_average_accuracy(records, expected_cells=None) -> dict:
    """Per-source average accuracy over tasks, then the unweighted overall mean.

    ``records`` holds (source, task, correct) triples.  ``expected_cells``
    may list (source, task) pairs; expected cells with no records are warned
    about and ignored.
    """
    import logging

    cells: dict[tuple[str, str], list[bool]] = {}
    for source, task, correct in records:
        cells.setdefault((source, task), []).append(bool(correct))
    if expected_cells:
        for cell in expected_cells:
            if tuple(cell) not in cells:
                logging.getLogger(__name__).warning("empty (source, task) cell %r ignored", cell)
    per_source: dict[str, dict] = {}
    for (source, task), vals in sorted(cells.items()):
        acc = sum(vals) / len(vals)
        per_source.setdefault(source, {"tasks": {}})["tasks"][task] = acc
    for source, entry in per_source.items():
        entry["aa"] = statistics.fmean(entry["tasks"].values())
    overall = statistics.fmean(e["aa"] for e in per_source.values()) if per_source else 0.0
    return {"per_source": per_source, "overall": overall}

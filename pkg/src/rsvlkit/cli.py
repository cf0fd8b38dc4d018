"""Command-line front end: convert, sample, eval, tile, zoomgen.

Every subcommand is deterministic under fixed (inputs, config, seed) and
writes a ``<output>.manifest.json`` echoing the config hash and seed.  Exit
codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import formats
from .config import ConfigError, RunConfig, load_config
from .data_engine import (
    DataEngineError,
    SubsetUnit,
    WeightedSampler,
    augment,
    clean_text,
    derive_seed,
    strip_task_descriptors,
)
from .geometry import GeometryError, HBox, LabeledDetection, QuadBox
from .metrics import (
    ApNcProtocol,
    MetricsError,
    ap_nc,
    classification_accuracy,
    grounding_accuracy,
    lrsvqa_average_accuracy,
    mean_f1,
    normalize_answer,
    threshold_sweep,
)
from .resolution import ResolutionError
from .response_codec import CodecError, MalformedBox, parse_hbox
from .tiling import TileWindow, TilingSpec, clip_annotations, merge_windows, windows_manifest
from .zoomchain import (
    ValidationError,
    ZoomChainError,
    build_zoom_conversation,
    convert_to_mcq,
    count_distractors,
    evidence_roi,
    gen_comparison_qa,
    gen_counting_qa,
    ingest_external_qa,
    record_seed,
    zoom_sample_from_region,
    ZoomSample,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_DATA_ERRORS = (formats.SchemaError, ConfigError, DataEngineError, ZoomChainError,
                MetricsError, GeometryError, ResolutionError, CodecError,
                FileNotFoundError, ValidationError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_manifest(output: str, command: str, cfg: RunConfig | None, seed, extra: dict) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": cfg.config_hash() if cfg else None,
        "config": cfg.raw if cfg else None,
    }
    manifest.update(extra)
    formats.write_json(str(output) + ".manifest.json", manifest)


def _load_cfg(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _resolve_seed(args, cfg: RunConfig) -> int:
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None:
        raise UsageError("this command draws random numbers; pass --seed "
                         "(or set seed in the config)")
    return int(seed)


# --------------------------------------------------------------------- #
# convert
# --------------------------------------------------------------------- #

def cmd_convert(args) -> int:
    cfg = _load_cfg(args)
    pairs = {
        ("coco", "detection"): _convert_coco_to_detection,
        ("detection", "coco"): _convert_detection_to_coco,
        ("detection", "detection"): _convert_detection_to_detection,
        ("grounding", "grounding"): _convert_grounding,
        ("conversation", "conversation"): _convert_conversation,
    }
    key = (args.in_format, args.out_format)
    if key not in pairs:
        raise UsageError(f"unsupported conversion {args.in_format} -> {args.out_format}")
    try:
        count = pairs[key](args, cfg)
    except formats.SchemaError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    _write_manifest(args.output, "convert", cfg, args.seed,
                    {"input": args.input, "records": count,
                     "in_format": args.in_format, "out_format": args.out_format})
    return EXIT_OK


def _convert_coco_to_detection(args, cfg) -> int:
    records = formats.load_coco_detections(args.input,
                                           on_degenerate="error" if args.strict else "drop")
    return formats.write_jsonl(args.output, (formats.dump_detection_record(r) for r in records))


def _convert_detection_to_coco(args, cfg) -> int:
    records = formats.load_detection_records(args.input,
                                             on_degenerate="error" if args.strict else "drop")
    formats.write_json(args.output, formats.dump_coco_detections(records))
    return len(records)


def _convert_detection_to_detection(args, cfg) -> int:
    records = formats.load_detection_records(args.input,
                                             on_degenerate="error" if args.strict else "drop")
    return formats.write_jsonl(args.output, (formats.dump_detection_record(r) for r in records))


def _convert_grounding(args, cfg) -> int:
    records = formats.load_grounding_records(args.input)
    return formats.write_jsonl(args.output, (formats.dump_grounding_record(r) for r in records))


def _convert_conversation(args, cfg) -> int:
    records = formats.load_conversation_records(args.input)
    rows = []
    policy = cfg.policy
    rng = random.Random(derive_seed(args.seed, "convert")) if args.seed is not None else None
    for rec in records:
        row = rec.to_dict()
        if args.strip_descriptors or args.clean:
            for msg in row["messages"]:
                for part in msg["content"]:
                    if part.get("type") != "text":
                        continue
                    text = part["text"]
                    if args.strip_descriptors and msg["role"] == "user":
                        pool = policy.prompt_pools.get("grounding", [])
                        prompt = rng.choice(pool) if (rng and pool) else (pool[0] if pool else None)
                        text = strip_task_descriptors(text, policy.descriptor_tags, prompt)
                    if args.clean:
                        text = clean_text(text, policy.typo_table)
                    part["text"] = text
        rows.append(row)
    return formats.write_jsonl(args.output, rows)


# --------------------------------------------------------------------- #
# sample
# --------------------------------------------------------------------- #

_LOADERS = {
    "detection": formats.load_detection_records,
    "grounding": formats.load_grounding_records,
    "conversation": formats.load_conversation_records,
    "coco": formats.load_coco_detections,
}


def build_sampler(cfg: RunConfig, seed: int, base_dir: str | Path = ".") -> WeightedSampler:
    if not cfg.subsets:
        raise ConfigError("config declares no subsets")
    units = []
    for decl in cfg.subsets:
        if decl.format not in _LOADERS:
            raise ConfigError(f"subset {decl.name}: unknown format {decl.format!r}")
        path = Path(decl.path)
        if not path.is_absolute():
            path = Path(base_dir) / path
        records = _LOADERS[decl.format](path)
        units.append(SubsetUnit(decl.name, decl.task, records, decl.weight))
    return WeightedSampler(units, seed)


def generate_samples(cfg: RunConfig, seed: int, n: int | None, base_dir: str | Path = "."):
    """The sample stream shared by the CLI and the scripting bindings.

    ``n=None`` streams forever; the i-th yielded sample is identical across
    consumers for equal (config, seed).
    """
    import itertools

    sampler = build_sampler(cfg, seed, base_dir)
    for i in itertools.count() if n is None else range(n):
        record, provenance = next(sampler)
        rng = random.Random(derive_seed(seed, f"augment:{i}"))
        sample = augment(record, cfg.policy, cfg.patch_spec, rng,
                         task=provenance["task"])
        sample["provenance"] = provenance
        yield sample


def cmd_sample(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg)
    base_dir = Path(args.config).parent if args.config else Path(".")
    histogram: dict[str, int] = {}

    def stream():
        for sample in generate_samples(cfg, seed, args.n, base_dir):
            histogram[sample["provenance"]["subset"]] = \
                histogram.get(sample["provenance"]["subset"], 0) + 1
            yield sample

    count = formats.write_jsonl(args.output, stream())
    _write_manifest(args.output, "sample", cfg, seed,
                    {"samples": count, "subset_histogram": histogram, "jobs": args.jobs})
    return EXIT_OK


# --------------------------------------------------------------------- #
# eval
# --------------------------------------------------------------------- #

def _protocol_from_args(args, cfg: RunConfig) -> ApNcProtocol:
    protocol = cfg.protocol
    overrides = {}
    if args.iou_thresholds:
        overrides["iou_thresholds"] = tuple(float(t) for t in args.iou_thresholds.split(","))
    if args.trials is not None:
        overrides["trials_random"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.interpolation:
        overrides["interpolation"] = args.interpolation
    if not overrides:
        return protocol
    return ApNcProtocol(
        iou_thresholds=overrides.get("iou_thresholds", protocol.iou_thresholds),
        trials_random=overrides.get("trials_random", protocol.trials_random),
        include_constant_trial=protocol.include_constant_trial,
        seed=overrides.get("seed", protocol.seed),
        interpolation=overrides.get("interpolation", protocol.interpolation),
    )


def _emit_report(args, payload: dict, cfg: RunConfig, seed) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
        _write_manifest(args.output, f"eval {args.kind}", cfg, seed,
                        {"preds": args.preds, "gts": args.gts, "jobs": args.jobs})
    else:
        print(text)


def _eval_detection(args, cfg: RunConfig) -> dict:
    protocol = _protocol_from_args(args, cfg)
    if args.gts_format == "coco":
        records = formats.load_coco_detections(args.gts, on_degenerate="error")
        gts = {rec.image: list(rec.annotations) for rec in records}
    else:
        # ground truth is curated input: degenerate boxes are a data error,
        # while degenerate *predictions* stay in as guaranteed false positives
        gts = formats.load_predictions(args.gts, scored=False, on_degenerate="error")
    if args.sweep:
        preds = formats.load_predictions(args.preds, scored=True)
        result = threshold_sweep(preds, gts, protocol, jobs=args.jobs)
        return result.to_dict()
    preds = formats.load_predictions(args.preds, scored=False)
    report = ap_nc(preds, gts, protocol, jobs=args.jobs)
    payload = report.to_dict()
    if args.mf1:
        payload["mean_f1"] = mean_f1(preds, gts, iou_thr=args.mf1_iou).to_dict()
    if args.csv:
        Path(args.csv).write_text(report.per_class_csv(), encoding="utf-8")
    return payload


def _eval_grounding(args, cfg: RunConfig) -> dict:
    gt_rows = list(formats.read_jsonl(args.gts))
    pred_rows = {obj["id"]: obj for _, obj in formats.read_jsonl(args.preds)}
    gt_boxes, pred_boxes = [], []
    unparseable = 0
    for n, obj in gt_rows:
        if "id" not in obj or "box" not in obj:
            raise formats.SchemaError("grounding gt line needs id and box", line=n)
        x1, y1, x2, y2 = obj["box"]
        gt_boxes.append(HBox(x1, y1, x2, y2))
        pred = pred_rows.get(obj["id"])
        box = None
        if pred is not None:
            if "box" in pred:
                try:
                    bx1, by1, bx2, by2 = pred["box"]
                    box = HBox(bx1, by1, bx2, by2)
                except Exception:
                    box = None
            elif "response" in pred:
                try:
                    box = parse_hbox(pred["response"])
                except MalformedBox:
                    box = None
        if box is None:
            unparseable += 1
        pred_boxes.append(box)
    acc = grounding_accuracy(pred_boxes, gt_boxes)
    return {"kind": "grounding", "acc_at_0.5": acc, "total": len(gt_boxes),
            "unparseable": unparseable}


def _load_aliases(path):
    if not path:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return {k: set(v) for k, v in json.load(fh).items()}


def _eval_classification(args, cfg: RunConfig, kind: str) -> dict:
    gt_rows = list(formats.read_jsonl(args.gts))
    pred_rows = {obj["id"]: obj.get("response", "") for _, obj in formats.read_jsonl(args.preds)}
    gts = [obj["answer"] for _, obj in gt_rows]
    preds = [pred_rows.get(obj["id"], "") for _, obj in gt_rows]
    acc = classification_accuracy(preds, gts, _load_aliases(args.aliases))
    return {"kind": kind, "accuracy": acc, "total": len(gts)}


def _eval_lrsvqa(args, cfg: RunConfig) -> dict:
    records = []
    for n, obj in formats.read_jsonl(args.preds):
        for key in ("source", "task"):
            if key not in obj:
                raise formats.SchemaError(f"lrsvqa line needs {key!r}", line=n)
        if "correct" in obj:
            correct = bool(obj["correct"])
        else:
            correct = normalize_answer(obj.get("response", "")) == \
                normalize_answer(obj.get("answer", ""))
        records.append((obj["source"], obj["task"], correct))
    report = lrsvqa_average_accuracy(records)
    report["kind"] = "lrsvqa"
    return report


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    if args.kind != "lrsvqa" and not args.gts:
        raise UsageError(f"eval {args.kind} needs --gts")
    if args.kind == "detection":
        payload = _eval_detection(args, cfg)
    elif args.kind == "grounding":
        payload = _eval_grounding(args, cfg)
    elif args.kind in ("classification", "vqa"):
        payload = _eval_classification(args, cfg, args.kind)
    elif args.kind == "lrsvqa":
        payload = _eval_lrsvqa(args, cfg)
    else:
        raise UsageError(f"unknown eval kind {args.kind!r}")
    _emit_report(args, payload, cfg, args.seed)
    return EXIT_OK


# --------------------------------------------------------------------- #
# tile
# --------------------------------------------------------------------- #

def cmd_tile(args) -> int:
    cfg = _load_cfg(args)
    spec = TilingSpec(args.length, args.overlap) if args.length else cfg.tiling
    keep_ratio = args.keep_ratio if args.keep_ratio is not None else cfg.keep_ratio
    dedup_iou = args.dedup_iou if args.dedup_iou is not None else cfg.dedup_iou

    if args.merge:
        if not args.windows:
            raise UsageError("--merge needs --windows (the window manifest)")
        windows_by_image: dict[str, dict[int, TileWindow]] = {}
        for _, row in formats.read_jsonl(args.windows):
            windows_by_image[row["image_id"]] = {
                w["window_id"]: TileWindow(w["x0"], w["y0"], w["w"], w["h"])
                for w in row["windows"]}
        per_image: dict[str, list] = {}
        for n, row in formats.read_jsonl(args.images):
            image = row["image_id"]
            window = windows_by_image.get(image, {}).get(row["window_id"])
            if window is None:
                raise formats.SchemaError(f"unknown window {row['window_id']} for {image}",
                                          line=n)
            dets = [LabeledDetection(d["category"], QuadBox.from_flat(d["poly"]))
                    for d in row["detections"]]
            per_image.setdefault(image, []).append((window, dets))
        rows = []
        for image in per_image:
            merged = merge_windows(per_image[image], dedup_iou=dedup_iou)
            rows.append({"image_id": image,
                         "detections": [{"category": d.category, "poly": d.box.flat()}
                                        for d in merged]})
        count = formats.write_jsonl(args.output, rows)
        _write_manifest(args.output, "tile --merge", cfg, args.seed,
                        {"images": count, "dedup_iou": dedup_iou})
        return EXIT_OK

    records = formats.load_detection_records(args.images)
    window_rows, shard_rows = [], []
    for rec in records:
        manifest = windows_manifest(rec.geometry, spec, image_id=rec.image)
        window_rows.append(manifest)
        for entry in manifest["windows"]:
            window = TileWindow(entry["x0"], entry["y0"], entry["w"], entry["h"])
            clipped = clip_annotations(rec.annotations, window, keep_ratio=keep_ratio)
            shard_rows.append({
                "image_id": rec.image,
                "window_id": entry["window_id"],
                "x0": window.x0, "y0": window.y0, "w": window.w, "h": window.h,
                "annotations": [{"category": d.category, "poly": d.box.flat()}
                                for d in clipped],
            })
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    formats.write_jsonl(out_dir / "windows.jsonl", window_rows)
    formats.write_jsonl(out_dir / "clipped.jsonl", shard_rows)
    _write_manifest(out_dir / "tiles", "tile", cfg, args.seed,
                    {"images": len(records), "windows": sum(len(r["windows"]) for r in window_rows),
                     "length": spec.length, "overlap": spec.overlap, "keep_ratio": keep_ratio})
    return EXIT_OK


# --------------------------------------------------------------------- #
# zoomgen
# --------------------------------------------------------------------- #

def cmd_zoomgen(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg)
    zoom = cfg.zoom
    rows = []
    excluded = 0

    if args.recipe in ("counting", "comparison"):
        if not args.records:
            raise UsageError(f"--recipe {args.recipe} needs --records")
        records = formats.load_detection_records(args.records)
        for rec in records:
            if args.recipe == "counting":
                questions = gen_counting_qa(rec, density_threshold=args.density_threshold
                                            if args.density_threshold is not None
                                            else zoom.density_threshold)
                for qa in questions:
                    plan_sample = _counting_zoom_sample(rec, qa, cfg)
                    conv = build_zoom_conversation(plan_sample,
                                                   min_crop_side=zoom.min_crop_side)
                    row = conv.to_dict()
                    row["qa"] = {k: qa[k] for k in ("question", "answer", "category", "region")}
                    row["evidence"] = qa["evidence"]
                    rows.append(row)
            else:
                cats = sorted({d.category for d in rec.annotations})
                for a, b in zip(cats, cats[1:]):
                    qa = gen_comparison_qa(rec, a, b)
                    rows.append({"id": f"cmp:{rec.image}:{a}:{b}", "image": rec.image,
                                 "question": qa["question"], "answer": qa["answer"]})

    elif args.recipe == "ingest":
        records, errors = ingest_external_qa(args.qa, padding=args.padding
                                             if args.padding is not None else zoom.region_padding)
        excluded = len(errors)
        for rec in records:
            sample = zoom_sample_from_region(rec["image"], rec["geometry"], rec["question"],
                                             rec["answer"], rec["region"], cfg.patch_spec,
                                             roi_min_side=zoom.roi_min_side)
            rows.append(build_zoom_conversation(sample, min_crop_side=zoom.min_crop_side).to_dict())

    elif args.recipe == "mcq":
        for n, obj in formats.read_jsonl(args.qa):
            try:
                question, gold = obj["question"], str(obj["answer"])
                if "distractors" in obj:
                    distractors = [str(d) for d in obj["distractors"]]
                elif gold.isdigit():
                    distractors = count_distractors(int(gold))
                else:
                    raise ValidationError("no distractors and answer is not a count")
                item = convert_to_mcq(question, gold, distractors,
                                      seed=record_seed(seed, f"{n}:{question}"))
            except (ValidationError, KeyError) as exc:
                excluded += 1
                continue
            rows.append({
                "id": f"mcq:{n}",
                "question": item.render_question(),
                "options": list(item.options),
                "answer_letter": item.answer_letter,
            })
    else:
        raise UsageError(f"unknown recipe {args.recipe!r}")

    count = formats.write_jsonl(args.output, rows)
    _write_manifest(args.output, f"zoomgen {args.recipe}", cfg, seed,
                    {"records": count, "excluded": excluded})
    return EXIT_OK


def _counting_zoom_sample(rec, qa, cfg: RunConfig) -> ZoomSample:
    from .resolution import smart_resize

    plan = smart_resize(rec.geometry, cfg.patch_spec)
    roi = evidence_roi(qa["evidence"], plan)
    return ZoomSample(rec.image, rec.geometry, plan, qa["question"], roi, qa["answer"])


# --------------------------------------------------------------------- #
# parser wiring
# --------------------------------------------------------------------- #

def build_parser() -> _Parser:
    parser = _Parser(prog="rsvlkit",
                     description="Remote-sensing vision-language data and evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert between record formats")
    p.add_argument("--in-format", required=True,
                   choices=["coco", "detection", "grounding", "conversation"])
    p.add_argument("--out-format", required=True,
                   choices=["coco", "detection", "grounding", "conversation"])
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--strip-descriptors", action="store_true")
    p.add_argument("--clean", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("sample", help="draw weighted training samples")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score model outputs")
    p.add_argument("kind", choices=["detection", "grounding", "classification", "vqa", "lrsvqa"])
    p.add_argument("--preds", required=True)
    p.add_argument("--gts")
    p.add_argument("--gts-format", choices=["jsonl", "coco"], default="jsonl")
    p.add_argument("--config")
    p.add_argument("--output")
    p.add_argument("--csv")
    p.add_argument("--aliases")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--iou-thresholds")
    p.add_argument("--interpolation", choices=["voc07_11point", "all_points"])
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--mf1", action="store_true")
    p.add_argument("--mf1-iou", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tile", help="plan windows and clip or merge annotations")
    p.add_argument("--images", required=True, help="detection records or per-window preds")
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--overlap", type=int, default=100)
    p.add_argument("--keep-ratio", type=float)
    p.add_argument("--dedup-iou", type=float)
    p.add_argument("--merge", action="store_true")
    p.add_argument("--windows")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("zoomgen", help="synthesize zoom-in training conversations")
    p.add_argument("--recipe", required=True,
                   choices=["counting", "comparison", "ingest", "mcq"])
    p.add_argument("--records", help="detection records (counting/comparison)")
    p.add_argument("--qa", help="QA JSONL (ingest/mcq)")
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--density-threshold", type=int)
    p.add_argument("--padding", type=float)
    p.set_defaults(func=cmd_zoomgen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort classification
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()

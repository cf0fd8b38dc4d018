"""Run configuration: one file (TOML, YAML, or JSON) drives every subcommand.

Unknown keys are rejected outright so a typo cannot silently change an
experiment; the parsed configuration plus a content hash are echoed into
every output manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data_engine import AugmentationPolicy, DataEngineError
from .metrics import ApNcProtocol
from .resolution import PatchSpec
from .tiling import TilingSpec


class ConfigError(ValueError):
    pass


@dataclass(slots=True)
class SubsetDecl:
    name: str
    task: str
    path: str
    format: str  # detection | grounding | conversation | coco
    weight: float = 1.0


@dataclass(slots=True)
class ZoomConfig:
    density_threshold: int = 10
    min_crop_side: int = 224
    region_padding: float = 0.10
    roi_min_side: int = 1


@dataclass(slots=True)
class RunConfig:
    seed: int | None = None
    patch_spec: PatchSpec = field(default_factory=PatchSpec)
    policy: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    protocol: ApNcProtocol = field(default_factory=ApNcProtocol)
    tiling: TilingSpec = field(default_factory=TilingSpec)
    keep_ratio: float = 0.7
    dedup_iou: float = 0.5
    zoom: ZoomConfig = field(default_factory=ZoomConfig)
    subsets: list[SubsetDecl] = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


_TOP_KEYS = {"seed", "patch_spec", "policy", "protocol", "tiling", "zoom", "subsets"}
_PATCH_KEYS = {"patch_len", "min_pixels", "max_pixels"}
_POLICY_KEYS = {"prompt_pools", "json_mode_probability", "json_instruction_suffix",
                "synonyms", "synonym_probability", "typo_table", "resize_scale_range",
                "descriptor_tags", "seed"}
_PROTOCOL_KEYS = {"iou_thresholds", "trials_random", "include_constant_trial",
                  "seed", "interpolation"}
_TILING_KEYS = {"length", "overlap", "keep_ratio", "dedup_iou"}
_ZOOM_KEYS = {"density_threshold", "min_crop_side", "region_padding", "roi_min_side"}
_SUBSET_KEYS = {"name", "task", "path", "format", "weight"}


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    _reject_unknown(data, _TOP_KEYS, "config")
    cfg = RunConfig(raw=data)

    if "seed" in data:
        cfg.seed = int(data["seed"])

    patch = data.get("patch_spec", {})
    _reject_unknown(patch, _PATCH_KEYS, "patch_spec")
    cfg.patch_spec = PatchSpec(**patch)

    policy = dict(data.get("policy", {}))
    _reject_unknown(policy, _POLICY_KEYS, "policy")
    if "resize_scale_range" in policy:
        policy["resize_scale_range"] = tuple(policy["resize_scale_range"])
    if "descriptor_tags" in policy:
        policy["descriptor_tags"] = tuple(policy["descriptor_tags"])
    try:
        cfg.policy = AugmentationPolicy(**policy)
    except DataEngineError as exc:
        raise ConfigError(str(exc)) from exc

    protocol = dict(data.get("protocol", {}))
    _reject_unknown(protocol, _PROTOCOL_KEYS, "protocol")
    if "iou_thresholds" in protocol:
        protocol["iou_thresholds"] = tuple(protocol["iou_thresholds"])
    cfg.protocol = ApNcProtocol(**protocol)

    tiling = dict(data.get("tiling", {}))
    _reject_unknown(tiling, _TILING_KEYS, "tiling")
    cfg.keep_ratio = float(tiling.pop("keep_ratio", 0.7))
    cfg.dedup_iou = float(tiling.pop("dedup_iou", 0.5))
    cfg.tiling = TilingSpec(**tiling)

    zoom = data.get("zoom", {})
    _reject_unknown(zoom, _ZOOM_KEYS, "zoom")
    cfg.zoom = ZoomConfig(**zoom)

    for i, sub in enumerate(data.get("subsets", [])):
        _reject_unknown(sub, _SUBSET_KEYS, f"subsets[{i}]")
        for key in ("name", "task", "path", "format"):
            if key not in sub:
                raise ConfigError(f"subsets[{i}] needs {key!r}")
        cfg.subsets.append(SubsetDecl(
            name=sub["name"], task=sub["task"], path=sub["path"],
            format=sub["format"], weight=float(sub.get("weight", 1.0))))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text)
    elif suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    elif suffix == ".json":
        data = json.loads(text)
    else:
        raise ConfigError(f"unsupported config format {suffix!r} (use .toml/.yaml/.json)")
    return parse_config(data)

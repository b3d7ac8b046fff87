from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Any

import yaml
from dotenv import load_dotenv

from .errors import ConfigError, DcfdsError
from .estimators.diarization import DIARIZER_KINDS
from .models import (
    EstimatorConfig,
    EstimatorKind,
    OverlapMerge,
    PipelineConfig,
    ReclusterConfig,
    ScenarioSpec,
    SourceKind,
    WindowMode,
)


logger = logging.getLogger(__name__)

LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
ESTIMATOR_KEYS = {"kind", "flip_rate", "blur_sigma", "path", "seed", "gate_with_time_mask", "clamp"}
RECLUSTER_KEYS = {
    "vad_threshold_db",
    "min_segment_s",
    "min_gap_s",
    "max_speakers",
    "affinity_threshold",
    "seed",
    "embeddings_manifest",
}
TOP_LEVEL_KEYS = {
    "sample_rate",
    "frame_ms",
    "hop_ms",
    "n_mels",
    "window_s",
    "window_hop_s",
    "n_w",
    "mode",
    "se_stages",
    "recluster_rounds",
    "overlap_merge",
    "mask_ceiling",
    "workers",
    "log_level",
    "diarizer",
    "separator",
    "enhancer",
    "recluster",
}
SCENARIO_KEYS = {
    "n_speakers",
    "duration",
    "target_overlap_ratio",
    "noise_snr",
    "seed",
    "source_kind",
    "wav_bank",
    "sample_rate",
    "frame_ms",
    "hop_ms",
}


def _env_str(name: str) -> str | None:
    value = os.getenv(name)
    if value is None:
        return None
    cleaned = value.strip()
    if not cleaned:
        return None
    if len(cleaned) >= 2 and cleaned[0] == cleaned[-1] and cleaned[0] in {"'", '"'}:
        cleaned = cleaned[1:-1].strip()
    return cleaned or None


def _as_int(value: Any, default: int | None) -> int | None:
    if value is None:
        return default
    try:
        return int(value)
    except (TypeError, ValueError):
        return default


class _Validator:
    def __init__(self) -> None:
        self.unknown: list[str] = []
        self.invalid: list[str] = []

    def block(self, raw: Any, allowed: set[str], prefix: str) -> dict[str, Any]:
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            self.invalid.append(prefix.rstrip("."))
            return {}
        self.unknown.extend(f"{prefix}{key}" for key in sorted(set(raw) - allowed, key=str))
        return raw

    def integer(self, raw: dict[str, Any], key: str, default: int, prefix: str = "", minimum: int | None = None) -> int:
        value = raw.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int) or (minimum is not None and value < minimum):
            self.invalid.append(f"{prefix}{key}")
            return default
        return value

    def number(
        self,
        raw: dict[str, Any],
        key: str,
        default: float | None,
        prefix: str = "",
        minimum: float | None = None,
        maximum: float | None = None,
        exclusive_min: bool = False,
        nullable: bool = False,
    ) -> float | None:
        value = raw.get(key, default)
        if value is None and nullable:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.invalid.append(f"{prefix}{key}")
            return default
        too_low = minimum is not None and (value <= minimum if exclusive_min else value < minimum)
        too_high = maximum is not None and value > maximum
        if too_low or too_high:
            self.invalid.append(f"{prefix}{key}")
            return default
        return float(value)

    def boolean(self, raw: dict[str, Any], key: str, default: bool, prefix: str = "") -> bool:
        value = raw.get(key, default)
        if not isinstance(value, bool):
            self.invalid.append(f"{prefix}{key}")
            return default
        return value

    def text(self, raw: dict[str, Any], key: str, default: str | None, prefix: str = "") -> str | None:
        value = raw.get(key, default)
        if value is not None and not isinstance(value, str):
            self.invalid.append(f"{prefix}{key}")
            return default
        return value

    def choice(self, raw: dict[str, Any], key: str, enum_type: type, default: Any, prefix: str = "") -> Any:
        value = raw.get(key, default)
        try:
            return enum_type(value)
        except ValueError:
            self.invalid.append(f"{prefix}{key}")
            return default

    def check(self) -> None:
        if self.unknown or self.invalid:
            offending = self.unknown + self.invalid
            raise ConfigError(
                "config_schema",
                f"invalid configuration keys: {', '.join(offending)}",
                {"unknown": self.unknown, "invalid": self.invalid},
            )


def _estimator(v: _Validator, raw: Any, name: str, default_kind: EstimatorKind, mask_ceiling: float) -> EstimatorConfig:
    prefix = f"{name}."
    block = v.block(raw, ESTIMATOR_KEYS, prefix)
    cfg = EstimatorConfig(
        kind=v.choice(block, "kind", EstimatorKind, default_kind, prefix),
        flip_rate=v.number(block, "flip_rate", 0.0, prefix, minimum=0.0, maximum=1.0),
        blur_sigma=v.number(block, "blur_sigma", 0.0, prefix, minimum=0.0),
        path=v.text(block, "path", None, prefix),
        seed=v.integer(block, "seed", 0, prefix, minimum=0),
        gate_with_time_mask=v.boolean(block, "gate_with_time_mask", False, prefix),
        clamp=v.boolean(block, "clamp", True, prefix),
        mask_ceiling=mask_ceiling,
    )
    if cfg.kind == EstimatorKind.EXTERNAL_FILE and not cfg.path:
        v.invalid.append(f"{prefix}path")
    if name == "diarizer" and cfg.kind not in DIARIZER_KINDS:
        v.invalid.append(f"{prefix}kind")
    return cfg


def config_from_dict(raw: dict[str, Any]) -> PipelineConfig:
    v = _Validator()
    raw = v.block(raw, TOP_LEVEL_KEYS, "")
    mask_ceiling = v.number(raw, "mask_ceiling", 2.0, minimum=0.0, exclusive_min=True)
    log_level = str(raw.get("log_level", "INFO")).upper()
    if log_level not in LOG_LEVELS:
        v.invalid.append("log_level")
        log_level = "INFO"

    recluster_raw = v.block(raw.get("recluster"), RECLUSTER_KEYS, "recluster.")
    cfg = PipelineConfig(
        sample_rate=v.integer(raw, "sample_rate", 16000, minimum=1),
        frame_ms=v.number(raw, "frame_ms", 64.0, minimum=0.0, exclusive_min=True),
        hop_ms=v.number(raw, "hop_ms", 16.0, minimum=0.0, exclusive_min=True),
        n_mels=v.integer(raw, "n_mels", 40, minimum=1),
        window_s=v.number(raw, "window_s", 3.0, minimum=0.0, exclusive_min=True),
        window_hop_s=v.number(raw, "window_hop_s", None, minimum=0.0, exclusive_min=True, nullable=True),
        n_w=v.integer(raw, "n_w", 3, minimum=1),
        mode=v.choice(raw, "mode", WindowMode, WindowMode.DECODING),
        se_stages=v.integer(raw, "se_stages", 0, minimum=0),
        recluster_rounds=v.integer(raw, "recluster_rounds", 1, minimum=0),
        overlap_merge=v.choice(raw, "overlap_merge", OverlapMerge, OverlapMerge.AVERAGE),
        mask_ceiling=mask_ceiling,
        workers=v.integer(raw, "workers", 1, minimum=1),
        log_level=log_level,
        diarizer=_estimator(v, raw.get("diarizer"), "diarizer", EstimatorKind.ORACLE_BINARY, mask_ceiling),
        separator=_estimator(v, raw.get("separator"), "separator", EstimatorKind.ORACLE_MAGNITUDE_RATIO, mask_ceiling),
        enhancer=_estimator(v, raw.get("enhancer"), "enhancer", EstimatorKind.IDENTITY, mask_ceiling),
        recluster=ReclusterConfig(
            vad_threshold_db=v.number(recluster_raw, "vad_threshold_db", 30.0, "recluster.", minimum=0.0, exclusive_min=True),
            min_segment_s=v.number(recluster_raw, "min_segment_s", 0.2, "recluster.", minimum=0.0),
            min_gap_s=v.number(recluster_raw, "min_gap_s", 0.1, "recluster.", minimum=0.0),
            max_speakers=v.integer(recluster_raw, "max_speakers", 8, "recluster.", minimum=1),
            affinity_threshold=v.number(recluster_raw, "affinity_threshold", 0.5, "recluster.", minimum=0.0, maximum=1.0),
            seed=v.integer(recluster_raw, "seed", 0, "recluster.", minimum=0),
            embeddings_manifest=v.text(recluster_raw, "embeddings_manifest", None, "recluster."),
        ),
    )
    if cfg.hop_ms > cfg.frame_ms:
        v.invalid.append("hop_ms")
    v.check()

    try:
        cfg.windowing
    except DcfdsError as exc:
        raise ConfigError(
            "config_schema",
            f"invalid configuration keys: window_s, window_hop_s ({exc.message})",
            {"unknown": [], "invalid": ["window_s", "window_hop_s"], **exc.context},
        ) from exc
    return cfg


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    def _estimator_dict(est: EstimatorConfig) -> dict[str, Any]:
        return {
            "kind": est.kind.value,
            "flip_rate": est.flip_rate,
            "blur_sigma": est.blur_sigma,
            "path": est.path,
            "seed": est.seed,
            "gate_with_time_mask": est.gate_with_time_mask,
            "clamp": est.clamp,
        }

    return {
        "sample_rate": cfg.sample_rate,
        "frame_ms": cfg.frame_ms,
        "hop_ms": cfg.hop_ms,
        "n_mels": cfg.n_mels,
        "window_s": cfg.window_s,
        "window_hop_s": cfg.window_hop_s,
        "n_w": cfg.n_w,
        "mode": cfg.mode.value,
        "se_stages": cfg.se_stages,
        "recluster_rounds": cfg.recluster_rounds,
        "overlap_merge": cfg.overlap_merge.value,
        "mask_ceiling": cfg.mask_ceiling,
        "workers": cfg.workers,
        "log_level": cfg.log_level,
        "diarizer": _estimator_dict(cfg.diarizer),
        "separator": _estimator_dict(cfg.separator),
        "enhancer": _estimator_dict(cfg.enhancer),
        "recluster": {
            "vad_threshold_db": cfg.recluster.vad_threshold_db,
            "min_segment_s": cfg.recluster.min_segment_s,
            "min_gap_s": cfg.recluster.min_gap_s,
            "max_speakers": cfg.recluster.max_speakers,
            "affinity_threshold": cfg.recluster.affinity_threshold,
            "seed": cfg.recluster.seed,
            "embeddings_manifest": cfg.recluster.embeddings_manifest,
        },
    }


def _read_structured(path: Path) -> Any:
    if not path.exists():
        raise ConfigError("config_not_found", f"Config file not found: {path}", {"path": str(path)})
    text = path.read_text(encoding="utf-8-sig")
    try:
        if path.suffix.lower() in {".yaml", ".yml"}:
            return yaml.safe_load(text) or {}
        return json.loads(text) if text.strip() else {}
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("config_unreadable", f"cannot parse {path}: {exc}", {"path": str(path)}) from exc


def load_config(config_path: str | Path | None = None, env_path: str | Path = ".env") -> PipelineConfig:
    env_file = Path(env_path)
    if env_file.exists():
        # Override inherited process vars so project-local .env is authoritative.
        load_dotenv(dotenv_path=env_file, override=True, encoding="utf-8-sig")
    else:
        logger.debug("Env file not found at %s; relying on process environment only.", env_file)

    raw: Any = {}
    if config_path is not None:
        raw = _read_structured(Path(config_path))
        if not isinstance(raw, dict):
            raise ConfigError("config_schema", "configuration must be a mapping", {"path": str(config_path)})

    cfg = config_from_dict(raw)

    workers = _as_int(_env_str("DCFDS_WORKERS"), None)
    if workers is not None:
        if workers < 1:
            logger.warning("DCFDS_WORKERS=%d is below 1; keeping workers=%d", workers, cfg.workers)
        else:
            cfg.workers = workers
    log_level = _env_str("DCFDS_LOG_LEVEL")
    if log_level is not None:
        if log_level.upper() in LOG_LEVELS:
            cfg.log_level = log_level.upper()
        else:
            logger.warning("Ignoring unknown DCFDS_LOG_LEVEL=%s", log_level)

    windowing = cfg.windowing
    logger.info(
        "Config resolved: window=%d frames hop=%d n_w=%d mode=%s workers=%d",
        windowing.window_len,
        windowing.hop,
        windowing.n_w,
        windowing.mode.value,
        cfg.workers,
    )
    return cfg


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def scenario_from_dict(raw: dict[str, Any]) -> ScenarioSpec:
    v = _Validator()
    raw = v.block(raw, SCENARIO_KEYS, "")
    wav_bank = raw.get("wav_bank") or []
    if not isinstance(wav_bank, list) or not all(isinstance(item, str) for item in wav_bank):
        v.invalid.append("wav_bank")
        wav_bank = []
    spec = ScenarioSpec(
        n_speakers=v.integer(raw, "n_speakers", 2, minimum=1),
        duration=v.number(raw, "duration", 30.0, minimum=0.0, exclusive_min=True),
        target_overlap_ratio=v.number(raw, "target_overlap_ratio", 0.0, minimum=0.0, maximum=1.0),
        noise_snr=v.number(raw, "noise_snr", None, nullable=True),
        seed=v.integer(raw, "seed", 0, minimum=0),
        source_kind=v.choice(raw, "source_kind", SourceKind, SourceKind.MULTITONE),
        wav_bank=list(wav_bank),
        sample_rate=v.integer(raw, "sample_rate", 16000, minimum=1),
        frame_ms=v.number(raw, "frame_ms", 64.0, minimum=0.0, exclusive_min=True),
        hop_ms=v.number(raw, "hop_ms", 16.0, minimum=0.0, exclusive_min=True),
    )
    v.check()
    return spec


def scenario_to_dict(spec: ScenarioSpec) -> dict[str, Any]:
    return {
        "n_speakers": spec.n_speakers,
        "duration": spec.duration,
        "target_overlap_ratio": spec.target_overlap_ratio,
        "noise_snr": spec.noise_snr,
        "seed": spec.seed,
        "source_kind": spec.source_kind.value,
        "wav_bank": list(spec.wav_bank),
        "sample_rate": spec.sample_rate,
        "frame_ms": spec.frame_ms,
        "hop_ms": spec.hop_ms,
    }


def load_scenario_spec(path: str | Path) -> ScenarioSpec:
    raw = _read_structured(Path(path))
    if not isinstance(raw, dict):
        raise ConfigError("config_schema", "scenario must be a mapping", {"path": str(path)})
    return scenario_from_dict(raw)

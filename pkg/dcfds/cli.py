from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from collections.abc import Sequence
from dataclasses import asdict
from pathlib import Path
from typing import Any

from . import __version__
from .config import config_hash, config_to_dict, load_config, load_scenario_spec, scenario_to_dict
from .errors import DcfdsError
from .formats.rttm import prior_from_rttm, prior_to_rttm
from .formats.transcripts import load_transcripts, transcripts_to_json
from .formats.wav import read_wav
from .formats.window_maps import window_maps_to_json
from .logging import setup_logging
from .metrics.der import EVAL_FRAME_S, der
from .metrics.sdr import si_sdr
from .metrics.wer import cpwer, tcpwer
from .models import PipelineConfig, SeparationResult, Waveform
from .pipeline import decode
from .recluster import recluster
from .sim import generate, overlap_ratio
from .storage import ArtifactStore, _dt_now


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcfds", description="Diarization-conditioned speech separation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override the configured log level.")
    sub = parser.add_subparsers(dest="command", metavar="{simulate,decode,evaluate,recluster}")

    simulate = sub.add_parser("simulate", help="Generate a synthetic conversation with ground truth.")
    simulate.add_argument("--spec", required=True, help="Scenario JSON or YAML.")
    simulate.add_argument("--out", required=True, help="Output directory.")

    dec = sub.add_parser("decode", help="Separate a mixture guided by a diarization prior.")
    dec.add_argument("--mix", required=True, help="Mixture WAV.")
    dec.add_argument("--prior", required=True, help="Prior RTTM.")
    dec.add_argument("--config", default=None, help="Pipeline config JSON or YAML.")
    dec.add_argument("--out", required=True, help="Output directory.")
    dec.add_argument("--sources", default=None, help="Directory of clean <speaker>.wav files for oracle estimators.")
    dec.add_argument("--workers", type=int, default=None, help="Window worker count.")

    ev = sub.add_parser("evaluate", help="Score transcripts, diarization and separation.")
    ev.add_argument("--ref", default=None, help="Reference transcripts (JSON or CTM).")
    ev.add_argument("--hyp", default=None, help="Hypothesis transcripts (JSON or CTM).")
    ev.add_argument("--collar", type=float, default=5.0, help="tcpWER collar in seconds.")
    ev.add_argument("--ref-rttm", default=None)
    ev.add_argument("--hyp-rttm", default=None)
    ev.add_argument("--ref-wav", nargs="+", default=[])
    ev.add_argument("--hyp-wav", nargs="+", default=[])

    rc = sub.add_parser("recluster", help="Derive a refreshed prior from separated streams.")
    rc.add_argument("--streams", nargs="+", required=True, help="Separated stream WAVs.")
    rc.add_argument("--config", default=None, help="Pipeline config JSON or YAML.")
    rc.add_argument("--out", required=True, help="Output directory.")
    return parser


def _configure(config_path: str | None, log_level: str | None) -> PipelineConfig:
    cfg = load_config(config_path)
    setup_logging(log_level or cfg.log_level)
    return cfg


def _cmd_simulate(args: argparse.Namespace) -> int:
    started = _dt_now()
    cfg = _configure(None, args.log_level)
    spec = load_scenario_spec(args.spec)
    gt = generate(spec)

    store = ArtifactStore(args.out)
    store.write_wav("mixture.wav", gt.mixture)
    for label, source in gt.sources_by_label().items():
        store.write_wav(f"{label}.wav", source)
    store.write_text("reference.rttm", prior_to_rttm(gt.prior, file_id="mixture"))
    store.write_text("transcripts.json", transcripts_to_json(gt.transcripts))
    store.write_json(
        "scenario.json",
        {
            **scenario_to_dict(spec),
            "achieved_overlap_ratio": overlap_ratio(gt.utterances, spec.duration),
            "utterances": [asdict(utt) for utt in gt.utterances],
        },
    )
    store.write_manifest("simulate", started, {"spec": args.spec}, {"scenario": scenario_to_dict(spec), "workers": cfg.workers})
    return EXIT_OK


def _load_sources(directory: str | None, labels: Sequence[str], sample_rate: int) -> dict[str, Waveform] | None:
    if directory is None:
        return None
    sources: dict[str, Waveform] = {}
    for label in labels:
        path = Path(directory) / f"{label}.wav"
        if path.exists():
            sources[label] = read_wav(path, expected_rate=sample_rate)
        else:
            logger.warning("no clean source file %s", path)
    return sources


def _write_separation(store: ArtifactStore, result: SeparationResult) -> None:
    for index, stream in enumerate(result.streams):
        store.write_wav(f"spk{index:02d}.wav", stream)
    if result.prior is not None:
        store.write_text("prior.rttm", prior_to_rttm(result.prior, file_id="mixture"))
    store.write_text("windows.json", window_maps_to_json(result.windows))


def _cmd_decode(args: argparse.Namespace) -> int:
    started = _dt_now()
    cfg = _configure(args.config, args.log_level)
    if args.workers is not None:
        cfg.workers = max(1, args.workers)
    mix = read_wav(args.mix, expected_rate=cfg.sample_rate)
    prior = prior_from_rttm(Path(args.prior).read_text(encoding="utf-8"), cfg.frame_hop_s)
    sources = _load_sources(args.sources, prior.speaker_ids, cfg.sample_rate)

    result = decode(mix, prior, cfg, sources=sources)

    store = ArtifactStore(args.out)
    _write_separation(store, result)
    inputs: dict[str, str] = {"mix": args.mix, "prior": args.prior}
    if args.config:
        inputs["config"] = args.config
    windowing = cfg.windowing
    store.write_manifest(
        "decode",
        started,
        inputs,
        {
            "config": config_to_dict(cfg),
            "speakers": list(result.prior.speaker_ids) if result.prior is not None else [],
            "window_len_frames": windowing.window_len,
            "window_hop_frames": windowing.hop,
            "windows": len(result.windows),
            "recluster_rounds": result.recluster_rounds,
        },
        config_hash=config_hash(cfg),
    )
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    _configure(None, args.log_level)
    report: dict[str, Any] = {}
    if bool(args.ref) != bool(args.hyp):
        raise DcfdsError("usage", "--ref and --hyp must be given together")
    if args.ref:
        ref = load_transcripts(args.ref)
        hyp = load_transcripts(args.hyp)
        report["cpwer"] = asdict(cpwer(ref, hyp))
        try:
            report["tcpwer"] = {**asdict(tcpwer(ref, hyp, args.collar)), "collar": args.collar}
        except DcfdsError as exc:
            if exc.code != "missing_timestamps":
                raise
            logger.warning("tcpWER skipped: %s", exc.message)

    if bool(args.ref_rttm) != bool(args.hyp_rttm):
        raise DcfdsError("usage", "--ref-rttm and --hyp-rttm must be given together")
    if args.ref_rttm:
        ref_prior = prior_from_rttm(Path(args.ref_rttm).read_text(encoding="utf-8"), EVAL_FRAME_S)
        hyp_prior = prior_from_rttm(Path(args.hyp_rttm).read_text(encoding="utf-8"), EVAL_FRAME_S)
        report["der"] = asdict(der(ref_prior, hyp_prior))

    if len(args.ref_wav) != len(args.hyp_wav):
        raise DcfdsError("usage", "--ref-wav and --hyp-wav need the same number of files")
    if args.ref_wav:
        report["si_sdr"] = [
            {"ref": ref_path, "hyp": hyp_path, "si_sdr_db": si_sdr(read_wav(hyp_path), read_wav(ref_path))}
            for ref_path, hyp_path in zip(args.ref_wav, args.hyp_wav)
        ]

    if not report:
        raise DcfdsError("usage", "nothing to evaluate; pass transcripts, RTTMs or WAV pairs")
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
    return EXIT_OK


def _json_default(value: Any) -> Any:
    if isinstance(value, float) and math.isinf(value):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _cmd_recluster(args: argparse.Namespace) -> int:
    started = _dt_now()
    cfg = _configure(args.config, args.log_level)
    streams = [read_wav(path, expected_rate=cfg.sample_rate) for path in args.streams]
    prior = recluster(SeparationResult(streams=streams), cfg)

    store = ArtifactStore(args.out)
    store.write_text("prior.rttm", prior_to_rttm(prior, file_id="mixture"))
    inputs = {f"stream{index:02d}": path for index, path in enumerate(args.streams)}
    if args.config:
        inputs["config"] = args.config
    store.write_manifest(
        "recluster",
        started,
        inputs,
        {"recluster": config_to_dict(cfg)["recluster"], "speakers": prior.speaker_ids},
        config_hash=config_hash(cfg),
    )
    return EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate,
    "decode": _cmd_decode,
    "evaluate": _cmd_evaluate,
    "recluster": _cmd_recluster,
}


def _emit_error(payload: dict[str, Any]) -> None:
    sys.stderr.write(json.dumps({"error": payload}, default=str) + "\n")


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args)
    except DcfdsError as exc:
        logger.error("%s failed: %s", args.command, exc.message)
        _emit_error(exc.to_dict())
        return EXIT_USAGE if exc.code == "usage" else EXIT_RUNTIME
    except Exception as exc:
        logger.exception("%s crashed", args.command)
        _emit_error({"code": "internal_error", "message": str(exc), "context": {"type": type(exc).__name__}})
        return EXIT_RUNTIME

# app/cli.py
"""Command line entry point: david <command> ..."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.table import Table

from core.analysis import AnalysisReport, PortReport, ProbeMode
from core.dataio import dump_json
from sim.scenario import ScenarioReport
from utils.logger import set_shell_level

from .config import PlatformConfig
from .controllers import (
    REFERENCE_MODELS,
    AnalysisController,
    ExitCode,
    ScenarioController,
    SpeechController,
)

console = Console(width=120)


def _fmt(value, spec: str = ".4g") -> str:
    return "-" if value is None else format(value, spec)


# ===== Output =====


def _print_analysis(report: AnalysisReport):
    table = Table(title=f"Graph analysis at {report.frame_rate_hz:g} frames/s")
    for col in ("output", "shape", "RF [frames]", "lookahead", "context [s]"):
        table.add_column(col)
    table.add_column("latency [s]")
    table.add_column("MAC/frame", justify="right")
    for out in report.outputs.values():
        table.add_row(
            out.output_id,
            "x".join("T" if d is None else str(d) for d in out.shape),
            _fmt(out.receptive_field_frames, "d"),
            _fmt(out.lookahead_frames, "d"),
            _fmt(out.context_seconds),
            _fmt(out.latency_seconds),
            _fmt(out.macs_per_output_frame, ".6g"),
        )
    console.print(table)
    verdict = "OK" if report.budget_ok else "OVER BUDGET"
    console.print(
        f"{report.macs_per_second:.6g} MAC/s -> {report.estimated_power_mw:.4g} mW "
        f"(budget {report.power_budget_mw:g} mW): {verdict}"
    )


def _print_port(report: PortReport):
    table = Table(title="Ported layers")
    for col in ("layer", "sparsity", "w scale", "w zp", "out scale"):
        table.add_column(col)
    for layer_id, info in report.layers.items():
        table.add_row(
            layer_id,
            f"{info.sparsity:.3f}",
            f"{info.weight_scale:.4g}",
            str(info.weight_zero_point),
            _fmt(info.out_scale),
        )
    console.print(table)
    if report.folded:
        console.print(f"Folded batchnorms: {', '.join(report.folded)}")
    verdict = "OK" if report.budget_ok else "OVER BUDGET"
    console.print(
        f"Estimated {report.estimated_power_mw:.4g} mW "
        f"(budget {report.power_budget_mw:g} mW): {verdict}"
    )


def _print_scenario(report: ScenarioReport):
    table = Table(title="Energy per device")
    table.add_column("device")
    table.add_column("energy [mJ]", justify="right")
    for device, mj in sorted(report.energy_mj.items()):
        table.add_row(device, f"{mj:.6g}")
    table.add_row("total", f"{report.total_energy_mj:.6g}")
    console.print(table)
    for t in report.transcripts:
        console.print(f"[{t['t_s']:.3f} s] heard '{t['text']}'")
    for r in report.responses:
        console.print(f"[{r['t_s']:.3f} s] said '{r['text']}' ({r['samples']} samples)")
    console.print(
        f"Duration {report.duration_s:.6g} s, average {_fmt(report.average_power_mw)} "
        f"mW, battery life {_fmt(report.battery_life_h, '.1f')} h, hub active "
        f"{report.hub_active_fraction:.2%}"
    )
    if report.audit:
        console.print(f"Privacy audit: {len(report.audit)} denial(s)")
    if report.errors:
        console.print(f"Errors: {len(report.errors)}")


def _durations(value: str) -> List[int]:
    try:
        durations = [int(v) for v in value.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Not a list of frame counts: {value!r}")
    if any(d < 0 for d in durations):
        raise argparse.ArgumentTypeError("Durations must be >= 0")
    return durations


# ===== Commands =====


def _cmd_analyze(args, config: PlatformConfig) -> int:
    report, code = AnalysisController(config).analyze(args.graph, args.frame_rate)
    if report is not None:
        _print_analysis(report)
        if args.json:
            Path(args.json).write_text(dump_json(report.to_dict()), encoding="utf-8")
    return code


def _cmd_port(args, config: PlatformConfig) -> int:
    report, code = AnalysisController(config).port(
        args.graph, args.out, args.budget_mw, args.prune_threshold
    )
    if report is not None:
        _print_port(report)
    return code


def _cmd_probe(args, config: PlatformConfig) -> int:
    result, code = AnalysisController(config).probe(
        args.graph,
        args.output_index,
        args.output_id,
        ProbeMode(args.mode),
        args.input_length,
    )
    if result is not None:
        probed, predicted = result
        console.print(f"probe    {probed}")
        console.print(f"analyzer {predicted}")
    return code


def _cmd_asr(args, config: PlatformConfig) -> int:
    text, code = SpeechController(config).transcribe(
        args.wav, args.model, args.chunk_frames, args.posteriors_json
    )
    if text is not None:
        console.print(text, markup=False, highlight=False)
    return code


def _cmd_tts(args, config: PlatformConfig) -> int:
    audio, code = SpeechController(config).synthesize(
        args.text, args.out, args.model, args.chunk_frames, args.durations_override
    )
    if audio is not None:
        console.print(
            f"Wrote {len(audio)} samples ({audio.duration_s:.3f} s) to {args.out}"
        )
    return code


def _cmd_scenario(args, config: PlatformConfig) -> int:
    report, code = ScenarioController(config).run(args.script, args.report, args.plot)
    if report is not None:
        _print_scenario(report)
    return code


def _cmd_reference(args, config: PlatformConfig) -> int:
    code = SpeechController(config).reference(args.name, args.out)
    if code == ExitCode.OK:
        console.print(f"Wrote {args.name} to {args.out}")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="david", description="Desk-scale simulator for an edge-AI smart toy"
    )
    parser.add_argument("--config", type=Path, help="platform YAML configuration")
    parser.add_argument("--log-level", help="console log level (default INFO)")
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {PlatformConfig.version}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="receptive field, latency, MACs and power")
    p.add_argument("graph", type=Path)
    p.add_argument("--frame-rate", type=float, help="input frames per second")
    p.add_argument("--json", type=Path, help="write the report as JSON")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("port", help="fold, prune and quantize a float graph")
    p.add_argument("graph", type=Path)
    p.add_argument("--budget-mw", type=float)
    p.add_argument("--prune-threshold", type=float, default=0.0)
    p.add_argument("--out", type=Path, help="write the ported graph")
    p.set_defaults(func=_cmd_port)

    p = sub.add_parser("probe", help="impulse-probe one output frame")
    p.add_argument("graph", type=Path)
    p.add_argument("--output-index", type=int, required=True)
    p.add_argument("--output-id")
    p.add_argument("--mode", choices=[m.value for m in ProbeMode], default="structural")
    p.add_argument("--input-length", type=int)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("asr", help="transcribe a WAV file")
    p.add_argument("wav", type=Path)
    p.add_argument("--model", default="speechnet1", help="reference name or bundle")
    p.add_argument(
        "--stream-chunk-frames",
        "--chunk-frames",
        dest="chunk_frames",
        type=int,
        help="stream in chunks of N frames",
    )
    p.add_argument("--posteriors-json", type=Path, help="write per-frame posteriors")
    p.set_defaults(func=_cmd_asr)

    p = sub.add_parser("tts", help="synthesize text to a WAV file")
    p.add_argument("--text", required=True)
    p.add_argument("--model", default="tts", help="reference name or bundle")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--chunk-frames", type=int)
    p.add_argument(
        "--durations-override",
        type=_durations,
        help="frames per character, one value or a comma-separated list",
    )
    p.set_defaults(func=_cmd_tts)

    p = sub.add_parser("scenario", help="run a scenario script")
    p.add_argument("script", type=Path)
    p.add_argument("--report", type=Path, help="write the JSON report")
    p.add_argument("--plot", type=Path, help="write an HTML power timeline")
    p.set_defaults(func=_cmd_scenario)

    p = sub.add_parser("reference", help="export a reference model bundle")
    p.add_argument("name", choices=REFERENCE_MODELS)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_reference)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return ExitCode.OK if e.code == 0 else ExitCode.USAGE
    if args.log_level:
        set_shell_level(args.log_level)
    if args.config is not None:
        config = PlatformConfig.from_yaml(args.config)
    else:
        config = PlatformConfig().with_env()
    return int(args.func(args, config))


if __name__ == "__main__":
    sys.exit(main())

# app/controllers.py
"""Business logic controllers behind the DavidSim command line."""

from dataclasses import replace
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

from core.analysis import (
    AnalysisReport,
    IndexInterval,
    PortReport,
    ProbeMode,
    analyze,
    default_probe_length,
    dependency_interval,
    impulse_probe,
    port_model,
)
from core.ctc import ctc_greedy_decode
from core.dataio import AudioImporter, dump_json, load_model, save_model, write_wav
from core.dsp import AudioBuffer
from core.errors import BudgetExceeded, ConfigError, DavidError
from core.graph import GraphSpec
from core.plotting import PlottingUtils
from core.speechnet import SpeechRecognizer
from core.tts import TTSModel, reference_tts_model, synthesize
from sim.firmware import build_vision_graph
from sim.platform import FirmwareCatalog, run_scenario
from sim.scenario import ScenarioReport, ScenarioScript
from utils.logger import logger

from .config import PlatformConfig

REFERENCE_MODELS = ("speechnet1", "speechnet2", "vision", "tts")


class ExitCode(IntEnum):
    OK = 0
    ERROR = 1
    USAGE = 2
    BUDGET = 3
    AUDIT = 4


def _fail(action: str, error: Exception) -> ExitCode:
    if isinstance(error, DavidError):
        logger.error(f"{action} failed: {type(error).__name__}: {error}")
    else:
        logger.error(f"{action} failed: {error}", exc_info=True)
    return ExitCode.ERROR


class AnalysisController:
    """Static analysis, porting and probing of graph files."""

    def __init__(self, config: PlatformConfig):
        self.config = config

    def _graph(self, path: Path) -> GraphSpec:
        """A bare graph, or the main graph of a recognizer or TTS bundle."""
        match load_model(path):
            case SpeechRecognizer() as recognizer:
                return recognizer.graph
            case TTSModel() as tts:
                return tts.vocoder
            case graph:
                return graph

    def analyze(
        self, graph_path: Path, frame_rate_hz: Optional[float] = None
    ) -> Tuple[Optional[AnalysisReport], ExitCode]:
        try:
            report = analyze(
                self._graph(graph_path), frame_rate_hz, self.config.budget.to_budget()
            )
        except (DavidError, OSError) as e:
            return None, _fail("Analysis", e)
        verdict = "within" if report.budget_ok else "over"
        logger.info(
            f"{graph_path}: {report.estimated_power_mw:.4g} mW, {verdict} the "
            f"{report.power_budget_mw:g} mW budget"
        )
        return report, ExitCode.OK if report.budget_ok else ExitCode.BUDGET

    def port(
        self,
        graph_path: Path,
        out_path: Optional[Path] = None,
        budget_mw: Optional[float] = None,
        prune_threshold: float = 0.0,
    ) -> Tuple[Optional[PortReport], ExitCode]:
        """Fold, prune and quantize; the ported graph is written only within budget."""
        budget = self.config.budget.to_budget()
        if budget_mw is not None:
            budget = replace(budget, power_budget_mw=budget_mw)
        try:
            graph = self._graph(graph_path)
            ported, report = port_model(graph, budget, prune_threshold)
        except BudgetExceeded as e:
            logger.error(f"Port failed: {e}")
            return e.report, ExitCode.BUDGET
        except (DavidError, OSError) as e:
            return None, _fail("Port", e)
        if out_path is not None:
            save_model(out_path, ported)
        return report, ExitCode.OK

    def probe(
        self,
        graph_path: Path,
        output_index: int,
        output_id: Optional[str] = None,
        mode: ProbeMode = ProbeMode.STRUCTURAL,
        input_length: Optional[int] = None,
    ) -> Tuple[Optional[Tuple[IndexInterval, IndexInterval]], ExitCode]:
        """(probed interval, analyzer interval) for one output frame."""
        try:
            graph = self._graph(graph_path)
            probed = impulse_probe(graph, output_index, output_id, input_length, mode)
            length = input_length or default_probe_length(graph, output_index)
            predicted = dependency_interval(graph, output_index, output_id, length)
        except (DavidError, OSError) as e:
            return None, _fail("Probe", e)
        if probed != predicted:
            logger.warning(f"Probe {probed} differs from analyzer {predicted}")
        return (probed, predicted), ExitCode.OK


class SpeechController:
    """Recognition and synthesis with bundled or reference models."""

    def __init__(self, config: PlatformConfig):
        self.config = config

    def _model(self, name: str, kind: type) -> Union[SpeechRecognizer, TTSModel]:
        path = Path(name)
        if path.suffix == ".json" or path.exists():
            return load_model(path, expect=kind)
        if kind is TTSModel:
            if name != "tts":
                raise ConfigError(f"Unknown TTS model '{name}'")
            return reference_tts_model(self.config.seed)
        return SpeechRecognizer.reference(name, self.config.seed)

    def transcribe(
        self,
        wav_path: Path,
        model: str = "speechnet1",
        chunk_frames: Optional[int] = None,
        posteriors_path: Optional[Path] = None,
    ) -> Tuple[Optional[str], ExitCode]:
        try:
            recognizer = self._model(model, SpeechRecognizer)
            rate = recognizer.config.features.sample_rate_hz
            audio = AudioImporter.read_wav(wav_path, rate)
            if chunk_frames:
                post = recognizer.posteriors_streaming(audio, chunk_frames)
            else:
                post = recognizer.posteriors(audio)
            text = ctc_greedy_decode(post, recognizer.vocab) if len(post) else ""
            if posteriors_path is not None:
                Path(posteriors_path).write_text(
                    dump_json(
                        {
                            "model": recognizer.config.name,
                            "frames": len(post),
                            "posteriors": post.tolist(),
                        }
                    ),
                    encoding="utf-8",
                )
        except (DavidError, OSError) as e:
            return None, _fail("Recognition", e)
        logger.info(f"{wav_path}: '{text}'")
        return text, ExitCode.OK

    def synthesize(
        self,
        text: str,
        out_path: Path,
        model: str = "tts",
        chunk_frames: Optional[int] = None,
        durations_override: Optional[Sequence[int]] = None,
    ) -> Tuple[Optional[AudioBuffer], ExitCode]:
        """A single override duration applies to every character."""
        if durations_override is not None and len(durations_override) == 1:
            durations_override = list(durations_override) * len(text)
        try:
            tts = self._model(model, TTSModel)
            audio = synthesize(text, tts, durations_override, chunk_frames)
            write_wav(out_path, audio)
        except (DavidError, OSError) as e:
            return None, _fail("Synthesis", e)
        return audio, ExitCode.OK

    def reference(self, name: str, out_path: Path) -> ExitCode:
        """Write a reference model bundle (weights from the configured seed)."""
        try:
            match name:
                case "speechnet1" | "speechnet2":
                    model = SpeechRecognizer.reference(name, self.config.seed)
                case "tts":
                    model = reference_tts_model(self.config.seed)
                case "vision":
                    model = build_vision_graph()
                case _:
                    raise ConfigError(
                        f"Unknown reference model '{name}', pick one of "
                        f"{', '.join(REFERENCE_MODELS)}"
                    )
            save_model(out_path, model)
        except (DavidError, OSError) as e:
            return _fail("Reference export", e)
        return ExitCode.OK


class ScenarioController:
    """Runs scenario scripts and writes reports and plots."""

    def __init__(
        self, config: PlatformConfig, catalog: Optional[FirmwareCatalog] = None
    ):
        self.config = config
        self.catalog = catalog

    def run(
        self,
        script_path: Path,
        report_path: Optional[Path] = None,
        plot_path: Optional[Path] = None,
    ) -> Tuple[Optional[ScenarioReport], ExitCode]:
        try:
            script = ScenarioScript.load_json(script_path)
        except DavidError as e:
            logger.error(f"Script error: {e}")
            return None, ExitCode.AUDIT
        try:
            report = run_scenario(script, self.config, self.catalog)
            if report_path is not None:
                report.save(report_path)
                logger.info(f"Report written to {report_path}")
            if plot_path is not None:
                fig = PlottingUtils.power_timeline(
                    report.ledger.to_frame(), title=Path(script_path).stem
                )
                PlottingUtils.write_html(fig, plot_path)
        except (DavidError, OSError) as e:
            return None, _fail("Scenario", e)
        if report.has_violations:
            logger.warning(f"Privacy audit lists {len(report.audit)} denial(s)")
            return report, ExitCode.AUDIT
        return report, ExitCode.OK

# sim/platform.py
"""The whole toy: hub, three nodes, the privacy bus and the app, driven by a script."""

import hashlib
from fractions import Fraction
from typing import Dict, Optional

import numpy as np
import simpy

from app.config import PlatformConfig
from core.ctc import ctc_greedy_decode
from core.dataio import AudioImporter
from core.dsp import AudioBuffer
from core.errors import ConfigError, DavidError, ZeroCapacity, ZeroPower
from core.privacy import (
    Delivery,
    DeviceId,
    Message,
    MsgType,
    PrivacyBus,
    SecureReceiver,
    WireType,
)
from core.tts import synthesize
from sim.actuators import ActuatorBank
from sim.energy import US_PER_S, EnergyLedger, PowerState, battery_life, to_us
from sim.firmware import (
    BODY_KEYPOINTS,
    EMBEDDING_DIM,
    EXPRESSION_CLASSES,
    FACE_LANDMARKS,
    GESTURE_CLASSES,
    HAND_KEYPOINTS,
    Firmware,
    FirmwareRole,
    reference_firmware,
)
from sim.nodes import HubSim, NodeSim, analytics_summary, as_list, confidence_of
from sim.scenario import (
    ScenarioReport,
    ScenarioScript,
    Stimulus,
    StimulusKind,
    VisualKind,
)
from utils.logger import logger

NODE_DEVICES = {
    "vision": DeviceId.VISION,
    "audio": DeviceId.AUDIO,
    "tts": DeviceId.TTS,
}
STREAM_CHUNK_BYTES = 64


def device_name(device: int) -> str:
    try:
        return DeviceId(device).name.lower()
    except ValueError:
        return str(device)


def _parse_device(value) -> int:
    if isinstance(value, str):
        try:
            return int(DeviceId[value.upper()])
        except KeyError:
            raise ConfigError(f"Unknown device '{value}'")
    return int(value)


def _parse_msg_type(value) -> int:
    if isinstance(value, str):
        try:
            return int(MsgType[value.upper()])
        except KeyError:
            raise ConfigError(f"Unknown message type '{value}'")
    return int(value)


class FirmwareCatalog:
    """Builds bundled firmware images by name and keeps them for reuse."""

    def __init__(self, config: PlatformConfig):
        self.config = config
        self._built: Dict[str, Firmware] = {}

    def size_for(self, name: str) -> int:
        fw = self.config.firmware
        match name:
            case "vision":
                return fw.vision_bytes
            case "tts":
                return fw.tts_bytes
            case _:
                return fw.audio_bytes

    def get(self, name: str) -> Firmware:
        if name not in self._built:
            self._built[name] = reference_firmware(
                name,
                seed=self.config.seed,
                size_bytes=self.size_for(name),
                budget=self.config.node_budget(),
                features=self.config.features,
            )
        return self._built[name]


class Platform:
    """
    One simulated toy. Single use: build it, call run(script) once.

    Everything happens on one simpy timeline in integer microseconds.
    Messages between devices go through the privacy bus; allowed deliveries
    are routed to the hub, the TTS node or the app right away.
    """

    def __init__(
        self,
        config: Optional[PlatformConfig] = None,
        catalog: Optional[FirmwareCatalog] = None,
    ):
        self.config = config or PlatformConfig()
        self.catalog = catalog or FirmwareCatalog(self.config)
        self.env = simpy.Environment()
        self.ledger = EnergyLedger(self.config.power.battery_wh)
        self.report = ScenarioReport(ledger=self.ledger)
        self.actuators = ActuatorBank(
            self.config.embodiment, self.config.action_overrides
        )
        self.bus = PrivacyBus()
        self.rng = np.random.default_rng(self.config.seed)
        self.hub = HubSim(
            self.env, self.config.hub, self.config.power, self.ledger, self._log
        )
        initial = {
            "vision": "vision",
            "audio": self.config.firmware.audio_model,
            "tts": "tts",
        }
        self.nodes: Dict[str, NodeSim] = {
            name: NodeSim(
                self.env,
                name,
                NODE_DEVICES[name],
                self.catalog.get(initial[name]),
                self.config.power,
                self.ledger,
                self._log,
            )
            for name in NODE_DEVICES
        }
        seed_text = f"david-app-{self.config.seed}"
        self.app_key = hashlib.sha256(seed_text.encode()).digest()
        self.app_receiver: Optional[SecureReceiver] = None
        self._utterance_id = 0
        self._stream_seq = 0
        self._speech_cache: Dict[tuple, AudioBuffer] = {}
        self._script: Optional[ScenarioScript] = None
        self._done = False

    # ===== Log =====

    def _log(self, device: str, event: str, details: Optional[dict] = None):
        now = self.env.now
        entry = {"t_us": now, "t_s": now / US_PER_S, "device": device, "event": event}
        entry.update(details or {})
        self.report.events.append(entry)

    def _error(self, source: str, error: Exception):
        now = self.env.now
        self.report.errors.append(
            {
                "t_us": now,
                "t_s": now / US_PER_S,
                "source": source,
                "error": type(error).__name__,
                "message": str(error),
            }
        )
        logger.warning(f"{source} at {now} us: {type(error).__name__}: {error}")

    # ===== Bus =====

    def send(
        self, msg: Message, src: int, dst: int, flags: Optional[int] = None
    ) -> bool:
        """Put a message on the bus; True when it was delivered."""
        try:
            decision = self.bus.send(msg, src, dst, flags=flags, t_us=self.env.now)
        except DavidError as e:
            self._error(f"bus:{device_name(src)}", e)
            return False
        if not decision.allowed:
            self._log(
                "bus",
                "egress_denied",
                {
                    "src": device_name(src),
                    "dst": device_name(dst),
                    "msg_type": f"0x{msg.msg_type:02X}",
                    "reason": str(decision.reason),
                },
            )
            return False
        for delivery in self.bus.drain(dst):
            self._route(int(dst), delivery)
        return True

    def _route(self, dst: int, delivery: Delivery):
        match dst:
            case DeviceId.HUB:
                self._hub_receive(delivery)
            case DeviceId.TTS:
                self._tts_receive(delivery)
            case DeviceId.APP:
                self._app_receive(delivery)
            case _:
                self._log(
                    device_name(dst),
                    "received",
                    {"msg_type": f"0x{delivery.msg.msg_type:02X}"},
                )

    # ===== Hub =====

    def _hub_receive(self, delivery: Delivery):
        msg = delivery.msg
        match msg.msg_type:
            case MsgType.WAKE:
                self.hub.wake(f"wake word '{msg.fields.get('word', '')}'")
            case MsgType.PERSON if self.config.hub.vision_wake:
                self.hub.wake("person detected")
            case MsgType.PAIR_REQUEST:
                self.hub.wake("app")
                self._pair(int(msg.fields.get("device", DeviceId.VISION)))
            case MsgType.TRANSCRIPT:
                self._dialog(str(msg.fields.get("text", "")))
            case MsgType.SPEECH_DONE:
                self.hub.touch()
            case _:
                self._log(
                    "hub",
                    "analytics",
                    {
                        "src": device_name(delivery.src),
                        "msg_type": f"0x{msg.msg_type:02X}",
                        **analytics_summary(msg.fields),
                    },
                )

    def _pair(self, device: int):
        channel = self.bus.channel(device)
        try:
            channel.pair(self.app_key)
        except DavidError as e:
            self._error("hub", e)
            return
        self.app_receiver = SecureReceiver.for_pairing(self.app_key, device)
        self._log("hub", "paired", {"node": device_name(device)})

    def _dialog(self, text: str):
        if not self.hub.is_active:
            self._log("hub", "transcript_ignored", {"text": text})
            return
        self.hub.touch()
        rule = self.hub.respond(text)
        if rule is None:
            self._log("hub", "no_intent", {"text": text})
            return
        self._utterance_id = (self._utterance_id + 1) % 65536
        self._log(
            "hub",
            "intent",
            {"intent": rule.intent, "response": rule.response, "text": text},
        )
        speak = Message(
            MsgType.SPEAK, {"text": rule.response, "utterance_id": self._utterance_id}
        )
        self.send(speak, DeviceId.HUB, DeviceId.TTS)
        if rule.action:
            self.dispatch_action(rule.action)

    def dispatch_action(self, action: str):
        try:
            entry = self.actuators.dispatch_action(action, self.env.now)
        except DavidError as e:
            self._error("hub", e)
            return
        self.report.actions.append(entry.to_dict())
        self._log(
            "actuators",
            "action",
            {"action": action, "start_s": entry.start_us / US_PER_S},
        )

    # ===== Nodes =====

    def _node_ready(self, node: NodeSim, role: FirmwareRole, what: str) -> bool:
        reason = None
        if not node.accepts_stimuli:
            reason = "flashing"
        elif node.firmware.role != role:
            reason = f"runs {node.firmware.role} firmware"
        if reason is None:
            return True
        self._log(node.name, "stimulus_dropped", {"stimulus": what, "reason": reason})
        return False

    def _tts_receive(self, delivery: Delivery):
        msg = delivery.msg
        if msg.msg_type != MsgType.SPEAK:
            return
        node = self.nodes["tts"]
        if not self._node_ready(node, FirmwareRole.TTS_SPEAKER, "speak"):
            return
        text = str(msg.fields.get("text", ""))
        utterance_id = int(msg.fields.get("utterance_id", 0))
        fw = node.firmware
        try:
            audio = self._synthesize(text, fw)
        except DavidError as e:
            self._error("tts", e)
            return
        n = len(audio.samples)
        duration = to_us(Fraction(n, audio.sample_rate_hz))

        def done():
            self.report.responses.append(
                {
                    "t_s": self.env.now / US_PER_S,
                    "text": text,
                    "utterance_id": utterance_id,
                    "samples": n,
                    "duration_s": duration / US_PER_S,
                }
            )
            self._log("tts", "spoken", {"text": text, "samples": n})
            finished = Message(
                MsgType.SPEECH_DONE, {"utterance_id": utterance_id, "samples": n}
            )
            self.send(finished, DeviceId.TTS, DeviceId.HUB)

        self.env.process(node.run(duration, fw.power_mw(), [(duration, done)]))

    def _synthesize(self, text: str, fw: Firmware) -> AudioBuffer:
        key = (fw.name, text)
        if key not in self._speech_cache:
            self._speech_cache[key] = synthesize(
                text, fw.model, chunk_frames=self.config.firmware.tts_chunk_frames
            )
        return self._speech_cache[key]

    def _app_receive(self, delivery: Delivery):
        msg = delivery.msg
        if msg.msg_type != MsgType.SECURE_STREAM or self.app_receiver is None:
            self._log("app", "received", {"msg_type": f"0x{msg.msg_type:02X}"})
            return
        try:
            self.app_receiver.open(bytes(msg.fields["chunk"]))
        except DavidError as e:
            self._error("app", e)
            return
        self.report.app_chunks += 1

    def _stream_chunk(self):
        channel = self.bus.channel(DeviceId.VISION)
        frame = self.rng.integers(0, 256, size=STREAM_CHUNK_BYTES, dtype=np.uint8)
        self._stream_seq += 1
        chunk = channel.stream_chunk(frame.tobytes())
        msg = Message(
            MsgType.SECURE_STREAM, {"sequence": self._stream_seq, "chunk": chunk}
        )
        self.send(msg, DeviceId.VISION, DeviceId.APP)

    def _analytics(self, kind: VisualKind) -> Message:
        rng = self.rng
        match kind:
            case VisualKind.FACE:
                return Message(
                    MsgType.FACE_DETECTION,
                    {
                        "box": as_list(rng.uniform(0, 1, 4)),
                        "expression": int(rng.integers(EXPRESSION_CLASSES)),
                        "landmarks": as_list(rng.uniform(0, 1, 2 * FACE_LANDMARKS)),
                    },
                )
            case VisualKind.GESTURE:
                return Message(
                    MsgType.GESTURE,
                    {
                        "gesture": int(rng.integers(GESTURE_CLASSES)),
                        "keypoints": as_list(rng.uniform(0, 1, 2 * HAND_KEYPOINTS)),
                    },
                )
            case VisualKind.PERSON:
                return Message(
                    MsgType.PERSON,
                    {
                        "box": as_list(rng.uniform(0, 1, 4)),
                        "pose": as_list(rng.uniform(0, 1, 3 * BODY_KEYPOINTS)),
                    },
                )
            case VisualKind.EMBEDDING_EXPORT:
                return Message(
                    MsgType.FACE_EMBEDDING,
                    {"embedding": as_list(rng.normal(0, 1, EMBEDDING_DIM))},
                )

    # ===== Stimuli =====

    def inject_audio(self, params: dict):
        node = self.nodes["audio"]
        if not self._node_ready(node, FirmwareRole.AUDIO_ASR, "inject_audio"):
            return
        fw = node.firmware
        recognizer = fw.model
        rate = recognizer.config.features.sample_rate_hz
        if "wav" in params:
            wav = params["wav"]
            path = self._script.resolve(wav) if self._script else wav
            audio = AudioImporter.read_wav(path, rate)
        else:
            n = int(round(float(params["duration_s"]) * rate))
            audio = AudioBuffer(np.zeros(n), rate)
        if "utterance" in params:
            text, confidence = str(params["utterance"]).lower(), 1.0
        else:
            post = recognizer.posteriors(audio)
            text = ctc_greedy_decode(post, recognizer.vocab) if len(post) else ""
            confidence = confidence_of(post)
        latency = fw.latency_us()
        clip = to_us(Fraction(len(audio.samples), audio.sample_rate_hz))

        def emit():
            self.report.transcripts.append(
                {
                    "t_s": self.env.now / US_PER_S,
                    "text": text,
                    "model": fw.name,
                    "confidence": confidence,
                }
            )
            self._log("audio", "transcript", {"text": text, "model": fw.name})
            word = self.hub.wake_word_in(text)
            if word:
                wake = Message(MsgType.WAKE, {"word": word})
                self.send(wake, DeviceId.AUDIO, DeviceId.HUB)
            transcript = Message(
                MsgType.TRANSCRIPT, {"text": text, "confidence": confidence}
            )
            self.send(transcript, DeviceId.AUDIO, DeviceId.HUB)

        self.env.process(node.run(latency + clip, fw.power_mw(), [(latency, emit)]))

    def visual_event(self, kind: VisualKind):
        node = self.nodes["vision"]
        if not self._node_ready(node, FirmwareRole.VISION, "visual_event"):
            return
        fw = node.firmware
        streaming = self.bus.channel(DeviceId.VISION).is_paired
        msg = self._analytics(kind)

        def emit():
            self._log("vision", "detection", {"event": str(kind)})
            self.send(msg, DeviceId.VISION, DeviceId.HUB)
            if streaming and kind != VisualKind.EMBEDDING_EXPORT:
                self._stream_chunk()

        duration = to_us(self.config.firmware.vision_event_s)
        self.env.process(node.run(duration, fw.power_mw(streaming), [(0, emit)]))

    def app_pair_request(self):
        request = Message(MsgType.PAIR_REQUEST, {"device": int(DeviceId.VISION)})
        self.send(request, DeviceId.APP, DeviceId.HUB)

    def reflash(self, node: str, firmware: str):
        """Write a bundled image onto a node; Busy if it is already flashing."""
        if node not in self.nodes:
            raise ConfigError(f"Unknown node '{node}'")
        fw = self.catalog.get(firmware)
        return self.nodes[node].reflash(fw)

    def inject_message(self, params: dict):
        src = _parse_device(params["src"])
        dst = _parse_device(params["dst"])
        msg_type = _parse_msg_type(params["msg_type"])
        schema = self.bus.registry.get(msg_type)
        known = {f.name: f for f in schema.fields}
        fields = {}
        for name, value in (params.get("fields") or {}).items():
            spec = known.get(name)
            is_bytes = spec is not None and spec.wire_type == WireType.BYTES
            if is_bytes and isinstance(value, str):
                value = bytes.fromhex(value)
            fields[name] = value
        self._log("bus", "injected", {"src": device_name(src), "dst": device_name(dst)})
        self.send(Message(msg_type, fields), src, dst, flags=params.get("flags"))

    def _handle(self, st: Stimulus):
        p = st.params
        match st.kind:
            case StimulusKind.INJECT_AUDIO:
                self.inject_audio(p)
            case StimulusKind.VISUAL_EVENT:
                self.visual_event(VisualKind(p["event"]))
            case StimulusKind.APP_PAIR_REQUEST:
                self.app_pair_request()
            case StimulusKind.REFLASH:
                self.reflash(p["node"], p["firmware"])
            case StimulusKind.INJECT_MESSAGE:
                self.inject_message(p)

    def _driver(self, script: ScenarioScript):
        for st in script.stimuli:
            if st.t_us > self.env.now:
                yield self.env.timeout(st.t_us - self.env.now)
            if st.kind == StimulusKind.END:
                self._log("platform", "end")
                return
            try:
                self._handle(st)
            except DavidError as e:
                self._error(str(st.kind), e)

    # ===== Run =====

    def run(self, script: ScenarioScript) -> ScenarioReport:
        if self._done:
            raise ConfigError("A Platform runs one scenario; build a new one")
        self._done = True
        self._script = script
        logger.info(f"Running scenario: {len(script.stimuli)} stimuli")
        self.env.run(until=self.env.process(self._driver(script)))
        end = script.end_us
        self.actuators.flush(self.ledger, end)
        self.ledger.close(end)
        self._fill_report(end)
        logger.info(
            f"Scenario done: {self.report.total_energy_mj:.4g} mJ over "
            f"{self.report.duration_s:.4g} s, audit {len(self.report.audit)}"
        )
        return self.report

    def _fill_report(self, end_us: int):
        r = self.report
        r.energy_mj = self.ledger.energy_by_device_mj()
        r.total_energy_mj = self.ledger.energy_mj()
        r.duration_s = end_us / US_PER_S
        r.audit = [a.to_dict() for a in self.bus.audit]
        if end_us > 0:
            active = self.ledger.time_in_state_us("hub", PowerState.ACTIVE)
            r.hub_active_fraction = active / end_us
            try:
                r.average_power_mw = self.ledger.average_power_mw(end_us)
                r.battery_life_h = battery_life(
                    r.average_power_mw, self.config.power.battery_wh
                )
            except (ZeroPower, ZeroCapacity) as e:
                logger.warning(f"No battery estimate: {e}")


def run_scenario(
    script: ScenarioScript,
    config: Optional[PlatformConfig] = None,
    catalog: Optional[FirmwareCatalog] = None,
) -> ScenarioReport:
    """Execute a script on a fresh platform and return its report."""
    return Platform(config, catalog).run(script)


# core/privacy.py
"""
Typed bus messages, taint labels and the egress guard.

Every schema field is labelled Public or PID. The guard lets PID values leave
their source node only as authenticated ciphertext on a channel paired with
the companion app.
"""

import hashlib
import hmac
import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum, StrEnum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from converters.framing import FLAG_PID, BusFrame, decode_frame, encode_frame
from core.errors import (
    AlreadyPaired,
    AuthenticationFailure,
    ConfigError,
    FrameError,
    NotPaired,
    Truncated,
    UnknownMessageType,
)
from utils.logger import logger


class TaintLabel(StrEnum):
    PUBLIC = "public"
    PID = "pid"


class WireType(StrEnum):
    U8 = "u8"
    U16 = "u16"
    U32 = "u32"
    I16 = "i16"
    F32 = "f32"
    F32_ARRAY = "f32_array"
    BYTES = "bytes"
    STR = "str"


class DeviceId(IntEnum):
    HUB = 0
    VISION = 1
    AUDIO = 2
    TTS = 3
    APP = 4


class MsgType(IntEnum):
    FACE_DETECTION = 0x10
    GESTURE = 0x11
    PERSON = 0x12
    FACE_EMBEDDING = 0x13
    RAW_IMAGE = 0x14
    SECURE_STREAM = 0x15
    TRANSCRIPT = 0x20
    WAKE = 0x21
    RAW_AUDIO = 0x22
    SPEAK = 0x30
    SPEECH_DONE = 0x31
    PAIR_REQUEST = 0x40


# ===== Schemas =====

MAX_FIELDS = 32  # presence bitmap is a u32


@dataclass(frozen=True)
class FieldSpec:
    name: str
    wire_type: WireType
    taint: TaintLabel = TaintLabel.PUBLIC

    def __post_init__(self):
        object.__setattr__(self, "wire_type", WireType(self.wire_type))
        object.__setattr__(self, "taint", TaintLabel(self.taint))


@dataclass(frozen=True)
class MessageSchema:
    msg_type: int
    name: str
    fields: Tuple[FieldSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ConfigError(f"Schema {self.name}: duplicate field names {names}")
        if len(names) > MAX_FIELDS:
            raise ConfigError(f"Schema {self.name}: more than {MAX_FIELDS} fields")
        if not 0 <= self.msg_type <= 0xFF:
            raise ConfigError(f"Schema {self.name}: msg_type {self.msg_type} > 0xFF")

    def field(self, name: str) -> FieldSpec:
        for spec in self.fields:
            if spec.name == name:
                return spec
        raise KeyError(name)

    @property
    def is_secure_stream(self) -> bool:
        return self.msg_type == MsgType.SECURE_STREAM

    def to_dict(self) -> dict:
        return {
            "msg_type": self.msg_type,
            "name": self.name,
            "fields": [
                {"name": f.name, "type": str(f.wire_type), "taint": str(f.taint)}
                for f in self.fields
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MessageSchema":
        try:
            fields = tuple(
                FieldSpec(f["name"], f["type"], f.get("taint", TaintLabel.PUBLIC))
                for f in data["fields"]
            )
            return cls(int(data["msg_type"]), data["name"], fields)
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"Malformed schema entry {data}: {e}")


class SchemaRegistry:
    """msg_type -> MessageSchema."""

    def __init__(self, schemas: Iterable[MessageSchema] = ()):
        self._schemas: Dict[int, MessageSchema] = {}
        for schema in schemas:
            self.register(schema)

    def register(self, schema: MessageSchema):
        existing = self._schemas.get(schema.msg_type)
        if existing is not None and existing != schema:
            raise ConfigError(
                f"msg_type 0x{schema.msg_type:02X} is already {existing.name}"
            )
        self._schemas[schema.msg_type] = schema

    def get(self, msg_type: int) -> MessageSchema:
        try:
            return self._schemas[msg_type]
        except KeyError:
            raise UnknownMessageType(f"No schema for msg_type 0x{msg_type:02X}")

    def __contains__(self, msg_type: int) -> bool:
        return msg_type in self._schemas

    def __iter__(self):
        return iter(sorted(self._schemas.values(), key=lambda s: s.msg_type))

    def __len__(self) -> int:
        return len(self._schemas)

    def merge(self, other: "SchemaRegistry") -> "SchemaRegistry":
        for schema in other:
            self.register(schema)
        return self

    # ===== Manifests =====

    def to_manifest(self) -> dict:
        return {"messages": [s.to_dict() for s in self]}

    @classmethod
    def from_manifest(cls, manifest: dict) -> "SchemaRegistry":
        if "messages" not in manifest:
            raise ConfigError("Manifest has no 'messages' list")
        return cls(MessageSchema.from_dict(m) for m in manifest["messages"])

    @classmethod
    def load_json(cls, path: Path) -> "SchemaRegistry":
        with open(path, "r", encoding="utf-8") as f:
            registry = cls.from_manifest(json.load(f))
        logger.info(f"Loaded {len(registry)} message schemas from {path}")
        return registry

    def save_json(self, path: Path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_manifest(), f, indent=2, sort_keys=True)


_P = TaintLabel.PUBLIC
_PID = TaintLabel.PID

DEFAULT_MANIFESTS: Dict[str, Tuple[MessageSchema, ...]] = {
    "vision": (
        MessageSchema(
            MsgType.FACE_DETECTION,
            "face_detection",
            (
                FieldSpec("box", WireType.F32_ARRAY, _P),
                FieldSpec("expression", WireType.U8, _P),
                FieldSpec("landmarks", WireType.F32_ARRAY, _P),
                FieldSpec("embedding", WireType.F32_ARRAY, _PID),
            ),
        ),
        MessageSchema(
            MsgType.GESTURE,
            "gesture",
            (
                FieldSpec("gesture", WireType.U8, _P),
                FieldSpec("keypoints", WireType.F32_ARRAY, _P),
            ),
        ),
        MessageSchema(
            MsgType.PERSON,
            "person",
            (
                FieldSpec("box", WireType.F32_ARRAY, _P),
                FieldSpec("pose", WireType.F32_ARRAY, _P),
            ),
        ),
        MessageSchema(
            MsgType.FACE_EMBEDDING,
            "face_embedding",
            (FieldSpec("embedding", WireType.F32_ARRAY, _PID),),
        ),
        MessageSchema(
            MsgType.RAW_IMAGE,
            "raw_image",
            (
                FieldSpec("width", WireType.U16, _P),
                FieldSpec("height", WireType.U16, _P),
                FieldSpec("pixels", WireType.BYTES, _PID),
            ),
        ),
        MessageSchema(
            MsgType.SECURE_STREAM,
            "secure_stream",
            (
                FieldSpec("sequence", WireType.U32, _P),
                FieldSpec("chunk", WireType.BYTES, _PID),
            ),
        ),
    ),
    "audio": (
        MessageSchema(
            MsgType.TRANSCRIPT,
            "transcript",
            (
                FieldSpec("text", WireType.STR, _P),
                FieldSpec("confidence", WireType.F32, _P),
            ),
        ),
        MessageSchema(MsgType.WAKE, "wake", (FieldSpec("word", WireType.STR, _P),)),
        MessageSchema(
            MsgType.RAW_AUDIO,
            "raw_audio",
            (FieldSpec("samples", WireType.BYTES, _PID),),
        ),
    ),
    "tts": (
        MessageSchema(
            MsgType.SPEAK,
            "speak",
            (
                FieldSpec("text", WireType.STR, _P),
                FieldSpec("utterance_id", WireType.U16, _P),
            ),
        ),
        MessageSchema(
            MsgType.SPEECH_DONE,
            "speech_done",
            (
                FieldSpec("utterance_id", WireType.U16, _P),
                FieldSpec("samples", WireType.U32, _P),
            ),
        ),
    ),
    "hub": (
        MessageSchema(
            MsgType.PAIR_REQUEST,
            "pair_request",
            (FieldSpec("device", WireType.U8, _P),),
        ),
    ),
}


def default_registry() -> SchemaRegistry:
    """Schemas of every bundled firmware manifest."""
    registry = SchemaRegistry()
    for schemas in DEFAULT_MANIFESTS.values():
        registry.merge(SchemaRegistry(schemas))
    return registry


# ===== Messages =====


@dataclass(frozen=True)
class Message:
    msg_type: int
    fields: Dict[str, Any] = field(default_factory=dict)


def populated_pid_fields(msg: Message, schema: MessageSchema) -> List[str]:
    """Names of populated PID fields; fields unknown to the schema count as PID."""
    names = []
    known = {f.name: f for f in schema.fields}
    for name, value in msg.fields.items():
        if value is None:
            continue
        spec = known.get(name)
        if spec is None or spec.taint == TaintLabel.PID:
            names.append(name)
    return names


def message_flags(msg: Message, schema: MessageSchema) -> int:
    return FLAG_PID if populated_pid_fields(msg, schema) else 0


_SCALARS = {
    WireType.U8: struct.Struct("<B"),
    WireType.U16: struct.Struct("<H"),
    WireType.U32: struct.Struct("<I"),
    WireType.I16: struct.Struct("<h"),
    WireType.F32: struct.Struct("<f"),
}
_LEN = struct.Struct("<H")
_BITMAP = struct.Struct("<I")


def _encode_value(spec: FieldSpec, value: Any) -> bytes:
    try:
        match spec.wire_type:
            case WireType.F32_ARRAY:
                arr = np.asarray(value, dtype="<f4").reshape(-1)
                return _LEN.pack(len(arr)) + arr.tobytes()
            case WireType.BYTES:
                raw = bytes(value)
                return _LEN.pack(len(raw)) + raw
            case WireType.STR:
                raw = str(value).encode("utf-8")
                return _LEN.pack(len(raw)) + raw
            case _:
                return _SCALARS[spec.wire_type].pack(value)
    except (struct.error, OverflowError, ValueError, TypeError) as e:
        raise FrameError(
            f"Field {spec.name}: cannot encode {value!r} as {spec.wire_type}: {e}"
        )


def encode_payload(msg: Message, schema: MessageSchema) -> bytes:
    """Presence bitmap (u32) then each present field in schema order."""
    unknown = set(msg.fields) - {f.name for f in schema.fields}
    if unknown:
        raise FrameError(f"Fields {sorted(unknown)} are not in schema {schema.name}")
    bitmap = 0
    parts = []
    for bit, spec in enumerate(schema.fields):
        value = msg.fields.get(spec.name)
        if value is None:
            continue
        bitmap |= 1 << bit
        parts.append(_encode_value(spec, value))
    return _BITMAP.pack(bitmap) + b"".join(parts)


def _take(data: bytes, pos: int, n: int, what: str) -> Tuple[bytes, int]:
    if pos + n > len(data):
        raise Truncated(f"Payload ends inside {what}")
    return data[pos : pos + n], pos + n


def decode_payload(data: bytes, schema: MessageSchema) -> Message:
    raw, pos = _take(data, 0, _BITMAP.size, "presence bitmap")
    (bitmap,) = _BITMAP.unpack(raw)
    if bitmap >> len(schema.fields):
        raise FrameError(f"Bitmap 0x{bitmap:08X} marks fields {schema.name} lacks")
    fields: Dict[str, Any] = {}
    for bit, spec in enumerate(schema.fields):
        if not bitmap & (1 << bit):
            continue
        if spec.wire_type in _SCALARS:
            codec = _SCALARS[spec.wire_type]
            raw, pos = _take(data, pos, codec.size, spec.name)
            fields[spec.name] = codec.unpack(raw)[0]
            continue
        raw, pos = _take(data, pos, _LEN.size, spec.name)
        (count,) = _LEN.unpack(raw)
        match spec.wire_type:
            case WireType.F32_ARRAY:
                raw, pos = _take(data, pos, 4 * count, spec.name)
                fields[spec.name] = np.frombuffer(raw, dtype="<f4").astype(np.float32)
            case WireType.BYTES:
                fields[spec.name], pos = _take(data, pos, count, spec.name)
            case WireType.STR:
                raw, pos = _take(data, pos, count, spec.name)
                fields[spec.name] = raw.decode("utf-8")
    if pos != len(data):
        raise FrameError(f"{len(data) - pos} trailing payload bytes")
    return Message(schema.msg_type, fields)


def message_to_frame(
    msg: Message,
    src: int,
    dst: int,
    registry: SchemaRegistry,
    flags: Optional[int] = None,
) -> BusFrame:
    """Frame a message; flags default to the schema-derived PID bit."""
    schema = registry.get(msg.msg_type)
    if flags is None:
        flags = message_flags(msg, schema)
    payload = encode_payload(msg, schema)
    return BusFrame(int(src), int(dst), schema.msg_type, flags, payload)


def frame_to_message(frame: BusFrame, registry: SchemaRegistry) -> Message:
    return decode_payload(frame.payload, registry.get(frame.msg_type))


# ===== Secure channel =====

NONCE_SIZE = 8
TAG_SIZE = 16
_PAIR_CONTEXT = b"david-pair"


class ChannelState(StrEnum):
    UNPAIRED = "unpaired"
    PAIRED = "paired"


def derive_session_key(app_key: bytes, device: int) -> bytes:
    context = _PAIR_CONTEXT + bytes([int(device)])
    return hmac.new(app_key, context, hashlib.sha256).digest()


def _keystream(key: bytes, nonce: bytes, n: int) -> bytes:
    blocks = []
    for counter in range(-(-n // 32)):
        block = hmac.new(key, nonce + counter.to_bytes(4, "big"), hashlib.sha256)
        blocks.append(block.digest())
    return b"".join(blocks)[:n]


def _xor(data: bytes, stream: bytes) -> bytes:
    a = np.frombuffer(data, dtype=np.uint8)
    b = np.frombuffer(stream, dtype=np.uint8)
    return (a ^ b).tobytes()


def _tag(key: bytes, nonce: bytes, ciphertext: bytes) -> bytes:
    return hmac.new(key, nonce + ciphertext, hashlib.sha256).digest()[:TAG_SIZE]


class SecureChannel:
    """
    Sender side of the node-to-app link.

    Chunks are ``nonce (8, big-endian counter) || ciphertext || tag (16)`` and
    can only be produced once the channel is paired. One producer per channel.
    """

    def __init__(self, device: int, app_device: int = DeviceId.APP):
        self.device = int(device)
        self.app_device = int(app_device)
        self._key: Optional[bytes] = None
        self._nonce = 0

    @property
    def state(self) -> ChannelState:
        return ChannelState.UNPAIRED if self._key is None else ChannelState.PAIRED

    @property
    def is_paired(self) -> bool:
        return self._key is not None

    @property
    def last_nonce(self) -> int:
        return self._nonce

    def pair(self, app_key: bytes) -> "SecureChannel":
        if self.is_paired:
            raise AlreadyPaired(f"Device {self.device} is already paired")
        self._key = derive_session_key(app_key, self.device)
        self._nonce = 0
        logger.info(f"Device {self.device} paired with app device {self.app_device}")
        return self

    def unpair(self):
        self._key = None
        self._nonce = 0

    def stream_chunk(self, plaintext: bytes) -> bytes:
        if self._key is None:
            raise NotPaired(f"Device {self.device} cannot stream before pairing")
        self._nonce += 1
        nonce = self._nonce.to_bytes(NONCE_SIZE, "big")
        ciphertext = _xor(plaintext, _keystream(self._key, nonce, len(plaintext)))
        return nonce + ciphertext + _tag(self._key, nonce, ciphertext)

    def verify(self, chunk: bytes) -> bool:
        """Tag check only; does not touch channel state."""
        if self._key is None or len(chunk) < NONCE_SIZE + TAG_SIZE:
            return False
        nonce, ciphertext, tag = _split_chunk(chunk)
        return hmac.compare_digest(tag, _tag(self._key, nonce, ciphertext))


def _split_chunk(chunk: bytes) -> Tuple[bytes, bytes, bytes]:
    return chunk[:NONCE_SIZE], chunk[NONCE_SIZE:-TAG_SIZE], chunk[-TAG_SIZE:]


class SecureReceiver:
    """App side: authenticates, rejects replays and decrypts chunks."""

    def __init__(self, session_key: bytes):
        self._key = session_key
        self.last_nonce = 0

    @classmethod
    def for_pairing(cls, app_key: bytes, device: int) -> "SecureReceiver":
        return cls(derive_session_key(app_key, device))

    def open(self, chunk: bytes) -> bytes:
        if len(chunk) < NONCE_SIZE + TAG_SIZE:
            raise AuthenticationFailure(f"Chunk of {len(chunk)} bytes is too short")
        nonce, ciphertext, tag = _split_chunk(chunk)
        if not hmac.compare_digest(tag, _tag(self._key, nonce, ciphertext)):
            raise AuthenticationFailure("Chunk tag does not verify")
        counter = int.from_bytes(nonce, "big")
        if counter <= self.last_nonce:
            raise AuthenticationFailure(
                f"Nonce {counter} not above last accepted {self.last_nonce}"
            )
        self.last_nonce = counter
        return _xor(ciphertext, _keystream(self._key, nonce, len(ciphertext)))


# ===== Guard =====


class DenyReason(StrEnum):
    PRIVACY_VIOLATION = "privacy_violation"
    TAINT_FLAG_MISMATCH = "taint_flag_mismatch"


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: Optional[DenyReason] = None

    @classmethod
    def allow(cls) -> "Decision":
        return cls(True)

    @classmethod
    def deny(cls, reason: DenyReason) -> "Decision":
        return cls(False, reason)


def guard_egress(
    msg: Message,
    src: int,
    dst: int,
    registry: SchemaRegistry,
    flags: Optional[int] = None,
    channel: Optional[SecureChannel] = None,
) -> Decision:
    """
    Decide whether a message may travel from src to dst.

    Args:
        msg: Decoded message
        src, dst: Device ids
        registry: Schema registry (msg_type must be registered)
        flags: Frame flags as received; bit 0 must match the PID content
        channel: The source's secure channel, consulted for secure streams

    Returns:
        Decision.allow() or Decision.deny(reason)
    """
    schema = registry.get(msg.msg_type)
    has_pid = bool(populated_pid_fields(msg, schema))
    if flags is not None and bool(flags & FLAG_PID) != has_pid:
        return Decision.deny(DenyReason.TAINT_FLAG_MISMATCH)
    if not has_pid or int(dst) == int(src):
        return Decision.allow()
    if (
        schema.is_secure_stream
        and channel is not None
        and channel.is_paired
        and int(dst) == channel.app_device
        and set(populated_pid_fields(msg, schema)) == {"chunk"}
        and channel.verify(bytes(msg.fields["chunk"]))
    ):
        return Decision.allow()
    return Decision.deny(DenyReason.PRIVACY_VIOLATION)


# ===== Bus =====


@dataclass(frozen=True)
class Delivery:
    src: int
    msg: Message
    t_us: int = 0


@dataclass(frozen=True)
class AuditRecord:
    t_us: int
    src: int
    dst: int
    msg_type: int
    reason: DenyReason

    def to_dict(self) -> dict:
        return {
            "t_us": self.t_us,
            "src": self.src,
            "dst": self.dst,
            "msg_type": self.msg_type,
            "reason": str(self.reason),
        }


class PrivacyBus:
    """
    Shared bus: every message is framed, decoded on the far side, guarded and
    then delivered to the destination inbox. Denials go to the audit list.
    """

    def __init__(
        self,
        registry: Optional[SchemaRegistry] = None,
        channels: Optional[Dict[int, SecureChannel]] = None,
    ):
        self.registry = registry or default_registry()
        self.channels: Dict[int, SecureChannel] = dict(channels or {})
        self.inboxes: Dict[int, List[Delivery]] = {int(d): [] for d in DeviceId}
        self.audit: List[AuditRecord] = []
        self.delivered: List[Tuple[int, Delivery]] = []
        self.bytes_sent = 0

    def channel(self, device: int) -> SecureChannel:
        """The device's secure channel, created unpaired on first use."""
        device = int(device)
        if device not in self.channels:
            self.channels[device] = SecureChannel(device)
        return self.channels[device]

    def send(
        self,
        msg: Message,
        src: int,
        dst: int,
        flags: Optional[int] = None,
        t_us: int = 0,
    ) -> Decision:
        wire = encode_frame(message_to_frame(msg, src, dst, self.registry, flags))
        return self.receive(wire, t_us)

    def receive(self, wire: bytes, t_us: int = 0) -> Decision:
        """Deliver one encoded frame (decode errors propagate)."""
        frame = decode_frame(wire)
        msg = frame_to_message(frame, self.registry)
        self.bytes_sent += len(wire)
        decision = guard_egress(
            msg,
            frame.src,
            frame.dst,
            self.registry,
            flags=frame.flags,
            channel=self.channels.get(frame.src),
        )
        if decision.allowed:
            delivery = Delivery(frame.src, msg, t_us)
            self.inboxes.setdefault(frame.dst, []).append(delivery)
            self.delivered.append((frame.dst, delivery))
        else:
            record = AuditRecord(
                t_us, frame.src, frame.dst, frame.msg_type, decision.reason
            )
            self.audit.append(record)
            logger.warning(
                f"Egress denied ({decision.reason}): msg 0x{frame.msg_type:02X} "
                f"from {frame.src} to {frame.dst}"
            )
        return decision

    def drain(self, device: int) -> List[Delivery]:
        items = self.inboxes.get(int(device), [])
        self.inboxes[int(device)] = []
        return items

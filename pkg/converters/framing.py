# converters/framing.py
"""Bus frame codec: sync, header, payload and CRC-16/CCITT-FALSE trailer."""

import binascii
import struct
from dataclasses import dataclass
from typing import List

from core.errors import BadSync, CrcMismatch, FrameError, Truncated, UnsupportedVersion
from utils.logger import logger

SYNC = 0xD5
VERSION = 0x01
FLAG_PID = 0x01
MAX_PAYLOAD = 0xFFFF

# sync, version, src, dst, msg_type, flags, payload length (little-endian)
_HEADER = struct.Struct("<BBBBBBH")
_CRC = struct.Struct("<H")
HEADER_SIZE = _HEADER.size
OVERHEAD = HEADER_SIZE + _CRC.size


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor."""
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class BusFrame:
    src: int
    dst: int
    msg_type: int
    flags: int
    payload: bytes = b""

    def __post_init__(self):
        for name in ("src", "dst", "msg_type", "flags"):
            value = getattr(self, name)
            if not 0 <= value <= 0xFF:
                raise FrameError(f"Frame {name} {value} does not fit in a byte")
        if len(self.payload) > MAX_PAYLOAD:
            raise FrameError(f"Payload of {len(self.payload)} bytes exceeds 65535")
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def contains_pid(self) -> bool:
        return bool(self.flags & FLAG_PID)


def encode_frame(frame: BusFrame) -> bytes:
    """Serialize a frame; the CRC covers version through payload."""
    header = _HEADER.pack(
        SYNC,
        VERSION,
        frame.src,
        frame.dst,
        frame.msg_type,
        frame.flags,
        len(frame.payload),
    )
    body = header + frame.payload
    return body + _CRC.pack(crc16(body[1:]))


def decode_frame(data: bytes) -> BusFrame:
    """
    Parse exactly one frame.

    Raises:
        BadSync: First byte is not the sync byte
        UnsupportedVersion: Version byte is not 1
        Truncated: Fewer bytes than the header announces (or trailing bytes)
        CrcMismatch: Trailer does not match the computed CRC
    """
    if len(data) < OVERHEAD:
        raise Truncated(f"Frame of {len(data)} bytes is shorter than {OVERHEAD}")
    sync, version, src, dst, msg_type, flags, length = _HEADER.unpack_from(data)
    if sync != SYNC:
        raise BadSync(f"Expected sync 0x{SYNC:02X}, got 0x{sync:02X}")
    if version != VERSION:
        raise UnsupportedVersion(f"Frame version {version} is not supported")
    end = HEADER_SIZE + length
    if len(data) != end + _CRC.size:
        raise Truncated(f"Frame announces {length} payload bytes, got {len(data)}")
    (received,) = _CRC.unpack_from(data, end)
    expected = crc16(data[1:end])
    if received != expected:
        raise CrcMismatch(f"CRC 0x{received:04X} != computed 0x{expected:04X}")
    return BusFrame(src, dst, msg_type, flags, data[HEADER_SIZE:end])


class FrameDecoder:
    """
    Incremental decoder over a byte stream.

    Bytes before a sync byte are skipped. A candidate frame that fails its
    version or CRC check costs one byte: scanning resumes right after that
    sync byte, so the next intact frame is always recovered.
    """

    def __init__(self):
        self._buffer = bytearray()
        self.discarded = 0
        self.errors = 0

    def feed(self, data: bytes) -> List[BusFrame]:
        self._buffer.extend(data)
        frames: List[BusFrame] = []
        while True:
            start = self._buffer.find(SYNC)
            if start < 0:
                self.discarded += len(self._buffer)
                self._buffer.clear()
                return frames
            if start:
                self.discarded += start
                del self._buffer[:start]
            if len(self._buffer) < HEADER_SIZE:
                return frames
            if self._buffer[1] != VERSION:
                self._skip()
                continue
            (length,) = struct.unpack_from("<H", self._buffer, HEADER_SIZE - 2)
            total = HEADER_SIZE + length + _CRC.size
            if len(self._buffer) < total:
                return frames
            try:
                frames.append(decode_frame(bytes(self._buffer[:total])))
            except FrameError as e:
                logger.debug(f"Resync after bad frame: {e}")
                self._skip()
                continue
            del self._buffer[:total]

    def finish(self) -> List[BusFrame]:
        """End of stream: drop incomplete candidates and rescan what follows."""
        frames = self.feed(b"")
        while self._buffer:
            self._skip()
            frames.extend(self.feed(b""))
        return frames

    @property
    def pending(self) -> int:
        return len(self._buffer)

    def _skip(self):
        self.errors += 1
        self.discarded += 1
        del self._buffer[:1]

# tests/test_framing.py
import pytest
from hypothesis import given, strategies as st

from converters.framing import (
    FLAG_PID,
    HEADER_SIZE,
    OVERHEAD,
    SYNC,
    BusFrame,
    FrameDecoder,
    crc16,
    decode_frame,
    encode_frame,
)
from core.errors import BadSync, CrcMismatch, FrameError, Truncated, UnsupportedVersion

HELLO = BusFrame(src=2, dst=0, msg_type=0x20, flags=0, payload=b"hello david")


def test_crc_check_value():
    assert crc16(b"123456789") == 0x29B1


def test_layout():
    wire = encode_frame(HELLO)
    assert wire[0] == SYNC
    assert wire[1] == 1
    assert wire[2:6] == bytes([2, 0, 0x20, 0])
    assert wire[6:8] == (11).to_bytes(2, "little")
    assert len(wire) == OVERHEAD + 11
    assert int.from_bytes(wire[-2:], "little") == crc16(wire[1:-2])


bytes_fields = st.integers(min_value=0, max_value=255)


@given(
    src=bytes_fields,
    dst=bytes_fields,
    msg_type=bytes_fields,
    flags=bytes_fields,
    payload=st.binary(max_size=300),
)
def test_round_trip(src, dst, msg_type, flags, payload):
    frame = BusFrame(src, dst, msg_type, flags, payload)
    assert decode_frame(encode_frame(frame)) == frame


def test_pid_flag():
    assert BusFrame(1, 0, 0x13, FLAG_PID).contains_pid
    assert not HELLO.contains_pid


def test_fields_must_fit_a_byte():
    with pytest.raises(FrameError):
        BusFrame(256, 0, 0x10, 0)


@pytest.mark.parametrize("bit", [0, 7, 40])
def test_flipped_payload_bit(bit):
    wire = bytearray(encode_frame(HELLO))
    wire[HEADER_SIZE + bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(CrcMismatch):
        decode_frame(bytes(wire))


def test_bad_sync():
    wire = bytearray(encode_frame(HELLO))
    wire[0] = 0x00
    with pytest.raises(BadSync):
        decode_frame(bytes(wire))


def test_unsupported_version():
    wire = bytearray(encode_frame(HELLO))
    wire[1] = 2
    with pytest.raises(UnsupportedVersion):
        decode_frame(bytes(wire))


@pytest.mark.parametrize("cut", [1, 5, OVERHEAD + 10])
def test_truncated(cut):
    wire = encode_frame(HELLO)
    with pytest.raises(Truncated):
        decode_frame(wire[:-cut])


# ===== Stream decoding =====


def _frames():
    return [
        BusFrame(1, 0, 0x10, 0, bytes(range(20))),
        HELLO,
        BusFrame(3, 0, 0x31, 0, b"\x01\x00\x40\x1f\x00\x00"),
    ]


def test_decoder_skips_garbage_between_frames():
    first, second, third = (encode_frame(f) for f in _frames())
    decoder = FrameDecoder()
    got = decoder.feed(b"\x00\x11" + first + b"\xff" + second + third)
    assert got == _frames()
    assert decoder.discarded == 3
    assert decoder.errors == 0


def test_decoder_recovers_after_corruption():
    first, second, third = (encode_frame(f) for f in _frames())
    damaged = bytearray(second)
    damaged[HEADER_SIZE + 2] ^= 0x40
    decoder = FrameDecoder()
    got = decoder.feed(first + bytes(damaged) + third) + decoder.finish()
    assert got == [_frames()[0], _frames()[2]]
    assert decoder.errors >= 1
    assert decoder.pending == 0


def test_decoder_handles_byte_at_a_time():
    wire = b"".join(encode_frame(f) for f in _frames())
    decoder = FrameDecoder()
    got = []
    for i in range(len(wire)):
        got += decoder.feed(wire[i : i + 1])
    assert got == _frames()


def test_decoder_keeps_partial_frame_until_complete():
    wire = encode_frame(HELLO)
    decoder = FrameDecoder()
    assert decoder.feed(wire[:5]) == []
    assert decoder.pending == 5
    assert decoder.feed(wire[5:]) == [HELLO]

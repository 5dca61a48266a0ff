from __future__ import annotations

import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcspray.wire import (
    MESSAGE_DEFS,
    BadChecksum,
    BadMagic,
    FrameError,
    FrameParser,
    MalformedFrame,
    Message,
    ShortFrame,
    UnknownMessage,
    crc16_mcrf4xx,
    decode_frame,
    encode_frame,
    parse_frame,
)

# frames produced by pymavlink 2.x (common dialect, MAVLink 2, unsigned)
GOLDEN = {
    "heartbeat_quad": (
        "fd0900000001010000000400000002035104037bae",
        Message("HEARTBEAT", {"type": 2, "autopilot": 3, "base_mode": 81, "custom_mode": 4,
                              "system_status": 4, "mavlink_version": 3}, seq=0),
    ),
    "heartbeat_gcs": (
        "fd0900000701010000000000000006080000032851",
        Message("HEARTBEAT", {"type": 6, "autopilot": 8, "base_mode": 0, "custom_mode": 0,
                              "system_status": 0, "mavlink_version": 3}, seq=7),
    ),
    "mission_item": (
        "fd2500000301014900000000a040000000000000000000000000182a331240c485c633339340050010000101060001b5d1",
        None,
    ),
    "mission_count_zero": ("fd0400000101012c0000000001019952", None),
}

# CRC_EXTRA bytes from the common message definitions
CRC_EXTRA = {"HEARTBEAT": 50, "SET_MODE": 89, "GLOBAL_POSITION_INT": 104, "MISSION_COUNT": 221,
             "MISSION_ACK": 153, "MISSION_REQUEST_INT": 196, "MISSION_ITEM_INT": 38,
             "COMMAND_LONG": 152, "COMMAND_ACK": 143}


def test_crc_check_value():
    # CRC-16/MCRF4XX catalogue check value
    assert crc16_mcrf4xx(b"123456789") == 0x6F91


def test_crc_extras_pinned():
    assert {n: d.crc_extra for n, d in MESSAGE_DEFS.items()} == CRC_EXTRA


@pytest.mark.parametrize("name", ["heartbeat_quad", "heartbeat_gcs"])
def test_golden_heartbeat(name):
    hexframe, expected = GOLDEN[name]
    raw = bytes.fromhex(hexframe)
    msg = decode_frame(raw)
    assert msg.name == "HEARTBEAT"
    assert msg.fields == expected.fields
    assert msg.seq == expected.seq
    assert encode_frame(expected) == raw


def test_golden_mission_frames_round_trip():
    for name in ("mission_item", "mission_count_zero"):
        raw = bytes.fromhex(GOLDEN[name][0])
        assert encode_frame(decode_frame(raw)) == raw
    item = decode_frame(bytes.fromhex(GOLDEN["mission_item"][0]))
    assert item["seq"] == 5 and item["command"] == 16 and item["frame"] == 6
    assert item["param1"] == 5.0 and (item["x"], item["y"]) == (305343000, -964312000)
    assert decode_frame(bytes.fromhex(GOLDEN["mission_count_zero"][0]))["count"] == 0


def test_truncation_keeps_one_byte():
    raw = encode_frame(Message("MISSION_ACK", {}))
    assert raw[1] == 1
    assert decode_frame(raw).fields == {"target_system": 0, "target_component": 0, "type": 0, "mission_type": 0}
    full = encode_frame(Message("MISSION_ACK", {}), truncate=False)
    assert full[1] == 4 and decode_frame(full).fields == decode_frame(raw).fields


def test_pymavlink_cross_check():
    mavutil = pytest.importorskip("pymavlink.dialects.v20.common")
    from pymavlink.generator.mavcrc import x25crc

    for data in (b"", b"\x00", b"hello world", bytes(range(256))):
        assert crc16_mcrf4xx(data) == x25crc(data).crc
    for name, d in MESSAGE_DEFS.items():
        cls = getattr(mavutil, "MAVLink_" + name.lower() + "_message")
        assert cls.crc_extra == d.crc_extra
        assert cls.id == d.msg_id
        assert struct.calcsize(cls.unpacker.format) == d.max_payload_len


def test_pymavlink_decodes_our_frames():
    common = pytest.importorskip("pymavlink.dialects.v20.common")
    mav = common.MAVLink(None, srcSystem=255, srcComponent=190)
    msg = Message("MISSION_ITEM_INT", {"seq": 2, "command": 16, "frame": 6, "x": 305343420, "y": -964312280,
                                       "z": 4.6, "param1": 2.0, "target_system": 1, "target_component": 1,
                                       "autocontinue": 1}, seq=9, sysid=255, compid=190)
    out = mav.decode(bytearray(encode_frame(msg)))
    assert out.get_type() == "MISSION_ITEM_INT"
    assert (out.seq, out.x, out.y, out.command) == (2, 305343420, -964312280, 16)
    assert out.z == pytest.approx(4.6)


def field_strategy(code: str):
    if code == "f":
        return st.floats(width=32, allow_nan=False, allow_infinity=False)
    fmt = struct.Struct("<" + code)
    bits = fmt.size * 8
    if code.islower():
        return st.integers(-(2 ** (bits - 1)), 2 ** (bits - 1) - 1)
    return st.integers(0, 2**bits - 1)


messages = st.sampled_from(sorted(MESSAGE_DEFS)).flatmap(
    lambda name: st.builds(
        Message,
        st.just(name),
        st.fixed_dictionaries({f: field_strategy(c) for f, c in MESSAGE_DEFS[name].fields}),
        st.integers(0, 255), st.integers(0, 255), st.integers(0, 255),
    )
)


@settings(max_examples=2000, deadline=None)
@given(msg=messages, truncate=st.booleans())
def test_decode_encode_identity(msg, truncate):
    raw = encode_frame(msg, truncate=truncate)
    assert raw[1] <= MESSAGE_DEFS[msg.name].max_payload_len
    back = decode_frame(raw)
    assert back == msg


@settings(max_examples=100, deadline=None)
@given(msg=messages)
def test_every_single_bit_flip_rejected(msg):
    raw = encode_frame(msg)
    for i in range(len(raw)):
        for bit in range(8):
            bad = bytearray(raw)
            bad[i] ^= 1 << bit
            with pytest.raises(FrameError):
                decode_frame(bytes(bad))


def test_error_classes():
    raw = encode_frame(Message("HEARTBEAT", {"type": 2}))
    with pytest.raises(BadMagic):
        decode_frame(b"\xfe" + raw[1:])
    with pytest.raises(ShortFrame):
        decode_frame(raw[:5])
    with pytest.raises(ShortFrame):
        decode_frame(raw[:-1])
    with pytest.raises(MalformedFrame):
        decode_frame(raw + b"\x00")
    bad = bytearray(raw)
    bad[-1] ^= 0xFF
    with pytest.raises(BadChecksum):
        decode_frame(bytes(bad))
    with pytest.raises(UnknownMessage):
        encode_frame(Message("PARAM_SET", {}))
    unknown = bytearray(raw)
    unknown[7] = 200
    with pytest.raises(UnknownMessage):
        parse_frame(bytes(unknown))
    with pytest.raises(ValueError):
        encode_frame(Message("HEARTBEAT", {"type": 300}))


def test_stream_parser_resynchronises():
    a = encode_frame(Message("HEARTBEAT", {"type": 2}, seq=1))
    b = encode_frame(Message("MISSION_COUNT", {"count": 12}, seq=2))
    corrupt = bytearray(a)
    corrupt[12] ^= 0x10
    p = FrameParser()
    stream = b"\x00garbage" + bytes(corrupt) + a + b
    out = []
    for i in range(0, len(stream), 5):
        out += p.feed(stream[i:i + 5])
    assert [m.seq for m in out] == [1, 2]
    assert p.dropped >= 2

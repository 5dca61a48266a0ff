"""MAVLink-v2-style binary framing for the small message subset used by mission
upload, vehicle commands and telemetry.

Frame layout::

    0xFD | len | incompat | compat | seq | sysid | compid | msgid (3 bytes LE)
         | payload (len bytes) | checksum (2 bytes LE)

The checksum is CRC-16/MCRF4XX seeded with 0xFFFF over every byte after the
magic, followed by the message type's CRC_EXTRA byte.  Trailing zero bytes of
the payload are dropped on encode (keeping at least one) and restored on decode.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = 0xFD
HEADER_LEN = 10
CHECKSUM_LEN = 2
MIN_FRAME_LEN = HEADER_LEN + CHECKSUM_LEN
INCOMPAT_SIGNED = 0x01


class FrameError(ValueError):
    """Base class for frames that cannot be decoded."""


class BadMagic(FrameError):
    pass


class ShortFrame(FrameError):
    """The buffer ends before the frame does."""


class BadChecksum(FrameError):
    pass


class UnknownMessage(FrameError):
    pass


class MalformedFrame(FrameError):
    """Structurally invalid: unsupported flags, oversize payload, trailing bytes."""


@dataclass(frozen=True)
class MessageDef:
    name: str
    msg_id: int
    crc_extra: int
    fields: tuple[tuple[str, str], ...]  # (name, struct code) in wire order

    @property
    def struct(self) -> struct.Struct:
        return struct.Struct("<" + "".join(code for _, code in self.fields))

    @property
    def max_payload_len(self) -> int:
        return self.struct.size


# Wire order is the canonical MAVLink one: base fields sorted by type size, then
# extension fields.  CRC_EXTRA values come from the common message definitions.
MESSAGE_DEFS = {d.name: d for d in [
    MessageDef("HEARTBEAT", 0, 50, (
        ("custom_mode", "I"), ("type", "B"), ("autopilot", "B"), ("base_mode", "B"),
        ("system_status", "B"), ("mavlink_version", "B"))),
    MessageDef("SET_MODE", 11, 89, (
        ("custom_mode", "I"), ("target_system", "B"), ("base_mode", "B"))),
    MessageDef("GLOBAL_POSITION_INT", 33, 104, (
        ("time_boot_ms", "I"), ("lat", "i"), ("lon", "i"), ("alt", "i"), ("relative_alt", "i"),
        ("vx", "h"), ("vy", "h"), ("vz", "h"), ("hdg", "H"))),
    MessageDef("MISSION_COUNT", 44, 221, (
        ("count", "H"), ("target_system", "B"), ("target_component", "B"), ("mission_type", "B"))),
    MessageDef("MISSION_ACK", 47, 153, (
        ("target_system", "B"), ("target_component", "B"), ("type", "B"), ("mission_type", "B"))),
    MessageDef("MISSION_REQUEST_INT", 51, 196, (
        ("seq", "H"), ("target_system", "B"), ("target_component", "B"), ("mission_type", "B"))),
    MessageDef("MISSION_ITEM_INT", 73, 38, (
        ("param1", "f"), ("param2", "f"), ("param3", "f"), ("param4", "f"),
        ("x", "i"), ("y", "i"), ("z", "f"), ("seq", "H"), ("command", "H"),
        ("target_system", "B"), ("target_component", "B"), ("frame", "B"),
        ("current", "B"), ("autocontinue", "B"), ("mission_type", "B"))),
    MessageDef("COMMAND_LONG", 76, 152, (
        ("param1", "f"), ("param2", "f"), ("param3", "f"), ("param4", "f"),
        ("param5", "f"), ("param6", "f"), ("param7", "f"), ("command", "H"),
        ("target_system", "B"), ("target_component", "B"), ("confirmation", "B"))),
    MessageDef("COMMAND_ACK", 77, 143, (
        ("command", "H"), ("result", "B"), ("progress", "B"), ("result_param2", "i"),
        ("target_system", "B"), ("target_component", "B"))),
]}
MESSAGE_DEFS_BY_ID = {d.msg_id: d for d in MESSAGE_DEFS.values()}

# enum values used by the mission/command subset
MAV_CMD_NAV_WAYPOINT = 16
MAV_CMD_NAV_RETURN_TO_LAUNCH = 20
MAV_CMD_NAV_LAND = 21
MAV_CMD_NAV_TAKEOFF = 22
MAV_CMD_DO_SET_MODE = 176
MAV_CMD_MISSION_START = 300
MAV_CMD_COMPONENT_ARM_DISARM = 400
MAV_FRAME_GLOBAL_RELATIVE_ALT_INT = 6
MAV_MISSION_ACCEPTED = 0
MAV_MISSION_ERROR = 1
MAV_RESULT_ACCEPTED = 0
MAV_RESULT_DENIED = 2
MAV_RESULT_FAILED = 4
MAV_MODE_FLAG_CUSTOM_MODE_ENABLED = 1
MAV_MODE_FLAG_SAFETY_ARMED = 128


@dataclass
class Message:
    name: str
    fields: dict = field(default_factory=dict)
    seq: int = 0
    sysid: int = 1
    compid: int = 1

    def __getitem__(self, key):
        return self.fields[key]


@dataclass(frozen=True)
class LinkFrame:
    magic: int
    length: int
    incompat_flags: int
    compat_flags: int
    seq: int
    sysid: int
    compid: int
    msg_id: int
    payload: bytes
    checksum: int


def crc16_mcrf4xx(data: bytes, crc: int = 0xFFFF) -> int:
    for b in data:
        tmp = (b ^ crc) & 0xFF
        tmp = (tmp ^ (tmp << 4)) & 0xFF
        crc = ((crc >> 8) ^ (tmp << 8) ^ (tmp << 3) ^ (tmp >> 4)) & 0xFFFF
    return crc


def frame_checksum(header_and_payload: bytes, crc_extra: int) -> int:
    """Checksum over everything after the magic byte, then the CRC_EXTRA byte."""
    return crc16_mcrf4xx(bytes([crc_extra]), crc16_mcrf4xx(header_and_payload[1:]))


def message_def(msg: Message) -> MessageDef:
    try:
        return MESSAGE_DEFS[msg.name]
    except KeyError:
        raise UnknownMessage(f"message {msg.name!r} not in the supported subset") from None


def pack_payload(msg: Message) -> bytes:
    mdef = message_def(msg)
    values = []
    for name, code in mdef.fields:
        v = msg.fields.get(name, 0)
        values.append(float(v) if code == "f" else int(v))
    try:
        return mdef.struct.pack(*values)
    except struct.error as exc:
        raise ValueError(f"{msg.name}: {exc}") from None


def encode_frame(msg: Message, truncate: bool = True) -> bytes:
    mdef = message_def(msg)
    payload = pack_payload(msg)
    if truncate:
        payload = payload.rstrip(b"\x00") or b"\x00"
    header = bytes([MAGIC, len(payload), 0, 0, msg.seq & 0xFF, msg.sysid, msg.compid]) + \
        mdef.msg_id.to_bytes(3, "little")
    body = header + payload
    return body + frame_checksum(body, mdef.crc_extra).to_bytes(2, "little")


def parse_frame(buf: bytes) -> LinkFrame:
    """Validate one complete frame and split it into header fields."""
    buf = bytes(buf)
    if len(buf) >= 1 and buf[0] != MAGIC:
        raise BadMagic(f"expected magic 0x{MAGIC:02X}, got 0x{buf[0]:02X}")
    if len(buf) < MIN_FRAME_LEN:
        raise ShortFrame(f"frame needs at least {MIN_FRAME_LEN} bytes, got {len(buf)}")
    length, incompat, compat = buf[1], buf[2], buf[3]
    if incompat & ~INCOMPAT_SIGNED:
        raise MalformedFrame(f"unknown incompatibility flags 0x{incompat:02X}")
    total = MIN_FRAME_LEN + length + (13 if incompat & INCOMPAT_SIGNED else 0)
    if len(buf) < total:
        raise ShortFrame(f"frame declares {total} bytes, got {len(buf)}")
    if len(buf) > total:
        raise MalformedFrame(f"{len(buf) - total} trailing bytes after frame")
    if incompat & INCOMPAT_SIGNED:
        raise MalformedFrame("signed frames are not supported")
    msg_id = int.from_bytes(buf[7:10], "little")
    mdef = MESSAGE_DEFS_BY_ID.get(msg_id)
    if mdef is None:
        raise UnknownMessage(f"message id {msg_id} not in the supported subset")
    end = HEADER_LEN + length
    checksum = int.from_bytes(buf[end:end + 2], "little")
    expected = frame_checksum(buf[:end], mdef.crc_extra)
    if checksum != expected:
        raise BadChecksum(f"checksum 0x{checksum:04X} != 0x{expected:04X}")
    if length > mdef.max_payload_len:
        raise MalformedFrame(f"{mdef.name} payload of {length} bytes exceeds {mdef.max_payload_len}")
    return LinkFrame(buf[0], length, incompat, compat, buf[4], buf[5], buf[6], msg_id,
                     buf[HEADER_LEN:end], checksum)


def decode_frame(buf: bytes) -> Message:
    frame = parse_frame(buf)
    mdef = MESSAGE_DEFS_BY_ID[frame.msg_id]
    payload = frame.payload.ljust(mdef.max_payload_len, b"\x00")
    values = mdef.struct.unpack(payload)
    fields = {name: v for (name, _), v in zip(mdef.fields, values)}
    return Message(mdef.name, fields, frame.seq, frame.sysid, frame.compid)


class FrameParser:
    """Incremental decoder for a byte stream; undecodable frames are skipped and
    counted in ``dropped``."""

    def __init__(self):
        self._buf = bytearray()
        self.dropped = 0

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        buf = self._buf
        while True:
            start = buf.find(bytes([MAGIC]))
            if start < 0:
                if buf:
                    self.dropped += 1
                buf.clear()
                break
            if start > 0:
                self.dropped += 1
                del buf[:start]
            if len(buf) < MIN_FRAME_LEN:
                break
            total = MIN_FRAME_LEN + buf[1] + (13 if buf[2] & INCOMPAT_SIGNED else 0)
            if len(buf) < total:
                break
            try:
                out.append(decode_frame(bytes(buf[:total])))
            except FrameError:
                # resynchronise on the next magic byte
                self.dropped += 1
                del buf[:1]
                continue
            del buf[:total]
        return out

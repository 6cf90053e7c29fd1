"""Wire codec for the controller <-> element control channel.

Frame layout: [version 0x01, 1 byte][message type, 1 byte]
[payload length, 4 bytes big-endian][payload].  All integers are
big-endian.  Strings are a 2-byte length followed by UTF-8 bytes.
Optional fields carry a 1-byte presence flag, strictly 0 or 1.

The encoding is canonical: there is exactly one byte sequence per
message, so decode(encode(m)) == m and re-encoding a decoded frame
reproduces the input slice.  The decoder rejects anything else
(reserved capability bits, presence flags other than 0/1, trailing
bytes inside the declared payload) rather than guessing.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from enum import IntEnum, IntFlag
from typing import Union

VERSION = 0x01

MSG_HELLO = 0
MSG_FEATURES_REQUEST = 1
MSG_FEATURES_REPLY = 2
MSG_FLOW_MOD = 3
MSG_PACKET_IN = 4
MSG_FLOW_EXPIRED = 5
MSG_CACHE_REPORT = 6

HEADER_LEN = 6

# match-any token for standing flows; not a real content name
WILDCARD_NAME = "*"


class CodecError(ValueError):
    """Base class for every encode/decode failure."""


class EncodeError(CodecError):
    """Message violates a type invariant; nothing was emitted."""


class TruncatedFrameError(CodecError):
    """Fewer bytes available than the frame header declares."""


class UnknownVersionError(CodecError):
    pass


class UnknownTypeError(CodecError):
    pass


class PayloadLengthError(CodecError):
    """Declared payload length disagrees with the parsed content."""


class ReservedBitsError(CodecError):
    """Capability word has bits outside the defined set."""


class MalformedPayloadError(CodecError):
    """Payload structure is invalid (flags, strings, action lists)."""


class Capability(IntFlag):
    EXTRACT_METADATA = 1 << 0
    CACHE_CONTENT = 1 << 1
    PROXY_CONTENT = 1 << 2


_CAPABILITY_MASK = Capability.EXTRACT_METADATA | Capability.CACHE_CONTENT | Capability.PROXY_CONTENT


class ActionKind(IntEnum):
    EXTRACT_METADATA = 0
    NORMAL = 1
    OUTPUT = 2
    CACHE = 3
    DROP = 4


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    port: int | None = None  # only OUTPUT carries a port

    def __post_init__(self):
        if self.kind is ActionKind.OUTPUT:
            if self.port is None or not 0 <= self.port <= 0xFFFF:
                raise EncodeError(f"OUTPUT action needs a port in [0, 65535], got {self.port}")
        elif self.port is not None:
            raise EncodeError(f"{self.kind.name} action carries no port")


@dataclass(frozen=True)
class FiveTuple:
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    protocol: int

    def __post_init__(self):
        for label, ip in (("src_ip", self.src_ip), ("dst_ip", self.dst_ip)):
            try:
                ipaddress.IPv4Address(ip)
            except (ipaddress.AddressValueError, ValueError) as exc:
                raise EncodeError(f"{label} {ip!r} is not an IPv4 address") from exc
        for label, port in (("src_port", self.src_port), ("dst_port", self.dst_port)):
            if not 0 <= port <= 0xFFFF:
                raise EncodeError(f"{label} {port} out of range [0, 65535]")
        if not 0 <= self.protocol <= 0xFF:
            raise EncodeError(f"protocol {self.protocol} out of range [0, 255]")


@dataclass(frozen=True)
class FlowMatch:
    """AND of the present fields; at least one must be present."""

    content_name: str | None = None
    five_tuple: FiveTuple | None = None

    def __post_init__(self):
        if self.content_name is None and self.five_tuple is None:
            raise EncodeError("a match needs a content name or a 5-tuple")
        if self.content_name is not None and not self.content_name:
            raise EncodeError("content name must be non-empty when present")


@dataclass(frozen=True)
class Hello:
    pass


@dataclass(frozen=True)
class FeaturesRequest:
    pass


@dataclass(frozen=True)
class FeaturesReply:
    datapath_id: int
    capabilities: Capability = Capability(0)


@dataclass(frozen=True)
class FlowMod:
    match: FlowMatch
    priority: int
    actions: tuple[Action, ...]
    until_byte_count: int = 0  # 0 = no expiry condition

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise EncodeError("action list must be non-empty")


@dataclass(frozen=True)
class PacketIn:
    """Metadata extracted at an element, or a table-miss notification
    (content_size 0 when nothing was parsed)."""

    content_name: str
    content_size: int
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int

    def __post_init__(self):
        # reuse the tuple validators; protocol byte is not carried here
        FiveTuple(self.src_ip, self.src_port, self.dst_ip, self.dst_port, 0)


@dataclass(frozen=True)
class FlowExpired:
    match: FlowMatch
    bytes_counted: int


@dataclass(frozen=True)
class CacheReport:
    content_name: str
    footprint_bytes: int


Message = Union[Hello, FeaturesRequest, FeaturesReply, FlowMod, PacketIn, FlowExpired, CacheReport]

_TYPE_BY_CLASS = {
    Hello: MSG_HELLO,
    FeaturesRequest: MSG_FEATURES_REQUEST,
    FeaturesReply: MSG_FEATURES_REPLY,
    FlowMod: MSG_FLOW_MOD,
    PacketIn: MSG_PACKET_IN,
    FlowExpired: MSG_FLOW_EXPIRED,
    CacheReport: MSG_CACHE_REPORT,
}


def _check_u(value: int, bits: int, label: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise EncodeError(f"{label} must be an int, got {type(value).__name__}")
    if not 0 <= value < (1 << bits):
        raise EncodeError(f"{label} {value} out of range for u{bits}")
    return value


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise EncodeError(f"string of {len(raw)} bytes exceeds the u16 length prefix")
    return struct.pack(">H", len(raw)) + raw


def _pack_ip(ip: str) -> bytes:
    return ipaddress.IPv4Address(ip).packed


def _pack_five_tuple(t: FiveTuple) -> bytes:
    return (
        _pack_ip(t.src_ip)
        + struct.pack(">H", t.src_port)
        + _pack_ip(t.dst_ip)
        + struct.pack(">H", t.dst_port)
        + struct.pack(">B", t.protocol)
    )


def _pack_match(m: FlowMatch) -> bytes:
    out = bytearray()
    if m.content_name is not None:
        out.append(1)
        out += _pack_string(m.content_name)
    else:
        out.append(0)
    if m.five_tuple is not None:
        out.append(1)
        out += _pack_five_tuple(m.five_tuple)
    else:
        out.append(0)
    return bytes(out)


def _pack_actions(actions: tuple[Action, ...]) -> bytes:
    if len(actions) > 0xFF:
        raise EncodeError(f"{len(actions)} actions exceed the u8 count prefix")
    out = bytearray(struct.pack(">B", len(actions)))
    for action in actions:
        out += struct.pack(">B", int(action.kind))
        if action.kind is ActionKind.OUTPUT:
            out += struct.pack(">H", action.port)
    return bytes(out)


def encode(msg: Message) -> bytes:
    """Serialize one message into a complete frame."""
    msg_type = _TYPE_BY_CLASS.get(type(msg))
    if msg_type is None:
        raise EncodeError(f"not a protocol message: {type(msg).__name__}")

    if isinstance(msg, (Hello, FeaturesRequest)):
        payload = b""
    elif isinstance(msg, FeaturesReply):
        caps = int(msg.capabilities)
        if caps & ~int(_CAPABILITY_MASK):
            raise ReservedBitsError(f"capability word {caps:#x} sets reserved bits")
        payload = struct.pack(
            ">QI", _check_u(msg.datapath_id, 64, "datapath_id"), caps
        )
    elif isinstance(msg, FlowMod):
        payload = (
            _pack_match(msg.match)
            + struct.pack(">H", _check_u(msg.priority, 16, "priority"))
            + _pack_actions(msg.actions)
            + struct.pack(">Q", _check_u(msg.until_byte_count, 64, "until_byte_count"))
        )
    elif isinstance(msg, PacketIn):
        payload = (
            _pack_string(msg.content_name)
            + struct.pack(">Q", _check_u(msg.content_size, 64, "content_size"))
            + _pack_ip(msg.src_ip)
            + struct.pack(">H", msg.src_port)
            + _pack_ip(msg.dst_ip)
            + struct.pack(">H", msg.dst_port)
        )
    elif isinstance(msg, FlowExpired):
        payload = _pack_match(msg.match) + struct.pack(
            ">Q", _check_u(msg.bytes_counted, 64, "bytes_counted")
        )
    elif isinstance(msg, CacheReport):
        payload = _pack_string(msg.content_name) + struct.pack(
            ">Q", _check_u(msg.footprint_bytes, 64, "footprint_bytes")
        )
    else:  # pragma: no cover - _TYPE_BY_CLASS is exhaustive
        raise EncodeError(f"unhandled message type {type(msg).__name__}")

    return struct.pack(">BBI", VERSION, msg_type, len(payload)) + payload


class _Cursor:
    """Bounded reader over one payload; never reads past its end."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise PayloadLengthError(
                f"payload needs {self.pos + n} bytes but declares {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPayloadError(f"string is not valid UTF-8: {exc}") from exc

    def ip(self) -> str:
        return str(ipaddress.IPv4Address(self.take(4)))

    def presence(self) -> bool:
        flag = self.u8()
        if flag not in (0, 1):
            raise MalformedPayloadError(f"presence flag must be 0 or 1, got {flag}")
        return flag == 1

    def done(self):
        if self.pos != len(self.data):
            raise PayloadLengthError(
                f"{len(self.data) - self.pos} undeclared trailing bytes in payload"
            )


def _read_five_tuple(cur: _Cursor) -> FiveTuple:
    return FiveTuple(cur.ip(), cur.u16(), cur.ip(), cur.u16(), cur.u8())


def _read_match(cur: _Cursor) -> FlowMatch:
    name = cur.string() if cur.presence() else None
    tup = _read_five_tuple(cur) if cur.presence() else None
    try:
        return FlowMatch(content_name=name, five_tuple=tup)
    except ValueError as exc:
        raise MalformedPayloadError(str(exc)) from exc


def _read_actions(cur: _Cursor) -> tuple[Action, ...]:
    count = cur.u8()
    if count == 0:
        raise MalformedPayloadError("action list must be non-empty")
    actions = []
    for _ in range(count):
        opcode = cur.u8()
        try:
            kind = ActionKind(opcode)
        except ValueError as exc:
            raise MalformedPayloadError(f"unknown action opcode {opcode}") from exc
        port = cur.u16() if kind is ActionKind.OUTPUT else None
        actions.append(Action(kind, port))
    return tuple(actions)


def decode(data: bytes) -> tuple[Message, int]:
    """Parse exactly one frame from the front of ``data``.

    Returns the message and the number of bytes consumed.  Raises a
    CodecError subclass on any malformed input; never reads beyond the
    declared payload length.
    """
    if len(data) < HEADER_LEN:
        raise TruncatedFrameError(f"need {HEADER_LEN} header bytes, have {len(data)}")
    version, msg_type, payload_len = struct.unpack(">BBI", data[:HEADER_LEN])
    if version != VERSION:
        raise UnknownVersionError(f"unknown version {version:#04x}")
    end = HEADER_LEN + payload_len
    if len(data) < end:
        raise TruncatedFrameError(f"frame declares {end} bytes, have {len(data)}")
    cur = _Cursor(bytes(data[HEADER_LEN:end]))

    msg: Message
    if msg_type == MSG_HELLO:
        msg = Hello()
    elif msg_type == MSG_FEATURES_REQUEST:
        msg = FeaturesRequest()
    elif msg_type == MSG_FEATURES_REPLY:
        dpid = cur.u64()
        caps = cur.u32()
        if caps & ~int(_CAPABILITY_MASK):
            raise ReservedBitsError(f"capability word {caps:#x} sets reserved bits")
        msg = FeaturesReply(datapath_id=dpid, capabilities=Capability(caps))
    elif msg_type == MSG_FLOW_MOD:
        match = _read_match(cur)
        priority = cur.u16()
        actions = _read_actions(cur)
        until = cur.u64()
        msg = FlowMod(match=match, priority=priority, actions=actions, until_byte_count=until)
    elif msg_type == MSG_PACKET_IN:
        msg = PacketIn(
            content_name=cur.string(),
            content_size=cur.u64(),
            src_ip=cur.ip(),
            src_port=cur.u16(),
            dst_ip=cur.ip(),
            dst_port=cur.u16(),
        )
    elif msg_type == MSG_FLOW_EXPIRED:
        msg = FlowExpired(match=_read_match(cur), bytes_counted=cur.u64())
    elif msg_type == MSG_CACHE_REPORT:
        msg = CacheReport(content_name=cur.string(), footprint_bytes=cur.u64())
    else:
        raise UnknownTypeError(f"unknown message type {msg_type}")

    cur.done()
    return msg, end

"""Minimal OpenFlow 1.3 codec.

Only the messages the handshake, the role exchange and PacketIn load need
are modelled. Anything else decodes to :class:`Unknown` and keeps its raw
body so it can be re-emitted untouched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Union

OFP_VERSION = 0x04
HEADER_LEN = 8

OFPT_HELLO = 0
OFPT_ERROR = 1
OFPT_ECHO_REQUEST = 2
OFPT_ECHO_REPLY = 3
OFPT_FEATURES_REQUEST = 5
OFPT_FEATURES_REPLY = 6
OFPT_PACKET_IN = 10
OFPT_ROLE_REQUEST = 24
OFPT_ROLE_REPLY = 25

OFPCR_ROLE_NOCHANGE = 0
OFPCR_ROLE_EQUAL = 1
OFPCR_ROLE_MASTER = 2
OFPCR_ROLE_SLAVE = 3

OFPET_HELLO_FAILED = 0
OFPET_BAD_REQUEST = 1

_HEADER = struct.Struct("!BBHI")
_FEATURES = struct.Struct("!QIBB2xII")
_PACKET_IN = struct.Struct("!IHBBQ")
_ROLE = struct.Struct("!I4xQ")
_ERROR = struct.Struct("!HH")

# An empty OXM match: type=OFPMT_OXM, length=4, padded to 8 bytes.
EMPTY_MATCH = b"\x00\x01\x00\x04\x00\x00\x00\x00"


class OfWireError(Exception):
    pass


class FieldOverflow(OfWireError, ValueError):
    pass


class Truncated(OfWireError):
    pass


class BadVersion(OfWireError):
    pass


class Malformed(OfWireError):
    pass


@dataclass(frozen=True, order=True)
class DatapathId:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << 64:
            raise FieldOverflow(f"datapath id {self.value:#x} exceeds 64 bits")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(8, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DatapathId":
        if len(raw) != 8:
            raise Malformed("datapath id must be 8 bytes")
        return cls(int.from_bytes(raw, "big"))

    def __str__(self):
        return f"{self.value:016x}"


@dataclass(frozen=True)
class OfHeader:
    version: int
    msg_type: int
    length: int
    xid: int


@dataclass(frozen=True)
class Hello:
    xid: int = 0
    elements: bytes = b""


@dataclass(frozen=True)
class EchoRequest:
    xid: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class EchoReply:
    xid: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class FeaturesRequest:
    xid: int = 0


@dataclass(frozen=True)
class FeaturesReply:
    xid: int = 0
    datapath_id: DatapathId = DatapathId(0)
    n_buffers: int = 0
    n_tables: int = 0
    auxiliary_id: int = 0
    capabilities: int = 0
    reserved: int = 0


@dataclass(frozen=True)
class Error:
    xid: int = 0
    type: int = 0
    code: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class PacketIn:
    xid: int = 0
    buffer_id: int = 0xFFFFFFFF
    total_len: int = 0
    reason: int = 0
    table_id: int = 0
    cookie: int = 0
    match: bytes = EMPTY_MATCH
    payload: bytes = b""


@dataclass(frozen=True)
class RoleRequest:
    xid: int = 0
    role: int = OFPCR_ROLE_EQUAL
    generation_id: int = 0


@dataclass(frozen=True)
class RoleReply:
    xid: int = 0
    role: int = OFPCR_ROLE_EQUAL
    generation_id: int = 0


@dataclass(frozen=True)
class Unknown:
    xid: int = 0
    msg_type: int = 0xFF
    body: bytes = b""
    version: int = OFP_VERSION


OfMessage = Union[
    Hello, EchoRequest, EchoReply, FeaturesRequest, FeaturesReply, Error,
    PacketIn, RoleRequest, RoleReply, Unknown,
]

MSG_TYPES = {
    Hello: OFPT_HELLO,
    Error: OFPT_ERROR,
    EchoRequest: OFPT_ECHO_REQUEST,
    EchoReply: OFPT_ECHO_REPLY,
    FeaturesRequest: OFPT_FEATURES_REQUEST,
    FeaturesReply: OFPT_FEATURES_REPLY,
    PacketIn: OFPT_PACKET_IN,
    RoleRequest: OFPT_ROLE_REQUEST,
    RoleReply: OFPT_ROLE_REPLY,
}


def _check(name, value, bits):
    if not isinstance(value, int) or not 0 <= value < 1 << bits:
        raise FieldOverflow(f"{name}={value!r} does not fit in {bits} bits")


def _body(msg) -> bytes:
    if isinstance(msg, Hello):
        return msg.elements
    if isinstance(msg, (EchoRequest, EchoReply)):
        return msg.data
    if isinstance(msg, FeaturesRequest):
        return b""
    if isinstance(msg, FeaturesReply):
        _check("n_buffers", msg.n_buffers, 32)
        _check("n_tables", msg.n_tables, 8)
        _check("auxiliary_id", msg.auxiliary_id, 8)
        _check("capabilities", msg.capabilities, 32)
        _check("reserved", msg.reserved, 32)
        return _FEATURES.pack(msg.datapath_id.value, msg.n_buffers, msg.n_tables,
                              msg.auxiliary_id, msg.capabilities, msg.reserved)
    if isinstance(msg, Error):
        _check("type", msg.type, 16)
        _check("code", msg.code, 16)
        return _ERROR.pack(msg.type, msg.code) + msg.data
    if isinstance(msg, PacketIn):
        _check("buffer_id", msg.buffer_id, 32)
        _check("total_len", msg.total_len, 16)
        _check("reason", msg.reason, 8)
        _check("table_id", msg.table_id, 8)
        _check("cookie", msg.cookie, 64)
        if len(msg.match) < 4 or len(msg.match) % 8:
            raise Malformed("match must be at least 4 bytes and 8-byte aligned")
        return (_PACKET_IN.pack(msg.buffer_id, msg.total_len, msg.reason,
                                msg.table_id, msg.cookie)
                + msg.match + b"\x00\x00" + msg.payload)
    if isinstance(msg, (RoleRequest, RoleReply)):
        _check("role", msg.role, 32)
        _check("generation_id", msg.generation_id, 64)
        return _ROLE.pack(msg.role, msg.generation_id)
    if isinstance(msg, Unknown):
        return msg.body
    raise TypeError(f"not an OpenFlow message: {msg!r}")


def encode(msg: OfMessage) -> bytes:
    """Serialize ``msg`` as header + body, big-endian."""
    _check("xid", msg.xid, 32)
    body = _body(msg)
    length = HEADER_LEN + len(body)
    _check("length", length, 16)
    if isinstance(msg, Unknown):
        _check("msg_type", msg.msg_type, 8)
        _check("version", msg.version, 8)
        version, msg_type = msg.version, msg.msg_type
    else:
        version, msg_type = OFP_VERSION, MSG_TYPES[type(msg)]
    return _HEADER.pack(version, msg_type, length, msg.xid) + body


def decode_header(buf: bytes) -> OfHeader:
    if len(buf) < HEADER_LEN:
        raise Truncated(f"need {HEADER_LEN} header bytes, have {len(buf)}")
    hdr = OfHeader(*_HEADER.unpack_from(buf, 0))
    if hdr.length < HEADER_LEN:
        raise Malformed(f"header length {hdr.length} below {HEADER_LEN}")
    return hdr


def decode(buf: bytes, strict: bool = False) -> tuple[OfMessage, int]:
    """Parse one message from the front of ``buf``.

    Returns the message and the number of bytes it occupied. With
    ``strict`` set, any version other than 1.3 raises :class:`BadVersion`.
    """
    hdr = decode_header(buf)
    if strict and hdr.version != OFP_VERSION:
        raise BadVersion(f"version {hdr.version:#04x}")
    if len(buf) < hdr.length:
        raise Truncated(f"message needs {hdr.length} bytes, have {len(buf)}")
    body = bytes(buf[HEADER_LEN:hdr.length])
    xid = hdr.xid
    t = hdr.msg_type

    if hdr.version != OFP_VERSION:
        msg = Unknown(xid, t, body, hdr.version)
    elif t == OFPT_HELLO:
        msg = Hello(xid, body)
    elif t == OFPT_ECHO_REQUEST:
        msg = EchoRequest(xid, body)
    elif t == OFPT_ECHO_REPLY:
        msg = EchoReply(xid, body)
    elif t == OFPT_FEATURES_REQUEST:
        if body:
            raise Malformed("features request carries no body")
        msg = FeaturesRequest(xid)
    elif t == OFPT_FEATURES_REPLY:
        if len(body) != _FEATURES.size:
            raise Malformed(f"features reply body is {len(body)} bytes")
        dpid, nbuf, ntab, aux, caps, rsv = _FEATURES.unpack(body)
        msg = FeaturesReply(xid, DatapathId(dpid), nbuf, ntab, aux, caps, rsv)
    elif t == OFPT_ERROR:
        if len(body) < _ERROR.size:
            raise Malformed("error body too short")
        etype, code = _ERROR.unpack_from(body, 0)
        msg = Error(xid, etype, code, body[_ERROR.size:])
    elif t == OFPT_PACKET_IN:
        msg = _decode_packet_in(xid, body)
    elif t in (OFPT_ROLE_REQUEST, OFPT_ROLE_REPLY):
        if len(body) != _ROLE.size:
            raise Malformed(f"role body is {len(body)} bytes")
        role, gen = _ROLE.unpack(body)
        cls = RoleRequest if t == OFPT_ROLE_REQUEST else RoleReply
        msg = cls(xid, role, gen)
    else:
        msg = Unknown(xid, t, body)
    return msg, hdr.length


def _decode_packet_in(xid, body):
    fixed = _PACKET_IN.size
    if len(body) < fixed + 4:
        raise Malformed("packet-in body too short")
    buffer_id, total_len, reason, table_id, cookie = _PACKET_IN.unpack_from(body, 0)
    match_len = int.from_bytes(body[fixed + 2:fixed + 4], "big")
    padded = (match_len + 7) // 8 * 8
    end = fixed + padded
    if match_len < 4 or len(body) < end + 2:
        raise Malformed("packet-in match overruns body")
    if body[end:end + 2] != b"\x00\x00":
        raise Malformed("packet-in pad bytes must be zero")
    return PacketIn(xid, buffer_id, total_len, reason, table_id, cookie,
                    body[fixed:end], body[end + 2:])


class StreamDecoder:
    """Reassemble messages from arbitrary byte chunks."""

    def __init__(self, strict: bool = False):
        self.strict = strict
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[OfMessage]:
        self._buf += data
        return list(self._drain())

    def _drain(self) -> Iterator[OfMessage]:
        while len(self._buf) >= HEADER_LEN:
            try:
                msg, used = decode(self._buf, self.strict)
            except Truncated:
                return
            del self._buf[:used]
            yield msg

    @property
    def pending(self) -> int:
        return len(self._buf)


def describe(msg: OfMessage) -> str:
    """Short one-line summary, used by the test-vector file."""
    name = type(msg).__name__
    if isinstance(msg, FeaturesReply):
        return f"{name} xid={msg.xid} dpid={msg.datapath_id}"
    if isinstance(msg, (RoleRequest, RoleReply)):
        return f"{name} xid={msg.xid} role={msg.role}"
    if isinstance(msg, Error):
        return f"{name} xid={msg.xid} type={msg.type} code={msg.code}"
    if isinstance(msg, PacketIn):
        return f"{name} xid={msg.xid} len={len(msg.payload)}"
    if isinstance(msg, Unknown):
        return f"{name} xid={msg.xid} type={msg.msg_type}"
    return f"{name} xid={msg.xid}"

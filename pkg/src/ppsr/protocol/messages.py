"""Protocol messages and their binary wire encoding.

Frame layout::

    u32 big-endian   length of everything after this field
    u8               payload type tag
    ...              body

A message body starts with a header (``str16`` session id, ``u64`` little-endian
sequence number, ``str8`` sender, ``str8`` receiver) followed by the payload.
Ring elements are always 8 bytes little-endian, whatever the ring width.
Strings are UTF-8 with a little-endian length prefix of the stated width.
Handshake frames carry no message header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ChannelFailure

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_LEN = struct.Struct(">I")


@dataclass(frozen=True)
class ShareUpload:
    """One client's share of a named column block (``tag`` like ``train:X``)."""

    tag: str
    values: np.ndarray


@dataclass(frozen=True)
class TripleBatch:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __len__(self):
        return len(self.a)


@dataclass(frozen=True)
class EvalRequest:
    dataset: str
    fitness: str
    expressions: tuple[str, ...]


@dataclass(frozen=True)
class BeaverOpen:
    """This party's shares of ``epsilon`` followed by ``delta``."""

    values: np.ndarray


@dataclass(frozen=True)
class FitnessShare:
    """Shares of one fitness value per requested expression.

    ``invalid`` marks expressions that could not be evaluated (a public
    constant outside the fixed-point range); both parties agree on it.
    """

    values: np.ndarray
    invalid: tuple[bool, ...] = ()


@dataclass(frozen=True)
class Control:
    op: str
    args: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Handshake:
    session_id: str
    role: str
    ring_bits: int
    frac_bits: int
    config_hash: bytes


@dataclass(frozen=True)
class HandshakeAck:
    ok: bool
    reason: str = ""


Payload = ShareUpload | TripleBatch | EvalRequest | BeaverOpen | FitnessShare | Control


@dataclass(frozen=True)
class Message:
    session_id: str
    sequence_no: int
    sender: str
    receiver: str
    payload: Payload

    @property
    def kind(self) -> str:
        return type(self.payload).__name__


TAGS = {
    ShareUpload: 1,
    TripleBatch: 2,
    EvalRequest: 3,
    BeaverOpen: 4,
    FitnessShare: 5,
    Control: 6,
    Handshake: 7,
    HandshakeAck: 8,
}
_BY_TAG = {v: k for k, v in TAGS.items()}


# -- primitive writers/readers -------------------------------------------------


def _str(s: str, width: struct.Struct) -> bytes:
    raw = s.encode("utf-8")
    return width.pack(len(raw)) + raw


def _ring(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<u8").tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise ChannelFailure("truncated frame")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))[0]

    def string(self, width: struct.Struct) -> str:
        return bytes(self.take(self.unpack(width))).decode("utf-8")

    def ring(self, count: int) -> np.ndarray:
        return np.frombuffer(bytes(self.take(8 * count)), dtype="<u8").astype(np.uint64)

    def done(self):
        if self.pos != len(self.buf):
            raise ChannelFailure("trailing bytes in frame")


# -- payload codecs --------------------------------------------------------------


def _encode_payload(p) -> bytes:
    if isinstance(p, ShareUpload):
        v = np.asarray(p.values)
        rows = v.shape[0]
        cols = v.shape[1] if v.ndim == 2 else 0
        return _str(p.tag, _U16) + _U32.pack(rows) + _U32.pack(cols) + _ring(v)
    if isinstance(p, TripleBatch):
        return _U32.pack(len(p.a)) + _ring(p.a) + _ring(p.b) + _ring(p.c)
    if isinstance(p, EvalRequest):
        out = [_str(p.dataset, _U16), _str(p.fitness, _U16), _U32.pack(len(p.expressions))]
        out += [_str(e, _U32) for e in p.expressions]
        return b"".join(out)
    if isinstance(p, BeaverOpen):
        return _U32.pack(len(p.values)) + _ring(p.values)
    if isinstance(p, FitnessShare):
        n = len(p.values)
        invalid = p.invalid or (False,) * n
        return _U32.pack(n) + _ring(p.values) + bytes(bytearray(int(b) for b in invalid))
    if isinstance(p, Control):
        return _str(json.dumps({"op": p.op, "args": p.args}, sort_keys=True), _U32)
    if isinstance(p, Handshake):
        if len(p.config_hash) != 32:
            raise ValueError("config hash must be 32 bytes")
        return (
            _str(p.session_id, _U16) + _str(p.role, _U8)
            + _U8.pack(p.ring_bits) + _U8.pack(p.frac_bits) + p.config_hash
        )
    if isinstance(p, HandshakeAck):
        return _U8.pack(1 if p.ok else 0) + _str(p.reason, _U16)
    raise TypeError(f"cannot encode payload {type(p).__name__}")


def _decode_payload(cls, r: _Reader):
    if cls is ShareUpload:
        tag = r.string(_U16)
        rows, cols = r.unpack(_U32), r.unpack(_U32)
        vals = r.ring(rows * max(cols, 1))
        return ShareUpload(tag, vals.reshape(rows, cols) if cols else vals)
    if cls is TripleBatch:
        n = r.unpack(_U32)
        return TripleBatch(r.ring(n), r.ring(n), r.ring(n))
    if cls is EvalRequest:
        dataset, fitness = r.string(_U16), r.string(_U16)
        n = r.unpack(_U32)
        return EvalRequest(dataset, fitness, tuple(r.string(_U32) for _ in range(n)))
    if cls is BeaverOpen:
        return BeaverOpen(r.ring(r.unpack(_U32)))
    if cls is FitnessShare:
        n = r.unpack(_U32)
        vals = r.ring(n)
        return FitnessShare(vals, tuple(bool(b) for b in bytes(r.take(n))))
    if cls is Control:
        obj = json.loads(r.string(_U32))
        return Control(obj["op"], obj["args"])
    if cls is Handshake:
        sid, role = r.string(_U16), r.string(_U8)
        return Handshake(sid, role, r.unpack(_U8), r.unpack(_U8), bytes(r.take(32)))
    if cls is HandshakeAck:
        return HandshakeAck(bool(r.unpack(_U8)), r.string(_U16))
    raise TypeError(cls)


# -- frames ----------------------------------------------------------------------


def _frame(tag: int, body: bytes) -> bytes:
    return _LEN.pack(len(body) + 1) + _U8.pack(tag) + body


def encode_message(msg: Message) -> bytes:
    header = (
        _str(msg.session_id, _U16) + _U64.pack(msg.sequence_no)
        + _str(msg.sender, _U8) + _str(msg.receiver, _U8)
    )
    return _frame(TAGS[type(msg.payload)], header + _encode_payload(msg.payload))


def encode_handshake(p: Handshake | HandshakeAck) -> bytes:
    return _frame(TAGS[type(p)], _encode_payload(p))


def decode_frame(frame: bytes):
    """Decode one full frame (length prefix included) into a Message or handshake payload."""
    r = _Reader(frame)
    length = r.unpack(_LEN)
    if length != len(frame) - _LEN.size:
        raise ChannelFailure("frame length prefix does not match frame size")
    tag = r.unpack(_U8)
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise ChannelFailure(f"unknown payload tag {tag}")
    if cls in (Handshake, HandshakeAck):
        out = _decode_payload(cls, r)
    else:
        sid = r.string(_U16)
        seq = r.unpack(_U64)
        sender, receiver = r.string(_U8), r.string(_U8)
        out = Message(sid, seq, sender, receiver, _decode_payload(cls, r))
    r.done()
    return out


def read_frame(sock) -> bytes | None:
    """Read one frame from a blocking socket; None on clean EOF."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    body = _recv_exact(sock, length)
    if body is None:
        raise ChannelFailure("connection closed mid-frame")
    return head + body


def _recv_exact(sock, n: int) -> bytes | None:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise ChannelFailure("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)

"""Canonical TLV codec for protocol frames, generic key-file records and MTU chunking.

Frame layout (all integers big-endian)::

    procedure u8 | step u8 | field-count u8
    ( tag u8 | len u16 | value ) * field-count
    auth-kind u8 | len u16 | auth-value

``auth-kind`` 0 means no authenticator (length must then be 0).  The bytes a
signature or MAC covers are the frame minus the trailing auth slot, see
:func:`signed_bytes`.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

INFINITY = 2**64 - 1
DEFAULT_MTU = 254
CHUNK_HEADER = struct.Struct(">HHH")  # seq, total, payload length


class WireError(ValueError):
    pass


class Procedure(enum.IntEnum):
    SETUP = 1
    SET_ROOT = 2
    UPLOAD_GPK = 3
    DELEGATE = 4
    EXECUTE = 5
    EXECUTE_OTF = 6


class Tag(enum.IntEnum):
    MANUFACTURER = 0x01
    CAR_ID = 0x02
    CAR_KEY = 0x03
    IBS_PARAMS = 0x04
    RIGHTS = 0x05
    SELLER = 0x06
    ACT = 0x07
    OWNER_DATA = 0x08
    PSEUDONYM = 0x09
    T_START = 0x0A
    T_STOP = 0x0B
    NONCE_OWN = 0x0C
    NONCE_CAR = 0x0D
    NONCE_USR = 0x0E
    ROLE = 0x0F
    GPK = 0x10
    ATTRS = 0x11
    EPK = 0x12
    ENC_TOKEN = 0x13
    TRUNC = 0x14
    EMBEDDED = 0x15
    KEM_CT = 0x16
    SID = 0x17
    ENC_ACTION = 0x18
    OWNER_SIG = 0x19
    CREDENTIAL = 0x1A
    TIMESTAMP = 0x1B
    RECEIPT = 0x1C
    PREV_MAC = 0x1D
    DELEG_KIND = 0x1E


class AuthKind(enum.IntEnum):
    NONE = 0
    IBS = 1
    GS = 2
    MAC = 3


@dataclass(frozen=True)
class Auth:
    kind: AuthKind
    value: bytes


T = Tag
_R, _O = False, True  # required / optional
SCHEMAS: dict[tuple[Procedure, int], tuple[tuple[tuple[Tag, bool], ...], frozenset]] = {}


def _schema(proc, step, tags, auth, optional=()):
    layout = tuple((t, _R) for t in tags) + tuple((t, _O) for t in optional)
    SCHEMAS[(proc, step)] = (layout, frozenset(auth))


P, A = Procedure, AuthKind
_schema(P.SETUP, 1, [T.MANUFACTURER, T.CAR_ID, T.CAR_KEY, T.IBS_PARAMS, T.RIGHTS], [A.NONE])
_schema(P.SET_ROOT, 1, [T.SELLER, T.MANUFACTURER, T.CAR_ID, T.TIMESTAMP], [A.IBS])
_schema(P.SET_ROOT, 2, [T.ACT, T.SELLER, T.CAR_ID, T.TIMESTAMP], [A.IBS])
_schema(P.SET_ROOT, 3, [T.OWNER_DATA, T.PSEUDONYM, T.T_START, T.T_STOP], [A.NONE])
_schema(P.SET_ROOT, 4, [T.PSEUDONYM, T.T_START, T.T_STOP, T.SELLER, T.EMBEDDED, T.TIMESTAMP], [A.IBS])
_schema(P.UPLOAD_GPK, 1, [T.NONCE_OWN, T.PSEUDONYM, T.CAR_ID, T.TIMESTAMP], [A.IBS])
_schema(P.UPLOAD_GPK, 2, [T.NONCE_OWN, T.NONCE_CAR, T.TIMESTAMP], [A.IBS])
_schema(P.UPLOAD_GPK, 3, [T.NONCE_OWN, T.NONCE_CAR, T.ROLE, T.GPK, T.T_START, T.T_STOP, T.TIMESTAMP], [A.IBS])
_schema(P.UPLOAD_GPK, 4, [T.ACT, T.EMBEDDED, T.TIMESTAMP], [A.IBS])
_schema(P.DELEGATE, 1, [T.PSEUDONYM, T.ROLE, T.ATTRS, T.T_START, T.T_STOP, T.DELEG_KIND, T.EPK, T.NONCE_USR,
                        T.TIMESTAMP], [A.IBS])
_schema(P.DELEGATE, 2, [T.NONCE_OWN, T.NONCE_USR, T.ENC_TOKEN, T.TRUNC, T.TIMESTAMP], [A.GS])
_schema(P.DELEGATE, 3, [T.RECEIPT, T.TIMESTAMP], [A.IBS])
_schema(P.DELEGATE, 4, [T.KEM_CT], [A.NONE])
_schema(P.EXECUTE, 1, [T.NONCE_USR, T.ROLE, T.ATTRS, T.TIMESTAMP], [A.GS, A.IBS],
        optional=[T.CREDENTIAL, T.OWNER_SIG])
_schema(P.EXECUTE, 2, [T.EPK, T.NONCE_CAR, T.SID, T.TRUNC, T.TIMESTAMP], [A.IBS])
_schema(P.EXECUTE, 3, [T.KEM_CT, T.ENC_ACTION], [A.MAC])
_schema(P.EXECUTE_OTF, 1, [T.SID, T.ENC_ACTION], [A.MAC])
_schema(P.EXECUTE_OTF, 2, [T.NONCE_CAR, T.TRUNC], [A.MAC])
_schema(P.EXECUTE_OTF, 3, [T.PREV_MAC], [A.MAC])
del P, A

STEP_COUNT = {proc: max(s for (p, s) in SCHEMAS if p == proc) for proc in Procedure}


@dataclass(frozen=True)
class WireMessage:
    procedure: Procedure
    step: int
    fields: tuple[tuple[Tag, bytes], ...] = ()
    auth: Auth | None = None

    def __post_init__(self):
        if self.auth is not None and self.auth.kind == AuthKind.NONE and not self.auth.value:
            object.__setattr__(self, "auth", None)
        object.__setattr__(self, "fields", tuple((Tag(t), bytes(v)) for t, v in self.fields))

    def get(self, tag: Tag, default: bytes | None = None) -> bytes:
        for t, v in self.fields:
            if t == tag:
                return v
        if default is not None:
            return default
        raise WireError(f"field {tag.name} missing from {self.procedure.name}:{self.step}")

    def has(self, tag: Tag) -> bool:
        return any(t == tag for t, _ in self.fields)

    def with_auth(self, kind: AuthKind, value: bytes) -> "WireMessage":
        return WireMessage(self.procedure, self.step, self.fields, Auth(kind, bytes(value)))

    def replace_field(self, index: int, value: bytes) -> "WireMessage":
        fields = list(self.fields)
        fields[index] = (fields[index][0], value)
        return WireMessage(self.procedure, self.step, tuple(fields), self.auth)


def check_legal(msg: WireMessage, check_auth: bool = True) -> None:
    key = (msg.procedure, msg.step)
    if key not in SCHEMAS:
        raise WireError(f"unknown procedure/step {msg.procedure!r}:{msg.step}")
    layout, auths = SCHEMAS[key]
    tags = [t for t, _ in msg.fields]
    required = [t for t, opt in layout if not opt]
    optional = [t for t, opt in layout if opt]
    if tags[:len(required)] != required or tags[len(required):] not in ([], optional):
        raise WireError(f"illegal field layout for {msg.procedure.name}:{msg.step}: {[t.name for t in tags]}")
    if not check_auth:
        return
    kind = msg.auth.kind if msg.auth else AuthKind.NONE
    if kind not in auths:
        raise WireError(f"auth {kind.name} not allowed for {msg.procedure.name}:{msg.step}")
    if kind == AuthKind.NONE and msg.auth is not None and msg.auth.value:
        raise WireError("auth kind NONE must carry no value")


def _encode_body(msg: WireMessage) -> bytearray:
    out = bytearray(struct.pack(">BBB", int(msg.procedure), msg.step, len(msg.fields)))
    for tag, value in msg.fields:
        if len(value) > 0xFFFF:
            raise WireError("field value too long")
        out += struct.pack(">BH", int(tag), len(value)) + value
    return out


def signed_bytes(msg: WireMessage) -> bytes:
    """Header plus fields: exactly what the frame's authenticator covers."""
    check_legal(msg, check_auth=False)
    return bytes(_encode_body(msg))


def encode(msg: WireMessage) -> bytes:
    check_legal(msg)
    out = _encode_body(msg)
    auth = msg.auth or Auth(AuthKind.NONE, b"")
    if len(auth.value) > 0xFFFF:
        raise WireError("auth value too long")
    out += struct.pack(">BH", int(auth.kind), len(auth.value)) + auth.value
    return bytes(out)


def decode(data: bytes) -> WireMessage:
    data = bytes(data)
    if len(data) < 3:
        raise WireError("truncated header")
    proc_b, step, count = struct.unpack_from(">BBB", data, 0)
    try:
        proc = Procedure(proc_b)
    except ValueError as exc:
        raise WireError(f"unknown procedure {proc_b}") from exc
    off = 3
    fields = []
    for _ in range(count):
        if off + 3 > len(data):
            raise WireError("truncated field header")
        tag_b, ln = struct.unpack_from(">BH", data, off)
        off += 3
        if off + ln > len(data):
            raise WireError("truncated field value")
        try:
            tag = Tag(tag_b)
        except ValueError as exc:
            raise WireError(f"unknown tag {tag_b}") from exc
        fields.append((tag, data[off:off + ln]))
        off += ln
    if off + 3 > len(data):
        raise WireError("truncated auth slot")
    kind_b, ln = struct.unpack_from(">BH", data, off)
    off += 3
    if off + ln > len(data):
        raise WireError("truncated auth value")
    try:
        kind = AuthKind(kind_b)
    except ValueError as exc:
        raise WireError(f"unknown auth kind {kind_b}") from exc
    auth_value = data[off:off + ln]
    off += ln
    if off != len(data):
        raise WireError("trailing garbage after frame")
    auth = None if kind == AuthKind.NONE and not auth_value else Auth(kind, auth_value)
    msg = WireMessage(proc, step, tuple(fields), auth)
    check_legal(msg)
    return msg


# ---------------------------------------------------------------- scalar helpers

def u64(x: int) -> bytes:
    return struct.pack(">Q", x)


def read_u64(b: bytes) -> int:
    if len(b) != 8:
        raise WireError("expected 8-byte integer")
    return struct.unpack(">Q", b)[0]


def timestamp(t: float | None) -> bytes:
    """Seconds since epoch; ``None`` encodes infinity (all ones)."""
    return u64(INFINITY if t is None else int(t))


def read_timestamp(b: bytes) -> float:
    v = read_u64(b)
    return math.inf if v == INFINITY else float(v)


# ---------------------------------------------------------------- generic records

def encode_fields(fields) -> bytes:
    """Fields-only TLV (count u8, then tag u8 / len u16 / value); tags are plain ints here."""
    fields = list(fields)
    if len(fields) > 255:
        raise WireError("too many fields")
    out = bytearray([len(fields)])
    for tag, value in fields:
        if len(value) > 0xFFFF:
            raise WireError("field value too long")
        out += struct.pack(">BH", int(tag), len(value)) + bytes(value)
    return bytes(out)


def decode_fields(data: bytes) -> list[tuple[int, bytes]]:
    data = bytes(data)
    if not data:
        raise WireError("empty record")
    count, off, fields = data[0], 1, []
    for _ in range(count):
        if off + 3 > len(data):
            raise WireError("truncated record field")
        tag, ln = struct.unpack_from(">BH", data, off)
        off += 3
        if off + ln > len(data):
            raise WireError("truncated record value")
        fields.append((tag, data[off:off + ln]))
        off += ln
    if off != len(data):
        raise WireError("trailing bytes in record")
    return fields


RECORD_MAGIC = b"CAK1"


def encode_record(kind: int, fields) -> bytes:
    """Key-file record: magic, kind byte, fields-only TLV."""
    return RECORD_MAGIC + bytes([kind]) + encode_fields(fields)


def decode_record(data: bytes, expected_kind: int | None = None) -> tuple[int, dict[int, bytes]]:
    data = bytes(data)
    if data[:4] != RECORD_MAGIC or len(data) < 6:
        raise WireError("not a key record")
    kind = data[4]
    if expected_kind is not None and kind != expected_kind:
        raise WireError(f"record kind {kind:#x}, expected {expected_kind:#x}")
    fields = decode_fields(data[5:])
    out: dict[int, bytes] = {}
    for tag, value in fields:
        if tag in out:
            raise WireError(f"duplicate record field {tag}")
        out[tag] = value
    return kind, out


# ---------------------------------------------------------------- chunking

@dataclass(frozen=True)
class Chunk:
    seq: int
    total: int
    payload: bytes = field(repr=False)

    def to_bytes(self) -> bytes:
        return CHUNK_HEADER.pack(self.seq, self.total, len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Chunk":
        if len(data) < CHUNK_HEADER.size:
            raise WireError("truncated chunk")
        seq, total, ln = CHUNK_HEADER.unpack_from(data)
        if len(data) != CHUNK_HEADER.size + ln:
            raise WireError("chunk length mismatch")
        return cls(seq, total, bytes(data[CHUNK_HEADER.size:]))


def chunk(data: bytes, mtu: int = DEFAULT_MTU) -> list[Chunk]:
    if mtu < 16:
        raise WireError("mtu must be at least 16")
    room = mtu - CHUNK_HEADER.size
    total = max(1, -(-len(data) // room))
    if total > 0xFFFF:
        raise WireError("message too large to chunk")
    return [Chunk(i, total, bytes(data[i * room:(i + 1) * room])) for i in range(total)]


def reassemble(chunks) -> bytes:
    chunks = list(chunks)
    if not chunks:
        raise WireError("no chunks")
    total = chunks[0].total
    seen: dict[int, bytes] = {}
    for c in chunks:
        if c.total != total:
            raise WireError("inconsistent chunk totals")
        if not 0 <= c.seq < total:
            raise WireError(f"chunk seq {c.seq} out of range")
        if c.seq in seen:
            raise WireError(f"duplicate chunk {c.seq}")
        seen[c.seq] = c.payload
    if len(seen) != total:
        missing = sorted(set(range(total)) - set(seen))
        raise WireError(f"missing chunks {missing}")
    return b"".join(seen[i] for i in range(total))

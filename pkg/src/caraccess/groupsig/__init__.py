"""Group signatures: gen / sign / verify / trace over a pluggable backend.

Two backends implement the same interface:

``bbs04``
    Short group signatures of Boneh, Boyen and Shacham over BLS12-381
    (pairings from ``py_arkworks_bls12381``).
``reference``
    Dependency-light construction: all members share an Ed25519 group signing
    key and each signature carries the signer's index and manager-issued
    certificate, encrypted to the manager.  Correct tracing and an anonymous
    verification interface, but any member can sign on behalf of the group
    key alone, so privacy against the manager's peers is only as good as the
    encryption.

Keys are opaque byte blobs tagged with their backend; mixing backends is an
explicit error.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..rng import Rng
from ..wire import WireError, decode_record, encode_record

BACKENDS = ("reference", "bbs04")
DEFAULT_BACKEND = "reference"

REC_GPK, REC_GMSK, REC_MEMBER = 0x20, 0x21, 0x22


class GroupSigError(Exception):
    pass


class BackendMismatch(GroupSigError):
    pass


class TraceError(GroupSigError):
    pass


@dataclass(frozen=True)
class GroupPublicKey:
    backend: str
    group_size: int
    material: bytes

    def to_bytes(self) -> bytes:
        return encode_record(REC_GPK, [(1, self.backend.encode()), (2, self.group_size.to_bytes(2, "big")),
                                       (3, self.material)])

    @classmethod
    def from_bytes(cls, data: bytes, backend: str | None = None) -> "GroupPublicKey":
        f = _load(data, REC_GPK, backend)
        return cls(f[1].decode(), int.from_bytes(f[2], "big"), f[3])


@dataclass(frozen=True)
class GroupManagerKey:
    backend: str
    material: bytes

    def to_bytes(self) -> bytes:
        return encode_record(REC_GMSK, [(1, self.backend.encode()), (3, self.material)])

    @classmethod
    def from_bytes(cls, data: bytes, backend: str | None = None) -> "GroupManagerKey":
        f = _load(data, REC_GMSK, backend)
        return cls(f[1].decode(), f[3])

    def __repr__(self) -> str:
        return f"GroupManagerKey(backend={self.backend!r})"


@dataclass(frozen=True)
class GroupMemberKey:
    backend: str
    index: int
    material: bytes

    def to_bytes(self) -> bytes:
        return encode_record(REC_MEMBER, [(1, self.backend.encode()), (2, self.index.to_bytes(2, "big")),
                                          (3, self.material)])

    @classmethod
    def from_bytes(cls, data: bytes, backend: str | None = None) -> "GroupMemberKey":
        f = _load(data, REC_MEMBER, backend)
        return cls(f[1].decode(), int.from_bytes(f[2], "big"), f[3])

    def __repr__(self) -> str:
        return f"GroupMemberKey(backend={self.backend!r}, index={self.index})"


def _load(data: bytes, kind: int, backend: str | None) -> dict:
    _, f = decode_record(data, kind)
    for tag in (1, 3):
        if tag not in f:
            raise WireError(f"group key record lacks field {tag}")
    name = f[1].decode(errors="replace")
    if name not in BACKENDS:
        raise WireError(f"unknown group signature backend {name!r}")
    if backend is not None and name != backend:
        raise BackendMismatch(f"key belongs to backend {name!r}, not {backend!r}")
    return f


def _impl(backend: str):
    if backend == "reference":
        from . import reference as mod
    elif backend == "bbs04":
        from . import bbs04 as mod
    else:
        raise GroupSigError(f"unknown backend {backend!r}")
    return mod


def _same_backend(*keys) -> str:
    names = {k.backend for k in keys}
    if len(names) != 1:
        raise BackendMismatch(f"keys from different backends: {sorted(names)}")
    return names.pop()


def gs_gen(n: int, rng: Rng, backend: str = DEFAULT_BACKEND):
    """Returns ``(gpk, gmsk, [gsk_1 .. gsk_n])``; member indices start at 1."""
    if not isinstance(n, int) or n < 1:
        raise GroupSigError("group size must be at least 1")
    if n > 0xFFFF:
        raise GroupSigError("group too large")
    gpk_m, gmsk_m, members = _impl(backend).gen(n, rng)
    gpk = GroupPublicKey(backend, n, gpk_m)
    return gpk, GroupManagerKey(backend, gmsk_m), [GroupMemberKey(backend, i + 1, m) for i, m in enumerate(members)]


def gs_sign(gpk: GroupPublicKey, gsk: GroupMemberKey, msg: bytes, rng: Rng) -> bytes:
    backend = _same_backend(gpk, gsk)
    return _impl(backend).sign(gpk.material, gsk.index, gsk.material, bytes(msg), rng)


def gs_verify(gpk: GroupPublicKey, msg: bytes, sig: bytes) -> bool:
    try:
        return bool(_impl(gpk.backend).verify(gpk.material, bytes(msg), bytes(sig)))
    except Exception:  # total on arbitrary input
        return False


def gs_trace(gpk: GroupPublicKey, gmsk: GroupManagerKey, msg: bytes, sig: bytes) -> int:
    backend = _same_backend(gpk, gmsk)
    if not gs_verify(gpk, msg, sig):
        raise TraceError("signature does not verify")
    index = _impl(backend).trace(gpk.material, gmsk.material, bytes(msg), bytes(sig))
    if not 1 <= index <= gpk.group_size:
        raise TraceError("traced index outside the group")
    return index


def truncate64(sig: bytes) -> bytes:
    if len(sig) < 8:
        raise GroupSigError("signature shorter than 8 bytes")
    return bytes(sig[-8:])

"""Conventional building blocks: SHA-256, HMAC, AES-GCM, a KEM and ECDH.

All randomness comes from an injected :class:`~caraccess.rng.Rng`, so every
operation here is reproducible under a fixed seed.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .numtheory import byte_len, modinv, random_prime
from .rng import Rng

KEY_LEN = 32
MAC_LEN = 32
GCM_NONCE_LEN = 12
KEM_CONFIRM_LEN = 16


class CryptoError(Exception):
    """Base class for explicit cryptographic failures."""


class DecryptionError(CryptoError):
    pass


class KemError(CryptoError):
    pass


class DhError(CryptoError):
    pass


# ---------------------------------------------------------------- hashing / MAC

def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the protocol vocabulary
    return hashlib.sha256(data).digest()


def hash_int(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest(), "big")


@dataclass(frozen=True)
class SymmetricKey:
    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)) or len(self.value) != KEY_LEN:
            raise ValueError(f"symmetric key must be exactly {KEY_LEN} bytes")

    @classmethod
    def generate(cls, rng: Rng) -> "SymmetricKey":
        return cls(rng.bytes(KEY_LEN))

    def __repr__(self) -> str:
        return "SymmetricKey(<redacted>)"


def mac_sign(key: SymmetricKey, msg: bytes) -> bytes:
    return hmac.new(key.value, msg, hashlib.sha256).digest()


def mac_verify(key: SymmetricKey, msg: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac_sign(key, msg), bytes(tag))


# ---------------------------------------------------------------- AEAD

def sym_encrypt(key: SymmetricKey, plaintext: bytes, rng: Rng) -> bytes:
    """AES-256-GCM; output is ``nonce || ciphertext || tag``."""
    nonce = rng.bytes(GCM_NONCE_LEN)
    return nonce + AESGCM(key.value).encrypt(nonce, plaintext, None)


def sym_decrypt(key: SymmetricKey, blob: bytes) -> bytes:
    if len(blob) < GCM_NONCE_LEN + 16:
        raise DecryptionError("ciphertext too short")
    try:
        return AESGCM(key.value).decrypt(blob[:GCM_NONCE_LEN], blob[GCM_NONCE_LEN:], None)
    except InvalidTag as exc:
        raise DecryptionError("authentication failed") from exc


# ---------------------------------------------------------------- ECDH

CURVES = {
    "p256": (ec.SECP256R1(), 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551),
    "p192": (ec.SECP192R1(), 0xFFFFFFFFFFFFFFFFFFFFFFFF99DEF836146BC9B1B4D22831),
}
_POINT_LEN = {65: "p256", 49: "p192"}
DEFAULT_CURVE = "p256"


@dataclass(frozen=True)
class DhShare:
    scalar: int
    point: bytes
    curve: str = DEFAULT_CURVE

    def __repr__(self) -> str:
        return f"DhShare(curve={self.curve!r}, point={self.point.hex()[:16]}...)"


def dh_keygen(rng: Rng, curve: str = DEFAULT_CURVE) -> DhShare:
    crv, order = CURVES[curve]
    scalar = rng.randrange(1, order)
    priv = ec.derive_private_key(scalar, crv)
    point = priv.public_key().public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)
    return DhShare(scalar, point, curve)


def _load_point(point: bytes, curve: str | None = None):
    curve = curve or _POINT_LEN.get(len(point))
    if curve is None or curve not in CURVES:
        raise DhError("unrecognised point encoding")
    try:
        return curve, ec.EllipticCurvePublicKey.from_encoded_point(CURVES[curve][0], bytes(point))
    except ValueError as exc:
        # also covers the point at infinity (single 0x00 byte)
        raise DhError(f"invalid peer share: {exc}") from exc


def dh_combine(my_scalar: int, their_point: bytes, curve: str = DEFAULT_CURVE) -> SymmetricKey:
    """Session key = SHA-256 over the x-coordinate of the shared point."""
    curve, peer = _load_point(their_point, curve)
    crv, order = CURVES[curve]
    if not 0 < my_scalar < order:
        raise DhError("scalar out of range")
    try:
        shared = ec.derive_private_key(my_scalar, crv).exchange(ec.ECDH(), peer)
    except ValueError as exc:
        raise DhError(str(exc)) from exc
    return SymmetricKey(hash(b"dh-session|" + shared))


# ---------------------------------------------------------------- KEM

KEM_RSA = 0x01
KEM_DH = 0x02
KEM_KINDS = {"rsa": KEM_RSA, "dh": KEM_DH}


@dataclass(frozen=True)
class KemKeyPair:
    """``public_part`` is a self-describing byte string (kind byte first)."""

    public_part: bytes
    secret_part: tuple

    @property
    def kind(self) -> str:
        return "rsa" if self.public_part[0] == KEM_RSA else "dh"

    def __repr__(self) -> str:
        return f"KemKeyPair(kind={self.kind!r})"


def _pack_ints(*xs: int) -> bytes:
    out = bytearray()
    for x in xs:
        b = x.to_bytes(byte_len(x) or 1, "big")
        out += struct.pack(">H", len(b)) + b
    return bytes(out)


def _unpack_ints(data: bytes, count: int) -> list[int]:
    xs, off = [], 0
    for _ in range(count):
        if off + 2 > len(data):
            raise KemError("truncated public key")
        (ln,) = struct.unpack_from(">H", data, off)
        off += 2
        if off + ln > len(data):
            raise KemError("truncated public key")
        xs.append(int.from_bytes(data[off:off + ln], "big"))
        off += ln
    if off != len(data):
        raise KemError("trailing bytes in public key")
    return xs


def _confirm(material: bytes) -> bytes:
    return hash(b"kem-confirm|" + material)[:KEM_CONFIRM_LEN]


def kem_keygen(kind: str, rng: Rng, rsa_bits: int = 2048, curve: str = DEFAULT_CURVE) -> KemKeyPair:
    if kind == "rsa":
        e = 65537
        while True:
            p = random_prime(rsa_bits // 2, rng)
            q = random_prime(rsa_bits // 2, rng)
            phi = (p - 1) * (q - 1)
            if p != q and phi % e:
                break
        n = p * q
        d = modinv(e, phi)
        return KemKeyPair(bytes([KEM_RSA]) + _pack_ints(n, e), ("rsa", n, d, p, q))
    if kind == "dh":
        share = dh_keygen(rng, curve)
        return KemKeyPair(bytes([KEM_DH]) + share.point, ("dh", share.scalar, share.curve))
    raise ValueError(f"unknown KEM kind {kind!r}")


def kem_encapsulate(pk: bytes, rng: Rng) -> tuple[SymmetricKey, bytes]:
    """Returns ``(shared key, ciphertext)``; the ciphertext carries a key-confirmation tag."""
    if not pk:
        raise KemError("empty public key")
    if pk[0] == KEM_RSA:
        n, e = _unpack_ints(pk[1:], 2)
        if n < 2**64 or e < 3:
            raise KemError("implausible RSA public key")
        width = byte_len(n)
        r = rng.randrange(2, n - 1)
        rb = r.to_bytes(width, "big")
        c = pow(r, e, n).to_bytes(width, "big")
        return SymmetricKey(hash(b"kem-rsa|" + rb)), c + _confirm(rb)
    if pk[0] == KEM_DH:
        try:
            curve, _ = _load_point(pk[1:])
        except DhError as exc:
            raise KemError(str(exc)) from exc
        eph = dh_keygen(rng, curve)
        key = dh_combine(eph.scalar, pk[1:], curve)
        return key, eph.point + _confirm(key.value)
    raise KemError("unknown KEM kind")


def kem_decapsulate(keypair: KemKeyPair, ct: bytes) -> SymmetricKey:
    ct = bytes(ct)
    body, tag = ct[:-KEM_CONFIRM_LEN], ct[-KEM_CONFIRM_LEN:]
    secret = keypair.secret_part
    if secret[0] == "rsa":
        _, n, d, p, q = secret
        width = byte_len(n)
        if len(ct) != width + KEM_CONFIRM_LEN:
            raise KemError("ciphertext has wrong length")
        c = int.from_bytes(body, "big")
        if not 0 < c < n:
            raise KemError("ciphertext out of range")
        # CRT decryption
        mp = pow(c, d % (p - 1), p)
        mq = pow(c, d % (q - 1), q)
        r = (mq + q * (((mp - mq) * pow(q, -1, p)) % p)) % n
        rb = r.to_bytes(width, "big")
        if not hmac.compare_digest(_confirm(rb), tag):
            raise KemError("key confirmation failed")
        return SymmetricKey(hash(b"kem-rsa|" + rb))
    if secret[0] == "dh":
        _, scalar, curve = secret
        if len(tag) != KEM_CONFIRM_LEN:
            raise KemError("ciphertext too short")
        try:
            key = dh_combine(scalar, body, curve)
        except DhError as exc:
            raise KemError(str(exc)) from exc
        if not hmac.compare_digest(_confirm(key.value), tag):
            raise KemError("key confirmation failed")
        return key
    raise KemError("unknown KEM kind")

"""Reference group signature backend (no pairings).

gpk   = Ed25519 group verification key || manager ECDH share
gmsk  = manager ECDH scalar || certificate MAC key
gsk_i = Ed25519 group signing seed || cert_i || manager ECDH share,
        cert_i = HMAC(cert_key, index || H(gpk))

sign  = KEM ciphertext to the manager || AEAD(index || cert_i) || Ed25519 signature
        over the preceding bytes, H(gpk) and the message.
"""

from __future__ import annotations

import hmac
import struct
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .. import crypto
from ..crypto import KEM_DH
from ..rng import Rng

_POINT = 65
_KEM_CT = _POINT + crypto.KEM_CONFIRM_LEN
_PLAIN = 2 + 32
_ENC = crypto.GCM_NONCE_LEN + _PLAIN + 16
_SIG = 64
SIGNATURE_LEN = _KEM_CT + _ENC + _SIG


def _cert(cert_key: bytes, index: int, gpk: bytes) -> bytes:
    return hmac.new(cert_key, b"member|" + struct.pack(">H", index) + crypto.hash(gpk), "sha256").digest()


def gen(n: int, rng: Rng):
    seed = rng.bytes(32)
    pub = Ed25519PrivateKey.from_private_bytes(seed).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    mgr = crypto.dh_keygen(rng)
    cert_key = rng.bytes(32)
    gpk = pub + mgr.point
    gmsk = mgr.scalar.to_bytes(32, "big") + cert_key
    members = [seed + _cert(cert_key, i, gpk) + mgr.point for i in range(1, n + 1)]
    return gpk, gmsk, members


@lru_cache(maxsize=256)
def _signer(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


@lru_cache(maxsize=256)
def _verifier(pub: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(pub)


def sign(gpk: bytes, index: int, gsk: bytes, msg: bytes, rng: Rng) -> bytes:
    seed, cert, mgr_point = gsk[:32], gsk[32:64], gsk[64:]
    key, kct = crypto.kem_encapsulate(bytes([KEM_DH]) + mgr_point, rng)
    enc = crypto.sym_encrypt(key, struct.pack(">H", index) + cert, rng)
    body = kct + enc
    return body + _signer(seed).sign(b"gs-ref|" + crypto.hash(gpk) + body + msg)


def verify(gpk: bytes, msg: bytes, sig: bytes) -> bool:
    if len(sig) != SIGNATURE_LEN or len(gpk) != 32 + _POINT:
        return False
    body, s = sig[:-_SIG], sig[-_SIG:]
    try:
        _verifier(gpk[:32]).verify(s, b"gs-ref|" + crypto.hash(gpk) + body + msg)
    except InvalidSignature:
        return False
    return True


def trace(gpk: bytes, gmsk: bytes, msg: bytes, sig: bytes) -> int:
    from . import TraceError

    scalar, cert_key = int.from_bytes(gmsk[:32], "big"), gmsk[32:]
    kct, enc = sig[:_KEM_CT], sig[_KEM_CT:_KEM_CT + _ENC]
    try:
        key = crypto.kem_decapsulate(crypto.KemKeyPair(bytes([KEM_DH]) + gpk[32:], ("dh", scalar, "p256")), kct)
        plain = crypto.sym_decrypt(key, enc)
    except crypto.CryptoError as exc:
        raise TraceError(f"cannot open signer ciphertext: {exc}") from exc
    index = struct.unpack(">H", plain[:2])[0]
    if not hmac.compare_digest(plain[2:], _cert(cert_key, index, gpk)):
        raise TraceError("signer certificate invalid")
    return index


"""Identity-based signatures: Shamir and Guillou-Quisquater (GQ) over an RSA modulus.

Both schemes follow the four-algorithm shape setup / keyder / sign / verify.
A user's public key is its identity string; the key-generation authority
holding the master key derives the matching secret.

Conventions shared by both schemes:

* the identity map is SHA-256(I) mod n, rehashed with a one-byte counter
  appended whenever the value is not a unit > 1 modulo n;
* hash values used as exponents are reduced mod n;
* signatures encode as two fixed-width big-endian components, each as wide
  as the modulus, in the order (s, t) for Shamir and (d, t) for GQ.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

from .crypto import hash_int
from .numtheory import byte_len, modinv, random_prime
from .rng import Rng
from .wire import WireError, decode_record, encode_record

SHAMIR = "shamir"
GQ = "gq"
SCHEMES = (SHAMIR, GQ)
DEFAULT_SHAMIR_EXPONENT = 65537
# GQ exponent l in d = J^h * T^(v^l); fixed to the smart-card instantiation
GQ_L = 1

REC_PARAMS, REC_MASTER, REC_USER = 0x10, 0x11, 0x12


class IbsError(Exception):
    pass


@dataclass(frozen=True)
class IbsParams:
    scheme: str = SHAMIR
    modulus_bits: int = 2048
    exponent: int | None = None  # preferred e (Shamir) or v (GQ); None = scheme default

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise IbsError(f"unknown IBS scheme {self.scheme!r}")


@dataclass(frozen=True)
class IbsPublicParams:
    scheme: str
    n: int
    exponent: int  # e for Shamir, v for GQ

    @property
    def width(self) -> int:
        return byte_len(self.n)

    def to_bytes(self) -> bytes:
        return encode_record(REC_PARAMS, [(1, self.scheme.encode()), (2, _ib(self.n)), (3, _ib(self.exponent))])

    @classmethod
    def from_bytes(cls, data: bytes) -> "IbsPublicParams":
        _, f = decode_record(data, REC_PARAMS)
        return cls(_scheme(f), _int(f, 2), _int(f, 3))


@dataclass(frozen=True)
class IbsMasterKey:
    scheme: str
    n: int
    exponent: int
    secret_exponent: int  # d = e^-1 or v^-1 mod phi(n)
    p: int
    q: int

    @property
    def public(self) -> IbsPublicParams:
        return IbsPublicParams(self.scheme, self.n, self.exponent)

    def to_bytes(self) -> bytes:
        return encode_record(REC_MASTER, [
            (1, self.scheme.encode()), (2, _ib(self.n)), (3, _ib(self.exponent)),
            (4, _ib(self.secret_exponent)), (5, _ib(self.p)), (6, _ib(self.q)),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "IbsMasterKey":
        _, f = decode_record(data, REC_MASTER)
        return cls(_scheme(f), _int(f, 2), _int(f, 3), _int(f, 4), _int(f, 5), _int(f, 6))

    def __repr__(self) -> str:
        return f"IbsMasterKey(scheme={self.scheme!r}, bits={self.n.bit_length()})"


@dataclass(frozen=True)
class IbsUserKey:
    scheme: str
    identity: bytes
    n: int
    exponent: int
    secret: int          # h(I)^d (Shamir) or B = J^(-1/v) (GQ)
    identity_value: int  # h(I) or J

    @property
    def public(self) -> IbsPublicParams:
        return IbsPublicParams(self.scheme, self.n, self.exponent)

    def to_bytes(self) -> bytes:
        return encode_record(REC_USER, [
            (1, self.scheme.encode()), (2, _ib(self.n)), (3, _ib(self.exponent)),
            (7, self.identity), (8, _ib(self.secret)), (9, _ib(self.identity_value)),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "IbsUserKey":
        _, f = decode_record(data, REC_USER)
        if 7 not in f:
            raise WireError("user key lacks identity")
        return cls(_scheme(f), f[7], _int(f, 2), _int(f, 3), _int(f, 8), _int(f, 9))

    def __repr__(self) -> str:
        return f"IbsUserKey(scheme={self.scheme!r}, identity={self.identity!r})"


@dataclass(frozen=True)
class IbsSignature:
    scheme: str
    first: int   # s (Shamir) or d (GQ)
    t: int
    width: int

    def to_bytes(self) -> bytes:
        return self.first.to_bytes(self.width, "big") + self.t.to_bytes(self.width, "big")

    @classmethod
    def from_bytes(cls, scheme: str, data: bytes, width: int) -> "IbsSignature":
        if len(data) != 2 * width:
            raise IbsError("signature has wrong length")
        return cls(scheme, int.from_bytes(data[:width], "big"), int.from_bytes(data[width:], "big"), width)


def _ib(x: int) -> bytes:
    return x.to_bytes(byte_len(x) or 1, "big")


def _int(f: dict, tag: int) -> int:
    if tag not in f:
        raise WireError(f"record field {tag} missing")
    return int.from_bytes(f[tag], "big")


def _scheme(f: dict) -> str:
    s = f.get(1, b"").decode(errors="replace")
    if s not in SCHEMES:
        raise WireError(f"unknown scheme tag {s!r}")
    return s


# ---------------------------------------------------------------- setup

def _pick_exponent(phi: int, preferred: int | None, rng: Rng) -> int:
    if preferred is not None and 1 < preferred < phi and gcd(preferred, phi) == 1:
        return preferred
    # preferred exponent rejected (or none given): resample until invertible mod phi
    while True:
        cand = rng.randrange(3, phi) | 1
        if cand < phi and gcd(cand, phi) == 1:
            return cand


def setup_from_primes(scheme: str, p: int, q: int, exponent: int | None, rng: Rng) -> tuple[IbsMasterKey, IbsPublicParams]:
    if p == q:
        raise IbsError("p and q must differ")
    n, phi = p * q, (p - 1) * (q - 1)
    if scheme == SHAMIR and exponent is None:
        exponent = DEFAULT_SHAMIR_EXPONENT
    e = _pick_exponent(phi, exponent, rng)
    msk = IbsMasterKey(scheme, n, e, modinv(e, phi), p, q)
    return msk, msk.public


def ibs_setup(params: IbsParams, rng: Rng, max_tries: int = 64) -> tuple[IbsMasterKey, IbsPublicParams]:
    bits = params.modulus_bits
    if bits % 2 or bits < 512:
        raise IbsError("modulus_bits must be even and at least 512")
    preferred = params.exponent
    if params.scheme == SHAMIR and preferred is None:
        preferred = DEFAULT_SHAMIR_EXPONENT
    for _ in range(max_tries):
        p = random_prime(bits // 2, rng)
        q = random_prime(bits // 2, rng)
        if p == q or (p * q).bit_length() != bits:
            continue
        # keep the standard Shamir exponent when possible by redrawing primes
        if params.scheme == SHAMIR and params.exponent is None and gcd(preferred, (p - 1) * (q - 1)) != 1:
            continue
        return setup_from_primes(params.scheme, p, q, preferred, rng)
    raise IbsError("could not generate a modulus")


# ---------------------------------------------------------------- keyder

def identity_map(identity: bytes, n: int) -> int:
    """Map an identity string to a unit of Z_n (not 0 or 1)."""
    candidates = [identity] + [identity + bytes([c]) for c in range(256)]
    for data in candidates:
        x = hash_int(data) % n
        if x > 1 and gcd(x, n) == 1:
            return x
    raise IbsError("identity cannot be mapped into Z_n*")


def derive_from_value(msk: IbsMasterKey, identity: bytes, identity_value: int) -> IbsUserKey:
    n = msk.n
    if msk.scheme == SHAMIR:
        secret = pow(identity_value, msk.secret_exponent, n)
    else:
        secret = modinv(pow(identity_value, msk.secret_exponent, n), n)
    return IbsUserKey(msk.scheme, identity, n, msk.exponent, secret, identity_value)


def ibs_keyder(msk: IbsMasterKey, identity: bytes | str) -> IbsUserKey:
    if isinstance(identity, str):
        identity = identity.encode()
    return derive_from_value(msk, identity, identity_map(identity, msk.n))


# ---------------------------------------------------------------- sign

def _random_unit(n: int, rng: Rng) -> int:
    while True:
        r = rng.randrange(2, n - 1) if n > 4 else rng.randrange(1, n)
        if gcd(r, n) == 1:
            return r


def message_exponent_shamir(n: int, t: int, msg: bytes) -> int:
    return hash_int(t.to_bytes(byte_len(n), "big") + msg) % n


def message_exponent_gq(n: int, msg: bytes) -> int:
    return hash_int(msg) % n


def shamir_sign_with(sk: IbsUserKey, msg: bytes, r: int) -> IbsSignature:
    n = sk.n
    t = pow(r, sk.exponent, n)
    h = message_exponent_shamir(n, t, msg)
    s = sk.secret * pow(r, h, n) % n
    return IbsSignature(SHAMIR, s, t, byte_len(n))


def gq_sign_with(sk: IbsUserKey, msg: bytes, r: int) -> tuple[IbsSignature, int]:
    """Returns the signature and the commitment T = r^v (for internal checks)."""
    n, v, J = sk.n, sk.exponent, sk.identity_value
    T = pow(r, v, n)
    h = message_exponent_gq(n, msg)
    d = pow(J, h, n) * pow(T, v**GQ_L, n) % n
    t = r * pow(sk.secret, d, n) % n
    return IbsSignature(GQ, d, t, byte_len(n)), T


def ibs_sign(sk: IbsUserKey, msg: bytes, rng: Rng) -> IbsSignature:
    r = _random_unit(sk.n, rng)
    if sk.scheme == SHAMIR:
        return shamir_sign_with(sk, msg, r)
    return gq_sign_with(sk, msg, r)[0]


# ---------------------------------------------------------------- verify

def gq_recompute(pp: IbsPublicParams, J: int, msg: bytes, d: int, t: int) -> tuple[int, int]:
    """Verifier side of GQ: returns (T', d') with T' = J^d t^v and d' = J^h T'^(v^l)."""
    n, v = pp.n, pp.exponent
    T_ = pow(J, d, n) * pow(t, v, n) % n
    h = message_exponent_gq(n, msg)
    return T_, pow(J, h, n) * pow(T_, v**GQ_L, n) % n


def gq_literal_check_values(pp: IbsPublicParams, J: int, msg: bytes, d: int, t: int) -> tuple[int, int]:
    """The two quantities of the textbook GQ check as literally stated, d' and d'' = J^(h + d v^l) t^(v^(l+1)).

    They agree for every (d, t), which is why verification compares d' against
    the received d instead.
    """
    n, v = pp.n, pp.exponent
    h = message_exponent_gq(n, msg)
    _, d1 = gq_recompute(pp, J, msg, d, t)
    d2 = pow(J, h + d * v**GQ_L, n) * pow(t, v ** (GQ_L + 1), n) % n
    return d1, d2


def ibs_verify(pp: IbsPublicParams, identity: bytes | str, msg: bytes, sig: IbsSignature | bytes) -> bool:
    """Total: any malformed input yields False."""
    try:
        if isinstance(identity, str):
            identity = identity.encode()
        if isinstance(sig, (bytes, bytearray)):
            sig = IbsSignature.from_bytes(pp.scheme, bytes(sig), pp.width)
        if sig.scheme != pp.scheme or sig.width != pp.width:
            return False
        n = pp.n
        if not (0 < sig.first < n and 0 < sig.t < n):
            return False
        idv = identity_map(identity, n)
        return verify_with_value(pp, idv, msg, sig)
    except (IbsError, ValueError, TypeError):
        return False


def verify_with_value(pp: IbsPublicParams, identity_value: int, msg: bytes, sig: IbsSignature) -> bool:
    n = pp.n
    if pp.scheme == SHAMIR:
        h = message_exponent_shamir(n, sig.t, msg)
        return pow(sig.first, pp.exponent, n) == identity_value * pow(sig.t, h, n) % n
    _, d_ = gq_recompute(pp, identity_value, msg, sig.first, sig.t)
    return d_ == sig.first


def ibs_truncate64(sig: IbsSignature | bytes) -> bytes:
    """Last 64 bits of the canonical signature encoding."""
    data = sig.to_bytes() if isinstance(sig, IbsSignature) else bytes(sig)
    if len(data) < 8:
        raise IbsError("signature encoding shorter than 8 bytes")
    return data[-8:]

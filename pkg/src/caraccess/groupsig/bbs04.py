"""Boneh-Boyen-Shacham short group signatures over BLS12-381.

gpk   = (h, u, v, w) with u^xi1 = v^xi2 = h and w = g2^gamma
gmsk  = (xi1, xi2) plus the registry of member certificates A_i
gsk_i = (A_i, x_i) with A_i = g1^(1/(gamma + x_i))

A signature is (T1, T2, T3, c, s_alpha, s_beta, s_x, s_delta1, s_delta2);
tracing recovers A = T3 / (T1^xi1 T2^xi2) and looks it up in the registry.
Pairing exponentiations are folded into multi-pairings since e(P, Q)^k = e(kP, Q).
"""

from __future__ import annotations

from functools import lru_cache

from py_arkworks_bls12381 import GT, G1Point, G2Point, Scalar

from ..crypto import hash_int
from ..rng import Rng

ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
G1_LEN, G2_LEN, SC_LEN = 48, 96, 32
SIGNATURE_LEN = 3 * G1_LEN + 6 * SC_LEN

_G1 = G1Point()
_G2 = G2Point()


def _enc(point) -> bytes:
    return bytes(point.to_compressed_bytes())


def _rand(rng: Rng) -> int:
    return rng.randrange(1, ORDER)


def _s(x: int) -> Scalar:
    return Scalar(x % ORDER)


def _sb(x: int) -> bytes:
    return (x % ORDER).to_bytes(SC_LEN, "big")


def _read_scalar(b: bytes) -> int:
    x = int.from_bytes(b, "big")
    if x >= ORDER:
        raise ValueError("non-canonical scalar")
    return x


def gen(n: int, rng: Rng):
    h = _G1 * _s(_rand(rng))
    xi1, xi2, gamma = _rand(rng), _rand(rng), _rand(rng)
    u = h * _s(pow(xi1, -1, ORDER))
    v = h * _s(pow(xi2, -1, ORDER))
    w = _G2 * _s(gamma)
    gpk = b"".join(_enc(p) for p in (h, u, v)) + _enc(w)
    members, registry = [], []
    for _ in range(n):
        while True:
            x = _rand(rng)
            if (gamma + x) % ORDER:
                break
        A = _G1 * _s(pow(gamma + x, -1, ORDER))
        a = _enc(A)
        registry.append(a)
        members.append(a + _sb(x))
    gmsk = _sb(xi1) + _sb(xi2) + b"".join(registry)
    return gpk, gmsk, members


@lru_cache(maxsize=64)
def _parse_gpk(gpk: bytes):
    if len(gpk) != 3 * G1_LEN + G2_LEN:
        raise ValueError("bad gpk length")
    h, u, v = (G1Point.from_compressed_bytes(gpk[i * G1_LEN:(i + 1) * G1_LEN]) for i in range(3))
    w = G2Point.from_compressed_bytes(gpk[3 * G1_LEN:])
    return h, u, v, w


def _gt_bytes(x: GT) -> bytes:
    return bytes.fromhex(str(x))


def _challenge(gpk: bytes, msg: bytes, T1, T2, T3, R1, R2, R3, R4, R5) -> int:
    parts = [b"bbs04|", gpk, len(msg).to_bytes(8, "big"), msg]
    parts += [_enc(p) for p in (T1, T2, T3, R1, R2)]
    parts += [_gt_bytes(R3), _enc(R4), _enc(R5)]
    return hash_int(b"".join(parts)) % ORDER


def sign(gpk: bytes, index: int, gsk: bytes, msg: bytes, rng: Rng) -> bytes:
    h, u, v, w = _parse_gpk(gpk)
    A = G1Point.from_compressed_bytes(gsk[:G1_LEN])
    x = int.from_bytes(gsk[G1_LEN:], "big")
    alpha, beta = _rand(rng), _rand(rng)
    T1 = u * _s(alpha)
    T2 = v * _s(beta)
    T3 = A + h * _s(alpha + beta)
    d1, d2 = x * alpha % ORDER, x * beta % ORDER
    ra, rb, rx, rd1, rd2 = (_rand(rng) for _ in range(5))
    R1 = u * _s(ra)
    R2 = v * _s(rb)
    # e(T3,g2)^rx * e(h,w)^(-ra-rb) * e(h,g2)^(-rd1-rd2)
    R3 = GT.multi_pairing([T3 * _s(rx) + h * _s(-(rd1 + rd2)), h * _s(-(ra + rb))], [_G2, w])
    R4 = T1 * _s(rx) - u * _s(rd1)
    R5 = T2 * _s(rx) - v * _s(rd2)
    c = _challenge(gpk, msg, T1, T2, T3, R1, R2, R3, R4, R5)
    resp = [(r + c * s) % ORDER for r, s in ((ra, alpha), (rb, beta), (rx, x), (rd1, d1), (rd2, d2))]
    return b"".join(_enc(p) for p in (T1, T2, T3)) + _sb(c) + b"".join(_sb(z) for z in resp)


def _parse_sig(sig: bytes):
    if len(sig) != SIGNATURE_LEN:
        raise ValueError("bad signature length")
    T = [G1Point.from_compressed_bytes(sig[i * G1_LEN:(i + 1) * G1_LEN]) for i in range(3)]
    off = 3 * G1_LEN
    sc = [_read_scalar(sig[off + i * SC_LEN: off + (i + 1) * SC_LEN]) for i in range(6)]
    return T, sc


def verify(gpk: bytes, msg: bytes, sig: bytes) -> bool:
    h, u, v, w = _parse_gpk(gpk)
    (T1, T2, T3), (c, sa, sb, sx, sd1, sd2) = _parse_sig(sig)
    R1 = u * _s(sa) - T1 * _s(c)
    R2 = v * _s(sb) - T2 * _s(c)
    # e(T3,g2)^sx * e(h,w)^(-sa-sb) * e(h,g2)^(-sd1-sd2) * (e(T3,w)/e(g1,g2))^c
    R3 = GT.multi_pairing(
        [T3 * _s(sx) + h * _s(-(sd1 + sd2)) - _G1 * _s(c), h * _s(-(sa + sb)) + T3 * _s(c)],
        [_G2, w],
    )
    R4 = T1 * _s(sx) - u * _s(sd1)
    R5 = T2 * _s(sx) - v * _s(sd2)
    return _challenge(gpk, msg, T1, T2, T3, R1, R2, R3, R4, R5) == c


def trace(gpk: bytes, gmsk: bytes, msg: bytes, sig: bytes) -> int:
    from . import TraceError

    (T1, T2, T3), _ = _parse_sig(sig)
    xi1, xi2 = int.from_bytes(gmsk[:SC_LEN], "big"), int.from_bytes(gmsk[SC_LEN:2 * SC_LEN], "big")
    A = _enc(T3 - (T1 * _s(xi1) + T2 * _s(xi2)))
    registry = gmsk[2 * SC_LEN:]
    for i in range(len(registry) // G1_LEN):
        if registry[i * G1_LEN:(i + 1) * G1_LEN] == A:
            return i + 1
    raise TraceError("recovered certificate is not registered")

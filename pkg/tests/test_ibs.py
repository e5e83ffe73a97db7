import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caraccess.ibs import (GQ, SHAMIR, IbsError, IbsParams, IbsSignature, derive_from_value, gq_literal_check_values,
                           gq_recompute, gq_sign_with, ibs_keyder, ibs_setup, ibs_sign, ibs_truncate64, ibs_verify,
                           identity_map, setup_from_primes, shamir_sign_with, verify_with_value)
from caraccess.ibs import IbsMasterKey, IbsPublicParams, IbsUserKey
from caraccess.numtheory import modinv
from caraccess.rng import Rng

from . import oracle

TINY = [(5, 11, 3), (7, 13, 5), (11, 17, 3)]
MSG = b"open the doors"


def flip_bit(data: bytes, bit: int) -> bytes:
    i, b = divmod(bit, 8)
    return data[:i] + bytes([data[i] ^ (1 << b)]) + data[i + 1:]


# ---------------------------------------------------------------- tiny-prime oracle

def test_worked_example_p5_q11():
    msk, pp = setup_from_primes(SHAMIR, 5, 11, 3, Rng(0))
    assert (pp.n, pp.exponent, msk.secret_exponent) == (55, 3, 27)
    sk = derive_from_value(msk, b"I", 4)
    assert sk.secret == 49 and pow(49, 3, 55) == 4
    sig = shamir_sign_with(sk, MSG, 2)
    assert sig.t == 8
    h = oracle.h_shamir(55, 8, MSG)
    assert oracle.power(sig.first, 3, 55) == 4 * oracle.power(8, h, 55) % 55


def test_gq_worked_example_p5_q11():
    msk, pp = setup_from_primes(GQ, 5, 11, 3, Rng(0))
    sk = derive_from_value(msk, b"I", 4)
    assert sk.secret == 9                                # 49^-1 mod 55
    assert oracle.power(9, 3, 55) * 4 % 55 == 1          # B^v * J == 1


@pytest.mark.parametrize("p,q,e", TINY)
@pytest.mark.parametrize("scheme", [SHAMIR, GQ])
def test_tiny_prime_oracle_equivalence(scheme, p, q, e):
    n, phi = p * q, (p - 1) * (q - 1)
    msk, pp = setup_from_primes(scheme, p, q, e, Rng(1))
    d = oracle.inverse(e, phi)
    assert (pp.n, pp.exponent, msk.secret_exponent) == (n, e, d)
    table = oracle.power_table(n)
    units = [x for x in range(2, n) if any(x * y % n == 1 for y in range(1, n))]
    for J in units:
        sk = derive_from_value(msk, b"id", J)
        if scheme == SHAMIR:
            assert sk.secret == table[J][d]
        else:
            assert sk.secret == oracle.inverse(table[J][d], n)
            assert table[sk.secret][e] * J % n == 1
    J = units[len(units) // 2]
    sk = derive_from_value(msk, b"id", J)
    for r in units:
        if scheme == SHAMIR:
            sig = shamir_sign_with(sk, MSG, r)
            t = table[r][e]
            s = sk.secret * table[r][oracle.h_shamir(n, t, MSG)] % n
            assert (sig.first, sig.t) == (s, t)
        else:
            sig, T = gq_sign_with(sk, MSG, r)
            T_ = table[r][e]
            dd = table[J][oracle.h_gq(n, MSG)] * table[T_][e] % n
            assert (T, sig.first, sig.t) == (T_, dd, r * table[sk.secret][dd] % n)
        assert verify_with_value(pp, J, MSG, sig)
    # verify agrees with the oracle predicate over every candidate (first, t) pair
    for first in range(1, n):
        for t in range(1, n):
            if scheme == SHAMIR:
                expected = table[first][e] == J * table[t][oracle.h_shamir(n, t, MSG)] % n
            else:
                T_ = table[J][first] * table[t][e] % n
                expected = table[J][oracle.h_gq(n, MSG)] * table[T_][e] % n == first
            sig = IbsSignature(scheme, first, t, pp.width)
            assert verify_with_value(pp, J, MSG, sig) == expected


def test_identity_map_tiny_modulus_rehashes_to_unit():
    for i in range(200):
        x = identity_map(f"user-{i}".encode(), 55)
        assert 1 < x < 55 and x % 5 and x % 11


def test_setup_resamples_exponent_sharing_factor_with_phi():
    # phi(5*11) = 40; e = 5 is not invertible
    msk, pp = setup_from_primes(SHAMIR, 5, 11, 5, Rng(3))
    assert pp.exponent != 5 and pp.exponent * msk.secret_exponent % 40 == 1


def test_setup_rejects_bad_sizes():
    for bits in (256, 513):
        with pytest.raises(IbsError):
            ibs_setup(IbsParams(SHAMIR, bits), Rng(0))
    with pytest.raises(IbsError):
        IbsParams("rsa")


# ---------------------------------------------------------------- 512-bit properties

@pytest.mark.parametrize("scheme", [SHAMIR, GQ])
def test_keyder_consistency(ibs512, scheme):
    msk, pp = ibs512[scheme]
    assert pp.exponent * msk.secret_exponent % ((msk.p - 1) * (msk.q - 1)) == 1
    secrets = set()
    for i in range(100):
        sk = ibs_keyder(msk, f"PsU-{i}")
        if scheme == SHAMIR:
            assert pow(sk.secret, pp.exponent, pp.n) == sk.identity_value
        else:
            assert pow(sk.secret, pp.exponent, pp.n) * sk.identity_value % pp.n == 1
        secrets.add(sk.secret)
    assert len(secrets) == 100


@pytest.mark.parametrize("scheme", [SHAMIR, GQ])
def test_round_trip_tamper_and_wrong_identity(ibs512, scheme):
    msk, pp = ibs512[scheme]
    sk = ibs_keyder(msk, "PsU-alice")
    rng = Rng(4)
    for _ in range(200):
        msg = rng.bytes(1 + rng.randbelow(64))
        sig = ibs_sign(sk, msg, rng)
        raw = sig.to_bytes()
        assert ibs_verify(pp, "PsU-alice", msg, sig) and ibs_verify(pp, "PsU-alice", msg, raw)
        assert not ibs_verify(pp, "PsU-bob", msg, sig)
        assert not ibs_verify(pp, "PsU-alice", flip_bit(msg, rng.randbelow(8 * len(msg))), sig)
        assert not ibs_verify(pp, "PsU-alice", msg, flip_bit(raw, rng.randbelow(8 * len(raw))))
    assert ibs_sign(sk, MSG, rng) != ibs_sign(sk, MSG, rng)


@settings(max_examples=200)
@given(st.binary(max_size=200))
def test_verify_is_total_on_arbitrary_bytes(blob):
    pp = IbsPublicParams(SHAMIR, 3233, 17)
    assert ibs_verify(pp, b"x", b"m", blob) in (False, True)
    assert ibs_verify(IbsPublicParams(GQ, 3233, 17), "x", b"m", blob) in (False, True)


@pytest.mark.parametrize("scheme", [SHAMIR, GQ])
def test_gq_and_shamir_reject_out_of_range_components(ibs512, scheme):
    msk, pp = ibs512[scheme]
    sk = ibs_keyder(msk, "PsU-alice")
    sig = ibs_sign(sk, MSG, Rng(5))
    for first, t in ((0, sig.t), (sig.first, 0), (pp.n, sig.t)):
        bad = IbsSignature(scheme, first, t, pp.width) if first < 256 ** pp.width else None
        assert bad is None or not ibs_verify(pp, "PsU-alice", MSG, bad)


def test_gq_internal_identity_and_vacuous_literal_check(ibs512):
    msk, pp = ibs512[GQ]
    sk = ibs_keyder(msk, "PsU-alice")
    rng = Rng(6)
    for _ in range(50):
        r = rng.randrange(2, pp.n - 1)
        sig, T = gq_sign_with(sk, MSG, r)
        assert gq_recompute(pp, sk.identity_value, MSG, sig.first, sig.t)[0] == T
    for _ in range(200):
        d, t = rng.randrange(1, pp.n), rng.randrange(1, pp.n)
        d1, d2 = gq_literal_check_values(pp, sk.identity_value, rng.bytes(20), d, t)
        assert d1 == d2


def test_truncate64():
    raw = bytes(range(256))
    assert ibs_truncate64(raw) == raw[-8:]
    with pytest.raises(IbsError):
        ibs_truncate64(b"short")


def test_truncate64_of_random_signatures_differ(ibs512):
    msk, pp = ibs512[SHAMIR]
    sk = ibs_keyder(msk, "PsU-alice")
    rng = Rng(7)
    tags = {ibs_truncate64(ibs_sign(sk, MSG, rng)) for _ in range(1000)}
    assert len(tags) == 1000


@pytest.mark.parametrize("scheme", [SHAMIR, GQ])
def test_key_records_round_trip(ibs512, scheme):
    msk, pp = ibs512[scheme]
    sk = ibs_keyder(msk, "PsU-alice")
    assert IbsMasterKey.from_bytes(msk.to_bytes()) == msk
    assert IbsPublicParams.from_bytes(pp.to_bytes()) == pp
    assert IbsUserKey.from_bytes(sk.to_bytes()) == sk
    assert "secret" not in repr(msk) and str(msk.p) not in repr(msk)


def test_modinv_matches_oracle():
    for a, m in ((3, 40), (5, 72), (3, 160), (17, 3120)):
        assert modinv(a, m) == oracle.inverse(a, m)

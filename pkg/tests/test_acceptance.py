"""The thirteen acceptance criteria, each at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in a summary
section at the end of the pytest run.
"""

from __future__ import annotations

import time
from dataclasses import replace

import pytest

from caraccess import bench
from caraccess.cli import shipped_scenarios
from caraccess.groupsig import BACKENDS, TraceError, gs_gen, gs_sign, gs_trace, gs_verify
from caraccess.ibs import (GQ, SHAMIR, IbsParams, IbsSignature, derive_from_value, gq_literal_check_values,
                           gq_recompute, gq_sign_with, ibs_keyder, ibs_setup, ibs_sign, ibs_verify,
                           setup_from_primes, shamir_sign_with, verify_with_value)
from caraccess.policy import load_default_policy, policy_check
from caraccess.protocol import (EPHEMERAL, PERSISTENT, Deployment, ProtocolAbort, Reason, RevocationError, revoke,
                                run_delegate, run_execute, run_execute_otf)
from caraccess.rng import Rng
from caraccess.simulator import battery_scenarios, leak_scenario, parse_scenario, sim_run
from caraccess.wire import WireError, chunk, decode, encode, reassemble

from . import oracle, wiregen
from .rights_matrix import expected_cells

pytestmark = pytest.mark.acceptance
MSG = b"Start Engine"


def flip_bit(data: bytes, bit: int) -> bytes:
    i, b = divmod(bit, 8)
    return data[:i] + bytes([data[i] ^ (1 << b)]) + data[i + 1:]


# ---------------------------------------------------------------- 1

def test_01_ibs_correctness(criterion):
    with criterion(1, "IBS round trips at 512 and 2048 bits, single-bit mutations rejected, < 2 min"):
        start = time.monotonic()
        rng = Rng(101)
        for scheme in (SHAMIR, GQ):
            msk, pp = ibs_setup(IbsParams(scheme, 512), rng)
            sk = ibs_keyder(msk, "PsU-alice")
            rejected = 0
            for i in range(1000):
                msg = rng.bytes(1 + rng.randbelow(64))
                sig = ibs_sign(sk, msg, rng).to_bytes()
                assert ibs_verify(pp, "PsU-alice", msg, sig), (scheme, i)
                if i % 2:
                    ok = ibs_verify(pp, "PsU-alice", flip_bit(msg, rng.randbelow(8 * len(msg))), sig)
                else:
                    ok = ibs_verify(pp, "PsU-alice", msg, flip_bit(sig, rng.randbelow(8 * len(sig))))
                rejected += not ok
            assert rejected == 1000, (scheme, rejected)
            msk, pp = ibs_setup(IbsParams(scheme, 2048), rng)
            sk = ibs_keyder(msk, "PsU-alice")
            for _ in range(10):
                msg = rng.bytes(32)
                assert ibs_verify(pp, "PsU-alice", msg, ibs_sign(sk, msg, rng))
        elapsed = time.monotonic() - start
        assert elapsed < 120, f"took {elapsed:.1f} s"


# ---------------------------------------------------------------- 2

def _oracle_check(scheme: str, p: int, q: int, e: int) -> None:
    n, phi = p * q, (p - 1) * (q - 1)
    table = oracle.power_table(n)
    msk, pp = setup_from_primes(scheme, p, q, e, Rng(2))
    d = oracle.inverse(e, phi)
    assert (pp.n, pp.exponent, msk.secret_exponent) == (n, e, d)
    units = [x for x in range(2, n) if any(x * y % n == 1 for y in range(1, n))]
    for J in units:
        sk = derive_from_value(msk, b"id", J)
        expected = table[J][d] if scheme == SHAMIR else oracle.inverse(table[J][d], n)
        assert sk.secret == expected
        for r in units[:: max(1, len(units) // 8)]:
            if scheme == SHAMIR:
                sig = shamir_sign_with(sk, MSG, r)
                t = table[r][e]
                assert (sig.first, sig.t) == (sk.secret * table[r][oracle.h_shamir(n, t, MSG)] % n, t)
            else:
                sig, T = gq_sign_with(sk, MSG, r)
                dd = table[J][oracle.h_gq(n, MSG)] * table[table[r][e]][e] % n
                assert (T, sig.first, sig.t) == (table[r][e], dd, r * table[sk.secret][dd] % n)
            assert verify_with_value(pp, J, MSG, sig)
    J = units[0]
    for first in range(1, n):
        for t in range(1, n):
            if scheme == SHAMIR:
                want = table[first][e] == J * table[t][oracle.h_shamir(n, t, MSG)] % n
            else:
                T_ = table[J][first] * table[t][e] % n
                want = table[J][oracle.h_gq(n, MSG)] * table[T_][e] % n == first
            assert verify_with_value(pp, J, MSG, IbsSignature(scheme, first, t, pp.width)) == want


def test_02_tiny_prime_oracle(criterion):
    with criterion(2, "setup/keyder/sign/verify equal a brute-force oracle on three tiny prime pairs"):
        msk, pp = setup_from_primes(SHAMIR, 5, 11, 3, Rng(0))
        assert msk.secret_exponent == 27
        sk = derive_from_value(msk, b"I", 4)
        assert sk.secret == 49 and oracle.power(49, 3, 55) == 4
        for p, q, e in ((5, 11, 3), (7, 13, 5), (11, 17, 3)):
            for scheme in (SHAMIR, GQ):
                _oracle_check(scheme, p, q, e)


# ---------------------------------------------------------------- 3

def test_03_gq_ledger_assertions(criterion):
    with criterion(3, "GQ: T' = T when honest, literal d'=d'' always true, d == d' rejects 1000 tampers"):
        rng = Rng(103)
        msk, pp = ibs_setup(IbsParams(GQ, 512), rng)
        sk = ibs_keyder(msk, "PsU-alice")
        J = sk.identity_value
        for _ in range(200):
            sig, T = gq_sign_with(sk, MSG, rng.randrange(2, pp.n - 1))
            T_, d_ = gq_recompute(pp, J, MSG, sig.first, sig.t)
            assert T_ == T and d_ == sig.first
        for _ in range(1000):
            d1, d2 = gq_literal_check_values(pp, J, rng.bytes(16), rng.randrange(1, pp.n), rng.randrange(1, pp.n))
            assert d1 == d2
        rejected = 0
        for i in range(1000):
            sig = ibs_sign(sk, MSG, rng)
            if i % 2:
                bad = flip_bit(sig.to_bytes(), rng.randbelow(8 * len(sig.to_bytes())))
            else:
                bad = IbsSignature(GQ, rng.randrange(1, pp.n), rng.randrange(1, pp.n), pp.width)
            rejected += not ibs_verify(pp, "PsU-alice", MSG, bad)
        assert rejected == 1000


# ---------------------------------------------------------------- 4

def test_04_group_signatures(criterion):
    with criterion(4, "group signatures at n = 1, 10, 32 on both backends: verify, trace, cross-group, 1000 tampers"):
        for backend in BACKENDS:
            rng = Rng(104)
            groups = {n: gs_gen(n, rng, backend) for n in (1, 10, 32)}
            other_gpk, other_gmsk, other_members = gs_gen(2, rng, backend)
            for n, (gpk, gmsk, members) in groups.items():
                for m in members:
                    sig = gs_sign(gpk, m, MSG, rng)
                    assert gs_verify(gpk, MSG, sig)
                    assert gs_trace(gpk, gmsk, MSG, sig) == m.index
                    assert not gs_verify(other_gpk, MSG, sig)
                foreign = gs_sign(other_gpk, other_members[0], MSG, rng)
                assert not gs_verify(gpk, MSG, foreign)
                with pytest.raises(TraceError):
                    gs_trace(gpk, gmsk, MSG, foreign)
            gpk, gmsk, members = groups[10]
            rejected = 0
            for i in range(1000):
                sig = gs_sign(gpk, members[i % 10], MSG, rng)
                if i % 2:
                    ok = gs_verify(gpk, flip_bit(MSG, rng.randbelow(8 * len(MSG))), sig)
                else:
                    ok = gs_verify(gpk, MSG, flip_bit(sig, rng.randbelow(8 * len(sig))))
                rejected += not ok
            assert rejected == 1000, (backend, rejected)


# ---------------------------------------------------------------- 5

def test_05_rights_matrix(criterion):
    with criterion(5, "policy decisions equal the 6 x 17 x 3 rights matrix, 306 cells"):
        table = load_default_policy()
        cells = list(expected_cells())
        assert len(cells) == 306
        wrong = [c for c in cells if bool(policy_check(table, c[0], c[1], c[2])) != c[3]]
        assert wrong == []


# ---------------------------------------------------------------- 6

def test_06_happy_path(criterion):
    with criterion(6, "Setup to Execute-OTF completes, two actions logged, one session, OTF leg has no asymmetric ops"):
        result = sim_run(parse_scenario(shipped_scenarios()["happy_path"]))
        assert result.verdict.safe
        assert all(r == "ok" for _, r in result.goal_results)
        assert [(x.obj, x.action) for x in result.car.executed] == [("Start Engine", "e"), ("Open Doors", "e")]
        assert len(result.car.sessions) == 1

        dep = Deployment.create(Rng(106), modulus_bits=1024).bootstrap(("Driver",))
        user = dep.user("alice")
        run_delegate(dep, user, PERSISTENT, "Driver")
        run_execute(dep, user, "Driver", "Start Engine")
        u, c = run_execute_otf(dep, user, "Open Doors")
        assert u.done and c.done and c.aborted is None
        assert u.asymmetric_ops == 0 and c.asymmetric_ops == 0
        assert [(x.obj, x.action) for x in dep.car.executed] == [("Start Engine", "e"), ("Open Doors", "e")]
        assert len(dep.car.sessions) == 1


# ---------------------------------------------------------------- 7

def test_07_safety_battery(criterion):
    with criterion(7, "replay/drop/mutate/splice battery on Execute and Execute-OTF: always safe, every field mutated"):
        scenarios = battery_scenarios()
        unsafe, unfired, started = [], [], []
        for sc in scenarios:
            result = sim_run(sc)
            if not result.verdict.safe:
                unsafe.append((sc.name, result.verdict.violations))
            if sc.strategy.kind in ("mutate", "drop") and not result.adversary.fired:
                unfired.append(sc.name)
            if any(x.obj == "Start Engine" for x in result.car.executed):
                started.append(sc.name)
        assert unsafe == []
        assert unfired == []
        assert started == []
        assert len(scenarios) >= 100


# ---------------------------------------------------------------- 8

def test_08_leaked_key_attack(criterion):
    with criterion(8, "with the session key leaked the forged OTF exchange is accepted and found"):
        result = sim_run(leak_scenario())
        assert result.verdict.attack_found
        assert any(x.obj == "Start Engine" and x.procedure == "execute-otf" for x in result.car.executed)
        shipped = sim_run(parse_scenario(shipped_scenarios()["leak_session_key"]))
        assert shipped.verdict.attack_found and shipped.verdict.passed


# ---------------------------------------------------------------- 9

def test_09_delegation_fairness(criterion):
    with criterion(9, "dropped final delegation message: owner holds receipt, user has no token; honest tokens work"):
        dep = Deployment.create(Rng(109), modulus_bits=512).bootstrap(("Driver",))
        now = dep.clock()
        for kind, window in ((PERSISTENT, None), (EPHEMERAL, (now, now + 600))):
            dropped = dep.user(f"dropped-{kind}")
            receipts = len(dep.owner.receipts)
            token = run_delegate(dep, dropped, kind, "Driver", window=window,
                                 tap=lambda f: None if decode(f.data).step == 4 else f.data)
            assert token is None and "Driver" not in dropped.tokens
            assert len(dep.owner.receipts) == receipts + 1
            with pytest.raises(ValueError):
                run_execute(dep, dropped, "Driver", "Open Doors")

            honest = dep.user(f"honest-{kind}")
            assert run_delegate(dep, honest, kind, "Driver", window=window) is not None
            _, car = run_execute(dep, honest, "Driver", "Open Doors")
            assert car.done and car.aborted is None


# ---------------------------------------------------------------- 10

def test_10_revocation(criterion):
    with criterion(10, "revoked token and revoked pseudonym denied at Execute step 1, unauthorized revoker rejected"):
        dep = Deployment.create(Rng(110), modulus_bits=512).bootstrap(("Driver",))
        now = dep.clock()
        a, b = dep.user("a"), dep.user("b")
        token_a = run_delegate(dep, a, EPHEMERAL, "Driver", window=(now, now + 600))
        run_delegate(dep, b, EPHEMERAL, "Driver", window=(now, now + 600))
        with pytest.raises(RevocationError):
            revoke(dep, "PsU-mallory", token_a.digest)
        revoke(dep, dep.owner.identity, token_a.digest)
        revoke(dep, dep.owner.identity, b.identity)
        for user in (a, b):
            with pytest.raises(ProtocolAbort) as info:
                run_execute(dep, user, "Driver", "Open Doors")
            assert info.value.reason == Reason.REVOKED
            assert dep.car.aborts[-1] == ("EXECUTE:1", Reason.REVOKED)
        assert dep.car.executed == []


# ---------------------------------------------------------------- 11

def test_11_benchmark_ordinals(criterion):
    with criterion(11, "Shamir 2048 sign+verify faster than GQ; Execute-OTF faster than Execute-Persistent"):
        prim = bench.bench_primitives(iterations=bench.MIN_ITERATIONS, seed=111, ibs_bits=(2048,), backends=())
        shamir = prim.mean("Shamir (2048 bit)", "sign", "verify")
        gq = prim.mean("GQ (2048 bit)", "sign", "verify")
        print(f"  shamir={shamir:.2f} ms gq={gq:.2f} ms")
        assert all(r.iterations >= 30 for r in prim.rows)
        assert shamir < gq
        proc = bench.bench_procedures(iterations=bench.MIN_ITERATIONS, seed=111, ibs_bits=2048, schemes=(SHAMIR,))
        otf = proc.mean("Execute-OTF (Shamir)", "otf")
        execute = proc.mean("Execute (Shamir)", "persistent")
        print(f"  otf={otf:.2f} ms execute={execute:.2f} ms")
        assert all(r.iterations >= 30 for r in proc.rows)
        assert otf < execute


# ---------------------------------------------------------------- 12

def test_12_wire(criterion):
    with criterion(12, "decode(encode(m)) = m over 1000 messages, chunking at MTU 254, missing chunk fails"):
        rng = Rng(112)
        for _ in range(1000):
            msg = wiregen.random_message(rng)
            data = encode(msg)
            assert decode(data) == msg and encode(decode(data)) == data
        data = rng.bytes(600)
        parts = chunk(data, 254)
        assert len(parts) == 3 and all(len(p.to_bytes()) <= 254 for p in parts)
        assert reassemble(parts) == data
        for missing in range(3):
            with pytest.raises(WireError):
                reassemble(parts[:missing] + parts[missing + 1:])


# ---------------------------------------------------------------- 13

def test_13_simulator_determinism(criterion):
    with criterion(13, "same seed and scenario give byte-identical transcripts"):
        cases = [parse_scenario(shipped_scenarios()["happy_path"]), leak_scenario(),
                 battery_scenarios()[7], replace(battery_scenarios()[60], seed=3)]
        for sc in cases:
            first, second = sim_run(sc).transcript.encode(), sim_run(sc).transcript.encode()
            assert first == second, sc.name

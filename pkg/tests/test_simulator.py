"""Simulator: scenario parsing, determinism, adversary knowledge and the attack battery."""

from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caraccess.cli import shipped_scenarios
from caraccess.crypto import SymmetricKey
from caraccess.protocol import SessionState, UserOtf
from caraccess.protocol.state import Clock
from caraccess.rng import Rng
from caraccess.simulator import (AdversaryKnowledge, ScenarioError, adversary_closure, base_scenario,
                                 battery_scenarios, leak_scenario, parse_scenario, sim_run)
from caraccess.simulator.battery import CORE, EXTENDED
from caraccess.wire import SCHEMAS, AuthKind, Procedure, encode

from . import wiregen


@pytest.fixture(scope="module")
def happy():
    return parse_scenario(shipped_scenarios()["happy_path"])


def test_happy_path_executes_exactly_the_requests(happy):
    result = sim_run(replace(happy, modulus_bits=512))
    assert result.verdict.safe and result.verdict.passed
    assert [r for _, r in result.goal_results] == ["ok"] * len(happy.goals)
    assert [(x.procedure, x.obj, x.action) for x in result.car.executed] == [
        ("execute", "Start Engine", "e"), ("execute-otf", "Open Doors", "e")]
    assert len(result.car.sessions) == 1


def test_same_seed_same_transcript(happy):
    sc = replace(happy, modulus_bits=512)
    assert sim_run(sc).transcript == sim_run(sc).transcript


def test_different_seed_different_transcript(happy):
    sc = replace(happy, modulus_bits=512)
    assert sim_run(sc).transcript != sim_run(replace(sc, seed=sc.seed + 1)).transcript


def test_transcript_records_frames(happy):
    result = sim_run(replace(happy, modulus_bits=512))
    assert len(result.frames) > 10
    assert result.transcript.endswith("\n")


def test_scenario_text_round_trip():
    for variant in ("persistent", "ephemeral"):
        sc = replace(base_scenario(variant), name="")
        assert parse_scenario(sc.to_text()) == sc
    leak = replace(leak_scenario(), name="")
    assert parse_scenario(leak.to_text()) == leak


@pytest.mark.parametrize("text,line,fragment", [
    ("seed 1\nfrobnicate 3\n", 2, "unknown directive"),
    ("seed x\n", 1, "integer"),
    ("ibs rsa 512\n", 1, "ibs needs"),
    ("strategy mutate otf 1\n", 1, "mutate needs"),
    ("strategy replay nowhere 1\n", 1, "unknown procedure"),
    ("strategy passive\nstrategy passive\n", 2, "only one strategy"),
    ("goal execute alice Driver\n", 1, "takes 4..4"),
    ("expect maybe\n", 1, "expect must be"),
    ("actor car X\nactor owner X\n", 2, "declared twice"),
    ("channel a b sideways\n", 1, "channel needs"),
    ('goal otf alice "Open Doors\n', 1, "quotation"),
])
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert info.value.line == line
    assert fragment in info.value.message


@pytest.mark.parametrize("extra,fragment", [
    ("channel ghost PsO-olga untrusted\n", "undefined actor 'ghost'"),
    ("skew ghost 5\n", "undefined actor 'ghost'"),
    ("goal execute ghost Driver \"Open Doors\" e\n", "undefined user 'ghost'"),
])
def test_undefined_actors_are_rejected(extra, fragment):
    text = shipped_scenarios()["happy_path"] + extra
    with pytest.raises(ScenarioError, match=fragment):
        parse_scenario(text)


def test_missing_actor_kind_is_rejected():
    with pytest.raises(ScenarioError, match="exactly one car"):
        parse_scenario("actor manufacturer M\nactor seller S\nactor owner O\n")


@pytest.mark.parametrize("skew,ok", [(60, True), (300, False)])
def test_skew_directive_shifts_one_clock(happy, skew, ok):
    sc = replace(happy, modulus_bits=512, skews={"alice": float(skew)})
    result = sim_run(sc)
    outcome = dict((g.kind, r) for g, r in result.goal_results)
    assert (outcome["delegate"] == "ok") is ok
    assert result.verdict.safe


def test_revoke_goal(happy):
    text = shipped_scenarios()["happy_path"].replace(
        'goal otf alice "Open Doors" e',
        'goal otf alice "Open Doors" e\ngoal revoke mallory user:alice\ngoal revoke PsO-olga user:alice')
    text = text.replace("ibs shamir 1024", "ibs shamir 512")
    result = sim_run(parse_scenario(text))
    revokes = [r for g, r in result.goal_results if g.kind == "revoke"]
    assert revokes[0].startswith("rejected") and revokes[1] == "ok"


# ---------------------------------------------------------------- adversary knowledge

@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32), count=st.integers(1, 8))
def test_knowledge_only_grows(seed, count):
    rng = Rng(seed)
    k = AdversaryKnowledge()
    previous = k.snapshot()
    for _ in range(count):
        frame = encode(wiregen.random_message(rng))
        adversary_closure(k, frame)
        now = k.snapshot()
        assert previous <= now
        assert frame in now
        previous = now


def test_closure_opens_ciphertexts_only_once_the_key_is_known():
    rng = Rng(5)
    key = SymmetricKey(rng.bytes(32))
    session = SessionState(rng.bytes(8), key, "Driver", 0.0)
    frame = encode(UserOtf(session, "Start Engine", "e", rng, Clock()).start())
    k = adversary_closure(AdversaryKnowledge(), frame)
    action = b"exec:e:Start Engine"
    assert not k.knows(action)
    assert not k.knows(key.value)
    k.learn_key(key)
    assert k.knows(action)
    assert k.knows(session.sid)


def test_key_seen_on_the_wire_is_used_for_decryption():
    rng = Rng(6)
    key = SymmetricKey(rng.bytes(32))
    session = SessionState(rng.bytes(8), key, "Driver", 0.0)
    otf = encode(UserOtf(session, "Open Doors", "e", rng, Clock()).start())
    k = AdversaryKnowledge()
    adversary_closure(k, otf)
    assert not k.knows(b"exec:e:Open Doors")
    adversary_closure(k, key.value)
    assert k.knows(b"exec:e:Open Doors")


# ---------------------------------------------------------------- battery

def _expected_targets(proc: Procedure, step: int, variant: str) -> set:
    layout, auths = SCHEMAS[(proc, step)]
    n = len(layout) if (variant == "ephemeral" and (proc, step) == (Procedure.EXECUTE, 1)) else sum(
        1 for _, opt in layout if not opt)
    return set(range(n)) | ({"auth"} if auths != {AuthKind.NONE} else set())


def test_battery_covers_every_field_of_every_step():
    scenarios = battery_scenarios()
    assert len(scenarios) >= 100
    for variant in ("persistent", "ephemeral"):
        strategies = [s.strategy for s in scenarios if s.name.startswith(variant)]
        for proc in CORE:
            for step in sorted(s for (p, s) in SCHEMAS if p == proc):
                for kind in ("mutate", "splice"):
                    got = {s.target for s in strategies if (s.kind, s.procedure, s.step) == (kind, proc, step)}
                    assert got >= _expected_targets(proc, step, variant), (variant, kind, proc, step)
                for kind in ("replay", "drop"):
                    assert any((s.kind, s.procedure, s.step) == (kind, proc, step) for s in strategies)


def test_extended_battery_adds_upload_and_delegate():
    core = battery_scenarios()
    extended = battery_scenarios(CORE + EXTENDED)
    procs = {s.strategy.procedure for s in extended} - {s.strategy.procedure for s in core}
    assert procs == set(EXTENDED)


@pytest.mark.parametrize("index", [0, 5, 17, 40, 77, 101])
def test_battery_sample_is_safe(index):
    sc = battery_scenarios()[index]
    result = sim_run(sc)
    assert result.verdict.safe, (sc.name, result.verdict.violations)


def test_mutated_otf_action_is_never_executed():
    sc = replace(base_scenario(), strategy=parse_scenario(
        "actor manufacturer M\nactor seller S\nactor owner O\nactor car WVWZZZ1JZXW000001\n"
        "strategy mutate otf 1 1\n").strategy)
    result = sim_run(sc)
    assert result.verdict.safe
    assert result.adversary.fired


def test_leaked_session_key_is_exploited():
    result = sim_run(leak_scenario())
    assert result.verdict.attack_found and result.verdict.passed
    assert any("Start Engine" in v for v in result.verdict.violations)
    assert result.adversary.knowledge.keys


def test_leak_with_nothing_to_forge_is_reported_safe():
    sc = replace(leak_scenario(), goals=[g for g in leak_scenario().goals if g.kind not in ("execute", "otf")])
    result = sim_run(sc)
    assert result.verdict.safe and not result.verdict.passed

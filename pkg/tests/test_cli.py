"""Command-line front end, driven through ``main(argv)``."""

from __future__ import annotations

import subprocess
import sys

import pytest

from caraccess import cli
from caraccess.bench import HEADER, parse_csv
from caraccess.groupsig import GroupManagerKey, GroupMemberKey, GroupPublicKey, gs_sign, gs_trace, gs_verify
from caraccess.ibs import IbsMasterKey, IbsPublicParams, IbsUserKey, ibs_keyder, ibs_sign, ibs_verify
from caraccess.rng import Rng


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- keygen

def test_keygen_ibs_2048_round_trip(tmp_path, capsys):
    code, out, _ = run(capsys, "keygen", "ibs", "--scheme", "shamir", "--params", "2048", "--out",
                       str(tmp_path), "--seed", "3")
    assert code == 0
    msk = IbsMasterKey.from_bytes((tmp_path / "master.key").read_bytes())
    pp = IbsPublicParams.from_bytes((tmp_path / "params.key").read_bytes())
    assert pp.n.bit_length() == 2048
    sk = ibs_keyder(msk, "PsU-alice")
    sig = ibs_sign(sk, b"open", Rng(1))
    assert ibs_verify(pp, "PsU-alice", b"open", sig)
    assert not ibs_verify(pp, "PsU-bob", b"open", sig)


def test_keygen_user_from_master(tmp_path, capsys):
    assert run(capsys, "keygen", "ibs", "--scheme", "gq", "--params", "512", "--out", str(tmp_path))[0] == 0
    code, out, _ = run(capsys, "keygen", "user", "--master", str(tmp_path / "master.key"), "--identity",
                       "PsU-alice", "--out", str(tmp_path / "alice.key"))
    assert code == 0 and out.strip().endswith("alice.key")
    sk = IbsUserKey.from_bytes((tmp_path / "alice.key").read_bytes())
    pp = IbsPublicParams.from_bytes((tmp_path / "params.key").read_bytes())
    assert ibs_verify(pp, "PsU-alice", b"m", ibs_sign(sk, b"m", Rng(2)))


def test_keygen_user_with_bad_master(tmp_path, capsys):
    bad = tmp_path / "junk.key"
    bad.write_bytes(b"not a key")
    code, _, err = run(capsys, "keygen", "user", "--master", str(bad), "--identity", "x", "--out",
                       str(tmp_path / "x.key"))
    assert code == 2 and "cannot load master key" in err


def test_keygen_ibs_bad_params(tmp_path, capsys):
    code, _, err = run(capsys, "keygen", "ibs", "--params", "many", "--out", str(tmp_path))
    assert code == 2 and "bad IBS parameters" in err


@pytest.mark.parametrize("backend", ["reference", "bbs04"])
def test_keygen_group(tmp_path, capsys, backend):
    code, out, _ = run(capsys, "keygen", "group", "--members", "10", "--backend", backend, "--out",
                       str(tmp_path), "--seed", "4")
    assert code == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["gmsk.key", "gpk.key"] + [f"member-{i:02d}.key" for i in range(1, 11)]
    gpk = GroupPublicKey.from_bytes((tmp_path / "gpk.key").read_bytes())
    gmsk = GroupManagerKey.from_bytes((tmp_path / "gmsk.key").read_bytes())
    member = GroupMemberKey.from_bytes((tmp_path / "member-07.key").read_bytes())
    sig = gs_sign(gpk, member, b"hello", Rng(5))
    assert gs_verify(gpk, b"hello", sig)
    assert gs_trace(gpk, gmsk, b"hello", sig) == 7


def test_keygen_group_needs_members(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["keygen", "group", "--members", "0", "--out", str(tmp_path)])
    assert info.value.code == 2
    assert "must be at least 1" in capsys.readouterr().err


# ---------------------------------------------------------------- policy

def test_policy_show_renders_matrix(capsys):
    code, out, _ = run(capsys, "policy", "show")
    assert code == 0
    assert "Start Engine" in out and "ChildOccupant" in out


def test_policy_check_validates_default(capsys):
    code, out, _ = run(capsys, "policy", "check")
    assert code == 0
    assert out.strip() == "ok: 6 roles, 17 objects, 102 entries, root Owner"


@pytest.mark.parametrize("role,obj,code", [("Driver", "Start Engine", 0), ("ChildOccupant", "Start Engine", 1)])
def test_policy_check_query(capsys, role, obj, code):
    got, out, _ = run(capsys, "policy", "check", "--role", role, "--object", obj, "--action", "e")
    assert got == code
    assert obj in out


def test_policy_check_partial_query(capsys):
    code, _, err = run(capsys, "policy", "check", "--role", "Driver")
    assert code == 2 and "together" in err


def test_policy_check_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.policy"
    bad.write_text("role Owner root\nrole Driver\nobject Engine: Start Engine\nDriver; Start Engine; -x-\n")
    code, _, err = run(capsys, "policy", "check", str(bad))
    assert code == 2
    assert f"{bad}:4:" in err


def test_policy_check_bad_attrs(capsys):
    code, _, err = run(capsys, "policy", "check", "--role", "Driver", "--object", "Start Engine", "--action", "e",
                       "--attrs", "{nope")
    assert code == 2 and "JSON" in err


def test_policy_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "policy", "show", str(tmp_path / "absent.policy"))
    assert code == 2 and "absent.policy" in err


# ---------------------------------------------------------------- scenario

def test_scenario_list(capsys):
    code, out, _ = run(capsys, "scenario", "list")
    assert code == 0 and out.split() == ["happy_path", "leak_session_key"]


def test_shipped_happy_path(capsys):
    code, out, _ = run(capsys, "scenario", "run", "happy_path", "--quiet")
    assert code == 0
    assert out.strip() == "PASS: expected safe, got safe"


def test_shipped_leak_finds_attack(tmp_path, capsys):
    transcript = tmp_path / "leak.txt"
    code, out, _ = run(capsys, "scenario", "run", "leak_session_key", "--out", str(transcript))
    assert code == 0
    assert out.startswith("PASS: expected attack, got attack-found")
    assert "forged" in transcript.read_text()


def test_scenario_verdict_mismatch_exits_1(tmp_path, capsys):
    text = cli.shipped_scenarios()["happy_path"].replace("expect safe", "expect attack")
    path = tmp_path / "wrong.scn"
    path.write_text(text)
    code, out, _ = run(capsys, "scenario", "run", str(path), "--quiet")
    assert code == 1 and out.startswith("FAIL: expected attack, got safe")


def test_scenario_seed_override_changes_transcript(capsys):
    _, a, _ = run(capsys, "scenario", "run", "happy_path", "--seed", "1")
    _, b, _ = run(capsys, "scenario", "run", "happy_path", "--seed", "2")
    _, c, _ = run(capsys, "scenario", "run", "happy_path", "--seed", "1")
    assert a == c and a != b


def test_scenario_parse_error_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.scn"
    path.write_text("seed 1\nseed 2\nteleport now\n")
    code, _, err = run(capsys, "scenario", "run", str(path))
    assert code == 2 and f"{path}:3: unknown directive 'teleport'" in err


def test_scenario_undefined_actor_exits_2(tmp_path, capsys):
    path = tmp_path / "ghost.scn"
    path.write_text(cli.shipped_scenarios()["happy_path"] + "goal otf ghost \"Open Doors\" e\n")
    code, _, err = run(capsys, "scenario", "run", str(path))
    assert code == 2 and "undefined user 'ghost'" in err


def test_scenario_unknown_name(capsys):
    code, _, err = run(capsys, "scenario", "run", "no_such_scenario")
    assert code == 2 and "no_such_scenario" in err


def test_scenario_battery(capsys):
    code, out, _ = run(capsys, "scenario", "battery", "--quiet")
    assert code == 0
    assert out.strip().splitlines()[-1] == "118/118 scenarios safe"


# ---------------------------------------------------------------- bench

def test_bench_rejects_few_iterations(capsys):
    code, _, err = run(capsys, "bench", "procedures", "--iterations", "10")
    assert code == 2 and "at least 30" in err


def test_bench_procedures_csv(tmp_path, capsys):
    out_file = tmp_path / "proc.csv"
    code, out, _ = run(capsys, "bench", "procedures", "--scheme", "shamir", "--params", "512", "--device",
                       "test-rig", "--out", str(out_file))
    assert code == 0 and out.strip() == str(out_file)
    text = out_file.read_text()
    assert text.splitlines()[0].startswith("# suite=procedures")
    assert text.splitlines()[1] == ",".join(HEADER)
    rows = parse_csv(text)
    assert {(r["subject"], r["operation"]) for r in rows} == {
        ("Delegate (Shamir)", "persistent"), ("Delegate (Shamir)", "ephemeral"),
        ("Execute (Shamir)", "persistent"), ("Execute (Shamir)", "ephemeral"), ("Execute-OTF (Shamir)", "otf")}
    assert all(r["device"] == "test-rig" and int(r["iterations"]) == 30 for r in rows)


def test_bench_bad_params(capsys):
    code, _, err = run(capsys, "bench", "primitives", "--params", "huge")
    assert code == 2 and "bits" in err


def test_bench_primitives_to_stdout(capsys):
    code, out, _ = run(capsys, "bench", "primitives", "--params", "512", "--seed", "1")
    assert code == 0
    rows = parse_csv(out)
    families = {r["subject"].split(" (")[0] for r in rows}
    assert families == {"GS", "Shamir", "GQ", "ECDH", "KEM"}
    assert {r["subject"] for r in rows if r["subject"].startswith("ECDH")} == {"ECDH (p256)", "ECDH (p192)"}


def test_scenario_battery_extended(capsys):
    code, out, _ = run(capsys, "scenario", "battery", "--extended", "--quiet")
    assert code == 0
    done, total = out.strip().splitlines()[-1].split()[0].split("/")
    assert done == total and int(total) > 118


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "caraccess", "policy", "check"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("ok: 6 roles")

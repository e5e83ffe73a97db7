"""Benchmark harness: timing statistics and the CSV report."""

from __future__ import annotations

import statistics

import pytest

from caraccess import bench
from caraccess.ibs import SHAMIR


def test_measure_drops_warmup_only():
    calls = []
    mean, std = bench.measure(lambda: calls.append(1), iterations=30, warmup=5)
    assert len(calls) == 35
    assert mean >= 0 and std >= 0


def test_measure_needs_two_samples():
    with pytest.raises(ValueError):
        bench.measure(lambda: None, iterations=1)


def test_measure_statistics_match_stdlib(monkeypatch):
    ticks = iter(range(0, 10**9, 1_000_000))
    # each call to fn spans one tick of 1 ms, but widen every third sample
    times = []
    for i in range(40):
        start = next(ticks)
        times += [start, start + (3_000_000 if i % 3 == 0 else 1_000_000)]
    it = iter(times)
    monkeypatch.setattr(bench.time, "perf_counter_ns", lambda: next(it))
    mean, std = bench.measure(lambda: None, iterations=35, warmup=5)
    kept = [3.0 if i % 3 == 0 else 1.0 for i in range(5, 40)]
    assert mean == pytest.approx(statistics.fmean(kept))
    assert std == pytest.approx(statistics.stdev(kept))


def test_report_csv_round_trip():
    report = bench.BenchReport("primitives", "rig", seed=3)
    report.rows.append(bench.BenchRow("rig", "GS (reference)", "sign", 1.23456, 0.1, 30))
    report.rows.append(bench.BenchRow("rig", "GS (reference)", "verify", 2.0, 0.2, 30))
    text = report.to_csv()
    assert text.splitlines()[0] == "# suite=primitives seed=3 warmup=5 dropped; no other trimming"
    rows = bench.parse_csv(text)
    assert [r["operation"] for r in rows] == ["sign", "verify"]
    assert rows[0]["mean_ms"] == "1.2346"
    assert report.mean("GS (reference)", "sign", "verify") == pytest.approx(3.23456)


def test_parse_csv_rejects_other_header():
    with pytest.raises(ValueError):
        bench.parse_csv("a,b\n1,2\n")


def test_unknown_suite():
    with pytest.raises(ValueError):
        bench.run_suite("everything")


def _cells(report):
    return [(r.device, r.subject, r.operation, r.iterations) for r in report.rows]


def test_primitive_rows_are_stable_across_runs():
    kwargs = dict(iterations=30, seed=1, device="rig", ibs_bits=(512,), rsa_bits=1024)
    a, b = bench.bench_primitives(**kwargs), bench.bench_primitives(**kwargs)
    assert _cells(a) == _cells(b)
    subjects = {r.subject for r in a.rows}
    assert subjects == {"GS (reference)", "GS (bbs04)", "Shamir (512 bit)", "GQ (512 bit)", "ECDH (p256)",
                        "ECDH (p192)", "KEM (rsa-1024)", "KEM (dh-p256)"}
    assert all(r.iterations >= bench.MIN_ITERATIONS and r.mean_ms > 0 for r in a.rows)


def test_procedure_rows():
    report = bench.bench_procedures(iterations=30, seed=2, device="rig", ibs_bits=512, schemes=(SHAMIR,))
    assert {r.operation for r in report.rows} == {"persistent", "ephemeral", "otf"}
    assert report.mean("Execute-OTF (Shamir)", "otf") < report.mean("Execute (Shamir)", "persistent")

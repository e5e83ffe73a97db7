"""Benchmark harness: primitive microbenchmarks and whole-procedure timings.

Every cell runs ``warmup + iterations`` times; the first ``warmup`` samples are
dropped and nothing else is trimmed.  Reports serialise to CSV with the fixed
header ``HEADER``, preceded by one ``#`` comment line describing the run.
"""

from __future__ import annotations

import csv
import io
import platform
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable

from . import crypto
from .groupsig import BACKENDS, gs_gen, gs_sign, gs_verify
from .ibs import GQ, SHAMIR, IbsParams, ibs_keyder, ibs_setup, ibs_sign, ibs_verify
from .protocol.engines import EPHEMERAL, PERSISTENT
from .protocol.runner import Deployment, run_delegate, run_execute, run_execute_otf
from .rng import Rng

HEADER = ("device", "subject", "operation", "mean_ms", "std_ms", "iterations")
SUITES = ("primitives", "procedures")
MIN_ITERATIONS = 30
WARMUP = 5
MESSAGE = b"Start Engine" * 8


def default_device() -> str:
    return f"{platform.node() or 'host'}/{platform.machine() or 'cpu'}"


@dataclass(frozen=True)
class BenchRow:
    device: str
    subject: str
    operation: str
    mean_ms: float
    std_ms: float
    iterations: int

    def as_tuple(self) -> tuple:
        return (self.device, self.subject, self.operation, f"{self.mean_ms:.4f}", f"{self.std_ms:.4f}",
                self.iterations)


@dataclass
class BenchReport:
    suite: str
    device: str
    warmup: int = WARMUP
    seed: int = 0
    rows: list[BenchRow] = field(default_factory=list)

    def row(self, subject: str, operation: str) -> BenchRow:
        return next(r for r in self.rows if r.subject == subject and r.operation == operation)

    def mean(self, subject: str, *operations: str) -> float:
        return sum(self.row(subject, op).mean_ms for op in operations)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# suite={self.suite} seed={self.seed} warmup={self.warmup} dropped; no other trimming\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for r in self.rows:
            w.writerow(r.as_tuple())
        return buf.getvalue()


def parse_csv(text: str) -> list[dict[str, str]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return list(reader)


def measure(fn: Callable[[], object], iterations: int = MIN_ITERATIONS, warmup: int = WARMUP) -> tuple[float, float]:
    """Mean and sample standard deviation in milliseconds over the kept samples."""
    if iterations < 2:
        raise ValueError("need at least two iterations")
    samples = []
    for i in range(warmup + iterations):
        t0 = time.perf_counter_ns()
        fn()
        dt = (time.perf_counter_ns() - t0) / 1e6
        if i >= warmup:
            samples.append(dt)
    return statistics.fmean(samples), statistics.stdev(samples)


class _Cells:
    def __init__(self, report: BenchReport, iterations: int):
        self.report, self.iterations = report, iterations

    def add(self, subject: str, operation: str, fn: Callable[[], object]) -> None:
        mean, std = measure(fn, self.iterations, self.report.warmup)
        self.report.rows.append(BenchRow(self.report.device, subject, operation, mean, std, self.iterations))


# ---------------------------------------------------------------- primitives

def bench_primitives(iterations: int = MIN_ITERATIONS, seed: int = 0, device: str | None = None,
                     ibs_bits: tuple[int, ...] = (1024, 2048), rsa_bits: int = 2048,
                     backends: tuple[str, ...] = BACKENDS, warmup: int = WARMUP) -> BenchReport:
    report = BenchReport("primitives", device or default_device(), warmup, seed)
    cells = _Cells(report, iterations)
    rng = Rng(seed)

    for backend in backends:
        gpk, _, members = gs_gen(1, rng, backend)
        sig = gs_sign(gpk, members[0], MESSAGE, rng)
        subject = f"GS ({backend})"
        cells.add(subject, "sign", lambda: gs_sign(gpk, members[0], MESSAGE, rng))
        cells.add(subject, "verify", lambda: gs_verify(gpk, MESSAGE, sig))

    for scheme in (SHAMIR, GQ):
        for bits in ibs_bits:
            msk, pp = ibs_setup(IbsParams(scheme, bits), rng)
            sk = ibs_keyder(msk, b"PsU-bench")
            sig = ibs_sign(sk, MESSAGE, rng)
            subject = f"{'Shamir' if scheme == SHAMIR else 'GQ'} ({bits} bit)"
            cells.add(subject, "sign", lambda: ibs_sign(sk, MESSAGE, rng))
            cells.add(subject, "verify", lambda: ibs_verify(pp, b"PsU-bench", MESSAGE, sig))

    for curve in crypto.CURVES:
        peer = crypto.dh_keygen(rng, curve)
        mine = crypto.dh_keygen(rng, curve)
        subject = f"ECDH ({curve})"
        cells.add(subject, "GenKP", lambda: crypto.dh_keygen(rng, curve))
        cells.add(subject, "GenSK", lambda: crypto.dh_combine(mine.scalar, peer.point, curve))

    for kind, label in (("rsa", f"KEM (rsa-{rsa_bits})"), ("dh", f"KEM (dh-{crypto.DEFAULT_CURVE})")):
        kp = crypto.kem_keygen(kind, rng, rsa_bits=rsa_bits)
        _, ct = crypto.kem_encapsulate(kp.public_part, rng)
        cells.add(label, "encapsulate", lambda: crypto.kem_encapsulate(kp.public_part, rng))
        cells.add(label, "decapsulate", lambda: crypto.kem_decapsulate(kp, ct))
    return report


# ---------------------------------------------------------------- procedures

def _deployment(scheme: str, bits: int, seed: int, group_size: int) -> Deployment:
    return Deployment.create(Rng(seed), scheme=scheme, modulus_bits=bits).bootstrap(("Driver",), group_size)


def bench_procedures(iterations: int = MIN_ITERATIONS, seed: int = 0, device: str | None = None,
                     ibs_bits: int = 2048, schemes: tuple[str, ...] = (SHAMIR, GQ),
                     warmup: int = WARMUP) -> BenchReport:
    """Loopback timings of Delegate, Execute and Execute-OTF, both sides included."""
    report = BenchReport("procedures", device or default_device(), warmup, seed)
    cells = _Cells(report, iterations)
    window = None

    for scheme in schemes:
        # each persistent delegation consumes one member key
        dep = _deployment(scheme, ibs_bits, seed, group_size=2 * (warmup + iterations) + 2)
        label = "Shamir" if scheme == SHAMIR else "GQ"
        now = dep.clock()
        window = (now, now + 86400.0)
        persistent = dep.user("persistent")
        ephemeral = dep.user("ephemeral")
        run_delegate(dep, persistent, PERSISTENT, "Driver")
        run_delegate(dep, ephemeral, EPHEMERAL, "Driver", window=window)
        spare = dep.user("spare")

        cells.add(f"Delegate ({label})", PERSISTENT, lambda: run_delegate(dep, spare, PERSISTENT, "Driver"))
        cells.add(f"Delegate ({label})", EPHEMERAL,
                  lambda: run_delegate(dep, spare, EPHEMERAL, "Driver", window=window))
        cells.add(f"Execute ({label})", PERSISTENT,
                  lambda: _checked(run_execute(dep, persistent, "Driver", "Start Engine")))
        cells.add(f"Execute ({label})", EPHEMERAL,
                  lambda: _checked(run_execute(dep, ephemeral, "Driver", "Start Engine")))
        cells.add(f"Execute-OTF ({label})", "otf",
                  lambda: _checked(run_execute_otf(dep, persistent, "Open Doors")))
    return report


def _checked(engines) -> None:
    user, car = engines
    if not (user.done and car.done) or user.aborted or car.aborted:
        raise RuntimeError("benchmarked procedure did not complete")


def run_suite(suite: str, iterations: int = MIN_ITERATIONS, seed: int = 0, device: str | None = None,
              **kwargs) -> BenchReport:
    if suite == "primitives":
        return bench_primitives(iterations, seed, device, **kwargs)
    if suite == "procedures":
        return bench_procedures(iterations, seed, device, **kwargs)
    raise ValueError(f"unknown suite {suite!r} (expected one of {', '.join(SUITES)})")

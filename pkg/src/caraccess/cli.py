"""Command-line front end.

    caraccess keygen ibs   --scheme shamir --params 2048 --out keys/
    caraccess keygen user  --master keys/master.key --identity PsU-alice --out alice.key
    caraccess keygen group --members 10 --out group/
    caraccess policy show  [policy-file]
    caraccess policy check policy-file [--role R --object O --action e]
    caraccess scenario run happy_path | path/to/file.scn
    caraccess scenario battery [--extended]
    caraccess bench primitives|procedures --out report.csv

``scenario run`` exits 0 when the verdict matches the scenario's ``expect``
line, 1 when it does not and 2 on parse or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import bench as bench_mod
from .groupsig import BACKENDS, DEFAULT_BACKEND, gs_gen
from .ibs import SCHEMES, SHAMIR, IbsError, IbsMasterKey, IbsParams, ibs_keyder, ibs_setup
from .policy import ACTIONS, PolicyError, load_default_policy, policy_check, policy_load
from .rng import Rng
from .simulator import ScenarioError, battery_scenarios, parse_scenario, sim_run
from .simulator.battery import CORE, EXTENDED
from .wire import WireError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _rng(args) -> Rng:
    return Rng(args.seed) if args.seed is not None else Rng()


def _write(path: Path, data: bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def _fail(message: str, code: int = EXIT_USAGE) -> int:
    print(f"caraccess: error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- keygen

def cmd_keygen_ibs(args) -> int:
    try:
        bits = int(args.params or 2048)
        msk, pp = ibs_setup(IbsParams(args.scheme, bits), _rng(args))
    except (ValueError, IbsError) as exc:
        return _fail(f"bad IBS parameters: {exc}")
    out = Path(args.out)
    for path in (_write(out / "master.key", msk.to_bytes()), _write(out / "params.key", pp.to_bytes())):
        print(path)
    return EXIT_OK


def cmd_keygen_user(args) -> int:
    try:
        msk = IbsMasterKey.from_bytes(Path(args.master).read_bytes())
    except (OSError, WireError) as exc:
        return _fail(f"cannot load master key {args.master}: {exc}")
    print(_write(Path(args.out), ibs_keyder(msk, args.identity).to_bytes()))
    return EXIT_OK


def cmd_keygen_group(args) -> int:
    gpk, gmsk, members = gs_gen(args.members, _rng(args), args.backend)
    out = Path(args.out)
    width = len(str(args.members))
    paths = [_write(out / "gpk.key", gpk.to_bytes()), _write(out / "gmsk.key", gmsk.to_bytes())]
    paths += [_write(out / f"member-{m.index:0{width}d}.key", m.to_bytes()) for m in members]
    for p in paths:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------- policy

def _load_policy(path: str | None):
    if path is None:
        return load_default_policy()
    return policy_load(Path(path).read_text(encoding="utf-8"))


def cmd_policy_show(args) -> int:
    try:
        table = _load_policy(args.file)
    except PolicyError as exc:
        return _fail(f"{args.file or 'default policy'}:{exc.line}:{exc.column}: {exc.message}")
    except OSError as exc:
        return _fail(str(exc))
    print(table.render())
    return EXIT_OK


def cmd_policy_check(args) -> int:
    try:
        table = _load_policy(args.file)
    except PolicyError as exc:
        return _fail(f"{args.file or 'default policy'}:{exc.line}:{exc.column}: {exc.message}")
    except OSError as exc:
        return _fail(str(exc))
    query = (args.role, args.object, args.action)
    if not any(query):
        root = table.root.name if table.root else "none"
        print(f"ok: {len(table.roles)} roles, {len(table.objects)} objects, {len(table.entries)} entries, root {root}")
        return EXIT_OK
    if not all(query):
        return _fail("a query needs --role, --object and --action together")
    try:
        attrs = json.loads(args.attrs) if args.attrs else None
    except json.JSONDecodeError as exc:
        return _fail(f"--attrs is not JSON: {exc}")
    decision = policy_check(table, args.role, args.object, args.action, attrs, args.now)
    rights = table.rights(args.role, args.object).render()
    print(f"{args.role} {args.object!r} {args.action}: {decision} [{rights}]")
    return EXIT_OK if decision else EXIT_FAIL


# ---------------------------------------------------------------- scenario

def shipped_scenarios() -> dict[str, str]:
    folder = resources.files("caraccess").joinpath("data/scenarios")
    return {p.name.removesuffix(".scn"): p.read_text(encoding="utf-8")
            for p in folder.iterdir() if p.name.endswith(".scn")}


def _scenario_text(name: str) -> tuple[str, str]:
    path = Path(name)
    if path.exists():
        return str(path), path.read_text(encoding="utf-8")
    shipped = shipped_scenarios()
    if name in shipped:
        return f"{name}.scn", shipped[name]
    raise FileNotFoundError(f"no scenario file or shipped scenario named {name!r}")


def cmd_scenario_list(args) -> int:
    for name in sorted(shipped_scenarios()):
        print(name)
    return EXIT_OK


def cmd_scenario_run(args) -> int:
    try:
        label, text = _scenario_text(args.file)
    except (OSError, UnicodeDecodeError) as exc:
        return _fail(str(exc))
    try:
        scenario = parse_scenario(text)
        if args.seed is not None:
            scenario.seed = args.seed
        result = sim_run(scenario)
    except ScenarioError as exc:
        where = f"{label}:{exc.line}" if exc.line else label
        return _fail(f"{where}: {exc.message}")
    if args.out:
        _write(Path(args.out), result.transcript.encode())
    elif not args.quiet:
        sys.stdout.write(result.transcript)
    v = result.verdict
    status = "PASS" if v.passed else "FAIL"
    print(f"{status}: expected {v.expect}, got {v.describe()}")
    return EXIT_OK if v.passed else EXIT_FAIL


def cmd_scenario_battery(args) -> int:
    procedures = CORE + EXTENDED if args.extended else CORE
    failures = 0
    scenarios = battery_scenarios(procedures, seed=args.seed if args.seed is not None else 7)
    for sc in scenarios:
        r = sim_run(sc)
        failures += not r.verdict.passed
        if not args.quiet or not r.verdict.passed:
            print(f"{'PASS' if r.verdict.passed else 'FAIL'}  {sc.name}")
    print(f"{len(scenarios) - failures}/{len(scenarios)} scenarios safe")
    return EXIT_OK if failures == 0 else EXIT_FAIL


# ---------------------------------------------------------------- bench

def _pin_one_cpu() -> set[int] | None:
    """Pin to one CPU for steadier timings; returns the previous mask."""
    if not hasattr(os, "sched_getaffinity"):
        return None
    cpus = os.sched_getaffinity(0)
    os.sched_setaffinity(0, {min(cpus)})
    return cpus


def cmd_bench(args) -> int:
    if args.iterations < bench_mod.MIN_ITERATIONS:
        return _fail(f"--iterations must be at least {bench_mod.MIN_ITERATIONS}")
    kwargs = {}
    if args.params:
        try:
            bits = int(args.params)
        except ValueError:
            return _fail("--params must be an IBS modulus size in bits")
        kwargs["ibs_bits"] = (bits,) if args.suite == "primitives" else bits
    if args.scheme and args.suite == "procedures":
        kwargs["schemes"] = (args.scheme,)
    seed = args.seed if args.seed is not None else 0
    previous = _pin_one_cpu()
    try:
        report = bench_mod.run_suite(args.suite, args.iterations, seed, args.device, **kwargs)
    finally:
        if previous:
            os.sched_setaffinity(0, previous)
    text = report.to_csv()
    if args.out:
        _write(Path(args.out), text.encode())
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="deterministic RNG seed")

    parser = argparse.ArgumentParser(prog="caraccess", description="Car access control toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    keygen = sub.add_parser("keygen", help="key ceremonies").add_subparsers(dest="what", required=True)
    p = keygen.add_parser("ibs", parents=[common], help="IBS master key and public parameters")
    p.add_argument("--scheme", choices=SCHEMES, default=SHAMIR)
    p.add_argument("--params", default="2048", help="modulus size in bits")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_keygen_ibs)
    p = keygen.add_parser("user", parents=[common], help="derive an identity key from a master key")
    p.add_argument("--master", required=True)
    p.add_argument("--identity", required=True)
    p.add_argument("--out", required=True, help="output file")
    p.set_defaults(func=cmd_keygen_user)
    p = keygen.add_parser("group", parents=[common], help="group public, manager and member keys")
    p.add_argument("--members", type=_positive, required=True)
    p.add_argument("--backend", choices=BACKENDS, default=DEFAULT_BACKEND)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_keygen_group)

    policy = sub.add_parser("policy", help="policy inspection").add_subparsers(dest="what", required=True)
    p = policy.add_parser("show", help="render the role x object rights matrix")
    p.add_argument("file", nargs="?", default=None, help="policy file (default: shipped fixture)")
    p.set_defaults(func=cmd_policy_show)
    p = policy.add_parser("check", help="validate a policy file or decide one request")
    p.add_argument("file", nargs="?", default=None, help="policy file (default: shipped fixture)")
    p.add_argument("--role")
    p.add_argument("--object")
    p.add_argument("--action", choices=ACTIONS)
    p.add_argument("--attrs", help="attributes as a JSON object")
    p.add_argument("--now", type=float, default=0.0, help="time for time-window constraints")
    p.set_defaults(func=cmd_policy_check)

    scenario = sub.add_parser("scenario", help="simulator runs").add_subparsers(dest="what", required=True)
    p = scenario.add_parser("run", parents=[common], help="run a scenario file or a shipped scenario by name")
    p.add_argument("file")
    p.add_argument("--out", help="write the transcript here instead of stdout")
    p.add_argument("--quiet", action="store_true", help="print only the verdict")
    p.set_defaults(func=cmd_scenario_run)
    p = scenario.add_parser("list", help="list shipped scenarios")
    p.set_defaults(func=cmd_scenario_list)
    p = scenario.add_parser("battery", parents=[common], help="run the replay/drop/mutate/splice battery")
    p.add_argument("--extended", action="store_true", help="also cover Upload and Delegate")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_scenario_battery)

    p = sub.add_parser("bench", parents=[common], help="benchmark suites as CSV")
    p.add_argument("suite", choices=bench_mod.SUITES)
    p.add_argument("--iterations", type=int, default=bench_mod.MIN_ITERATIONS)
    p.add_argument("--scheme", choices=SCHEMES, default=None, help="procedures suite: one IBS scheme only")
    p.add_argument("--params", default=None, help="IBS modulus size in bits")
    p.add_argument("--device", default=None, help="device label for the report")
    p.add_argument("--out", help="CSV output file (default: stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

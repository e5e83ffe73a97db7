"""Built-in adversary battery: every step replayed and dropped, every field mutated and spliced."""

from __future__ import annotations

from dataclasses import replace

from ..rng import Rng
from ..wire import SCHEMAS, AuthKind, Procedure, Tag, WireMessage, encode
from .run import SimResult, sim_run
from .scenario import ChannelSpec, Goal, Scenario, Strategy

CAR = "WVWZZZ1JZXW000001"
CORE = (Procedure.EXECUTE, Procedure.EXECUTE_OTF)
EXTENDED = (Procedure.UPLOAD_GPK, Procedure.DELEGATE)


def base_scenario(variant: str = "persistent", seed: int = 7, modulus_bits: int = 512,
                  backend: str = "reference") -> Scenario:
    """Honest user opens the car twice, each time followed by an on-the-fly open."""
    user = "alice" if variant == "persistent" else "bob"
    actors = {"Man-Acme": "manufacturer", "Sel-Dealer": "seller", "PsO-olga": "owner", CAR: "car",
              user: "user", "carol": "user"}
    channels = [ChannelSpec("Man-Acme", CAR, True, None), ChannelSpec("Sel-Dealer", "Man-Acme", True, None),
                ChannelSpec("PsO-olga", "Sel-Dealer", True, None), ChannelSpec("Sel-Dealer", CAR, True, None),
                ChannelSpec("PsO-olga", CAR), ChannelSpec(user, "PsO-olga"), ChannelSpec(user, CAR),
                ChannelSpec("carol", "PsO-olga")]
    goals = [Goal("setup"), Goal("set_root"), Goal("upload", ("Owner",)), Goal("upload", ("Driver",)),
             Goal("delegate", ("carol", "persistent", "Driver")),
             Goal("delegate", (user, variant, "Driver"))]
    for _ in range(2):
        goals += [Goal("execute", (user, "Driver", "Open Doors", "e")), Goal("otf", (user, "Open Doors", "e"))]
    return Scenario(seed=seed, modulus_bits=modulus_bits, backend=backend, actors=actors, channels=channels,
                    goals=goals, name=f"base-{variant}")


def _targets(proc: Procedure, step: int, variant: str) -> list:
    layout, auths = SCHEMAS[(proc, step)]
    n = sum(1 for _, optional in layout if not optional)
    if proc == Procedure.EXECUTE and step == 1 and variant == "ephemeral":
        n = len(layout)
    return list(range(n)) + (["auth"] if auths != {AuthKind.NONE} else [])


def _bogus_otf(seed: int, user: str) -> Strategy:
    rng = Rng(seed)
    msg = WireMessage(Procedure.EXECUTE_OTF, 1, ((Tag.SID, rng.bytes(8)), (Tag.ENC_ACTION, rng.bytes(60))))
    return Strategy("inject", frame=encode(msg.with_auth(AuthKind.MAC, rng.bytes(32))), src=user, dst=CAR)


def strategies(procedures=CORE, variant: str = "persistent", seed: int = 7) -> list[Strategy]:
    out = []
    for proc in procedures:
        steps = sorted(s for (p, s) in SCHEMAS if p == proc)
        for step in steps:
            out += [Strategy("replay", proc, step), Strategy("drop", proc, step)]
            for target in _targets(proc, step, variant):
                out += [Strategy("mutate", proc, step, target), Strategy("splice", proc, step, target)]
    out.append(_bogus_otf(seed, "alice" if variant == "persistent" else "bob"))
    return out


def battery_scenarios(procedures=CORE, variants=("persistent", "ephemeral"), seed: int = 7,
                      modulus_bits: int = 512, backend: str = "reference") -> list[Scenario]:
    out = []
    for variant in variants:
        base = base_scenario(variant, seed, modulus_bits, backend)
        for s in strategies(procedures, variant, seed):
            out.append(replace(base, strategy=s, name=f"{variant}: {s.describe()}"))
    return out


def run_battery(scenarios: list[Scenario] | None = None) -> list[tuple[Scenario, SimResult]]:
    return [(sc, sim_run(sc)) for sc in (scenarios if scenarios is not None else battery_scenarios())]


def leak_scenario(seed: int = 7, obj: str = "Start Engine", modulus_bits: int = 512) -> Scenario:
    base = base_scenario("persistent", seed, modulus_bits)
    return replace(base, strategy=Strategy("leak", target=obj, action="e"), expect="attack", name="leak")

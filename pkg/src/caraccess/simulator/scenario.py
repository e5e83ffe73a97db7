"""Scenario description and its line-oriented file format.

Example::

    seed 7
    ibs shamir 512
    actor manufacturer Man-Acme
    actor seller Sel-Dealer
    actor owner PsO-olga
    actor car WVWZZZ1JZXW000001
    actor user alice
    channel Man-Acme WVWZZZ1JZXW000001 trusted
    channel alice WVWZZZ1JZXW000001 untrusted mtu=254 latency=1
    strategy mutate otf 1 0
    goal execute alice Driver "Open Doors" e
    expect safe

Directives: ``seed``, ``ibs <scheme> <bits>``, ``backend``, ``kem``, ``tick``
(seconds per tick), ``actor <kind> <name>``, ``channel <a> <b> trusted|untrusted
[mtu=N|mtu=none] [latency=N]``, ``skew <actor> <seconds>``, ``strategy ...``,
``goal ...`` and ``expect safe|attack``.  Goals::

    setup | set_root | upload <role>
    delegate <user> persistent|ephemeral <role> [duration=<s>] [attrs=<json>]
    execute <user> <role> <object> <action>
    otf <user> <object> <action>
    advance <seconds>
    revoke <authority> user:<name>|token:<name>
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field

from ..ibs import SCHEMES
from ..groupsig import BACKENDS
from ..wire import DEFAULT_MTU, Procedure

ACTOR_KINDS = ("manufacturer", "seller", "owner", "car", "user")
PROCEDURE_NAMES = {
    "setup": Procedure.SETUP, "set_root": Procedure.SET_ROOT, "upload": Procedure.UPLOAD_GPK,
    "delegate": Procedure.DELEGATE, "execute": Procedure.EXECUTE, "otf": Procedure.EXECUTE_OTF,
}
STRATEGIES = ("passive", "replay", "mutate", "inject", "drop", "splice", "leak")
GOALS = ("setup", "set_root", "upload", "delegate", "execute", "otf", "advance", "revoke")


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int = 0):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class ChannelSpec:
    a: str
    b: str
    trusted: bool = False
    mtu: int | None = DEFAULT_MTU
    latency: int = 1


@dataclass(frozen=True)
class Strategy:
    kind: str = "passive"
    procedure: Procedure | None = None
    step: int | None = None
    target: str | int | None = None        # field index, "auth", or leak action object
    action: str = "e"
    frame: bytes = b""                      # inject
    src: str = ""
    dst: str = ""

    def describe(self) -> str:
        parts = [self.kind]
        if self.procedure is not None:
            parts.append(next(k for k, v in PROCEDURE_NAMES.items() if v == self.procedure))
        if self.step is not None:
            parts.append(str(self.step))
        if self.target is not None:
            parts.append(str(self.target))
        return " ".join(parts)


@dataclass(frozen=True)
class Goal:
    kind: str
    args: tuple[str, ...] = ()

    def describe(self) -> str:
        return " ".join([self.kind, *(shlex.quote(a) for a in self.args)])


@dataclass
class Scenario:
    seed: int = 0
    scheme: str = "shamir"
    modulus_bits: int = 512
    backend: str = "reference"
    kem: str = "dh"
    tick_seconds: float = 1.0
    actors: dict[str, str] = field(default_factory=dict)      # name -> kind
    channels: list[ChannelSpec] = field(default_factory=list)
    skews: dict[str, float] = field(default_factory=dict)
    strategy: Strategy = field(default_factory=Strategy)
    goals: list[Goal] = field(default_factory=list)
    expect: str = "safe"
    name: str = ""

    def actor(self, kind: str) -> str:
        names = [n for n, k in self.actors.items() if k == kind]
        if len(names) != 1:
            raise ScenarioError(f"scenario needs exactly one {kind} actor, found {len(names)}")
        return names[0]

    def users(self) -> list[str]:
        return [n for n, k in self.actors.items() if k == "user"]

    def validate(self) -> "Scenario":
        for kind in ("manufacturer", "seller", "owner", "car"):
            self.actor(kind)
        for ch in self.channels:
            for end in (ch.a, ch.b):
                if end not in self.actors:
                    raise ScenarioError(f"channel references undefined actor {end!r}")
        for name in self.skews:
            if name not in self.actors:
                raise ScenarioError(f"skew references undefined actor {name!r}")
        for g in self.goals:
            for who in _goal_actors(g):
                if self.actors.get(who) != "user":
                    raise ScenarioError(f"goal {g.describe()!r} references undefined user {who!r}")
        s = self.strategy
        for who in (s.src, s.dst):
            if who and who not in self.actors:
                raise ScenarioError(f"strategy references undefined actor {who!r}")
        return self

    def to_text(self) -> str:
        lines = [f"seed {self.seed}", f"ibs {self.scheme} {self.modulus_bits}", f"backend {self.backend}",
                 f"kem {self.kem}", f"tick {self.tick_seconds:g}"]
        lines += [f"actor {k} {n}" for n, k in self.actors.items()]
        for c in self.channels:
            mtu = "none" if c.mtu is None else str(c.mtu)
            lines.append(f"channel {c.a} {c.b} {'trusted' if c.trusted else 'untrusted'} mtu={mtu} latency={c.latency}")
        lines += [f"skew {n} {v:g}" for n, v in self.skews.items()]
        s = self.strategy
        if s.kind == "inject":
            lines.append(f"strategy inject {s.frame.hex()} {s.src} {s.dst}")
        elif s.kind == "leak":
            lines.append(f"strategy leak {shlex.quote(str(s.target or 'Start Engine'))} {s.action}")
        else:
            lines.append(f"strategy {s.describe()}")
        lines += [f"goal {g.describe()}" for g in self.goals]
        lines.append(f"expect {self.expect}")
        return "\n".join(lines) + "\n"


def _goal_actors(g: Goal) -> list[str]:
    if g.kind in ("delegate", "execute", "otf") and g.args:
        return [g.args[0]]
    return []


def _int(text: str, line: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ScenarioError(f"{what} must be an integer, got {text!r}", line) from None


def _procedure(text: str, line: int) -> Procedure:
    if text not in PROCEDURE_NAMES:
        raise ScenarioError(f"unknown procedure {text!r} (expected one of {', '.join(PROCEDURE_NAMES)})", line)
    return PROCEDURE_NAMES[text]


def _parse_strategy(args: list[str], line: int) -> Strategy:
    if not args or args[0] not in STRATEGIES:
        raise ScenarioError(f"unknown strategy {args[0] if args else ''!r}", line)
    kind, rest = args[0], args[1:]
    if kind == "passive":
        if rest:
            raise ScenarioError("passive takes no arguments", line)
        return Strategy()
    if kind in ("replay", "drop"):
        if len(rest) != 2:
            raise ScenarioError(f"{kind} needs <procedure> <step>", line)
        return Strategy(kind, _procedure(rest[0], line), _int(rest[1], line, "step"))
    if kind in ("mutate", "splice"):
        if len(rest) != 3:
            raise ScenarioError(f"{kind} needs <procedure> <step> <field-index|auth>", line)
        target = rest[2] if rest[2] == "auth" else _int(rest[2], line, "field index")
        return Strategy(kind, _procedure(rest[0], line), _int(rest[1], line, "step"), target)
    if kind == "inject":
        if len(rest) != 3:
            raise ScenarioError("inject needs <hex-frame> <src> <dst>", line)
        try:
            frame = bytes.fromhex(rest[0])
        except ValueError:
            raise ScenarioError("inject frame is not hex", line) from None
        return Strategy(kind, frame=frame, src=rest[1], dst=rest[2])
    # leak [object] [action]
    if len(rest) > 2:
        raise ScenarioError("leak takes at most <object> <action>", line)
    return Strategy("leak", target=rest[0] if rest else "Start Engine", action=rest[1] if len(rest) > 1 else "e")


_GOAL_ARITY = {"setup": (0, 0), "set_root": (0, 0), "upload": (1, 1), "delegate": (3, 5), "execute": (4, 4),
               "otf": (3, 3), "advance": (1, 1), "revoke": (2, 2)}


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    seen_strategy = False
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        try:
            words = shlex.split(line)
        except ValueError as exc:
            raise ScenarioError(str(exc), no) from None
        key, args = words[0], words[1:]
        if key == "seed":
            sc.seed = _int(args[0] if args else "", no, "seed")
        elif key == "ibs":
            if len(args) != 2 or args[0] not in SCHEMES:
                raise ScenarioError("ibs needs <shamir|gq> <bits>", no)
            sc.scheme, sc.modulus_bits = args[0], _int(args[1], no, "bits")
        elif key == "backend":
            if len(args) != 1 or args[0] not in BACKENDS:
                raise ScenarioError(f"backend must be one of {', '.join(BACKENDS)}", no)
            sc.backend = args[0]
        elif key == "kem":
            if args not in (["dh"], ["rsa"]):
                raise ScenarioError("kem must be dh or rsa", no)
            sc.kem = args[0]
        elif key == "tick":
            try:
                sc.tick_seconds = float(args[0])
            except (IndexError, ValueError):
                raise ScenarioError("tick needs seconds", no) from None
        elif key == "actor":
            if len(args) != 2 or args[0] not in ACTOR_KINDS:
                raise ScenarioError(f"actor needs <{'|'.join(ACTOR_KINDS)}> <name>", no)
            if args[1] in sc.actors:
                raise ScenarioError(f"actor {args[1]!r} declared twice", no)
            sc.actors[args[1]] = args[0]
        elif key == "channel":
            if len(args) < 3 or args[2] not in ("trusted", "untrusted"):
                raise ScenarioError("channel needs <a> <b> trusted|untrusted [mtu=N] [latency=N]", no)
            opts = {"mtu": DEFAULT_MTU, "latency": 1}
            for opt in args[3:]:
                name, _, value = opt.partition("=")
                if name not in opts:
                    raise ScenarioError(f"unknown channel option {name!r}", no)
                opts[name] = None if (name == "mtu" and value == "none") else _int(value, no, name)
            sc.channels.append(ChannelSpec(args[0], args[1], args[2] == "trusted", opts["mtu"], opts["latency"]))
        elif key == "skew":
            if len(args) != 2:
                raise ScenarioError("skew needs <actor> <seconds>", no)
            try:
                sc.skews[args[0]] = float(args[1])
            except ValueError:
                raise ScenarioError("skew seconds must be a number", no) from None
        elif key == "strategy":
            if seen_strategy:
                raise ScenarioError("only one strategy per scenario", no)
            sc.strategy, seen_strategy = _parse_strategy(args, no), True
        elif key == "goal":
            if not args or args[0] not in GOALS:
                raise ScenarioError(f"unknown goal {args[0] if args else ''!r}", no)
            lo, hi = _GOAL_ARITY[args[0]]
            if not lo <= len(args) - 1 <= hi:
                raise ScenarioError(f"goal {args[0]} takes {lo}..{hi} arguments", no)
            sc.goals.append(Goal(args[0], tuple(args[1:])))
        elif key == "expect":
            if args not in (["safe"], ["attack"]):
                raise ScenarioError("expect must be safe or attack", no)
            sc.expect = args[0]
        else:
            raise ScenarioError(f"unknown directive {key!r}", no)
    return sc.validate()

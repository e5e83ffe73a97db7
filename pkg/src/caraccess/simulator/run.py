"""Discrete-tick simulation of all parties over declared channels."""

from __future__ import annotations

import hashlib
import heapq
import json
from collections import Counter
from dataclasses import dataclass, field

from ..ibs import IbsParams
from ..policy import ROOT_ROLE, default_policy_text
from ..protocol import engines as E
from ..protocol.state import (Authority, CarState, Clock, OwnerState, Principal, ProtocolAbort, RevocationError,
                              RevocationList, UserState)
from ..rng import Rng
from ..wire import Chunk, Procedure, WireError, chunk, decode, encode, reassemble
from .adversary import Adversary, Out
from .scenario import ChannelSpec, Goal, Scenario, ScenarioError

GROUP_SIZE = 8
DEFAULT_EPHEMERAL_SECONDS = 3600
MAX_EVENTS = 100_000


@dataclass
class Verdict:
    safe: bool
    violations: list[str]
    expect: str

    @property
    def attack_found(self) -> bool:
        return not self.safe

    @property
    def passed(self) -> bool:
        return self.safe if self.expect == "safe" else not self.safe

    def describe(self) -> str:
        head = "safe" if self.safe else "attack-found"
        return head + "".join(f"\n  - {v}" for v in self.violations)


@dataclass
class SimResult:
    scenario: Scenario
    lines: list[str]
    car: CarState
    owner: OwnerState
    users: dict[str, UserState]
    adversary: Adversary
    verdict: Verdict
    goal_results: list[tuple[Goal, str]] = field(default_factory=list)

    @property
    def transcript(self) -> str:
        return "\n".join(self.lines) + "\n"

    @property
    def frames(self) -> list[bytes]:
        """Every frame that was put on the wire, as bytes."""
        out = []
        for line in self.lines:
            parts = line.split()
            if len(parts) >= 4 and "->" in parts[1] and not parts[0].startswith("#"):
                try:
                    out.append(bytes.fromhex(parts[3]))
                except ValueError:
                    pass
        return out


class Node:
    def __init__(self, name: str, kind: str, state, clock):
        self.name, self.kind, self.state, self.clock = name, kind, state, clock
        self.engines: dict[tuple[Procedure, str], E.Engine] = {}
        self.routes: dict[tuple[Procedure, int], str] = {}
        self.buffers: dict[str, list[Chunk]] = {}


class Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.rng = Rng(scenario.seed)
        self.clock = Clock()
        self.tick = 0
        self.lines: list[str] = []
        self._queue: list = []
        self._seq = 0
        self.requested: Counter = Counter()
        self.goal_results: list[tuple[Goal, str]] = []
        self.adversary = Adversary(scenario.strategy)

        self.authority = Authority(IbsParams(scenario.scheme, scenario.modulus_bits), self.rng)
        pp = self.authority.public
        self.car_name = scenario.actor("car")
        self.owner_name = scenario.actor("owner")
        self.seller_name = scenario.actor("seller")
        self.man_name = scenario.actor("manufacturer")
        revocations = RevocationList()
        self.owner = OwnerState(self.owner_name, self.authority.issue(self.owner_name), pp, backend=scenario.backend,
                                revocations=revocations)
        self.owner.create_group(ROOT_ROLE, 1, self.rng)
        self.car = CarState(kem_kind=scenario.kem, rsa_bits=1024, revocations=revocations)
        self.users = {u: UserState(u, self.authority.issue(u), pp) for u in scenario.users()}
        self.nodes: dict[str, Node] = {}
        for name, kind in scenario.actors.items():
            clock = self.clock.skewed(scenario.skews[name]) if name in scenario.skews else self.clock
            state = {"car": self.car, "owner": self.owner}.get(kind) or self.users.get(name) or Principal(
                name, self.authority.issue(name), pp)
            self.nodes[name] = Node(name, kind, state, clock)
        self.nodes[self.seller_name].routes[(Procedure.SET_ROOT, 4)] = self.car_name
        self.channels = {frozenset((c.a, c.b)): c for c in scenario.channels}

    # ------------------------------------------------------------ transcript
    def note(self, text: str) -> None:
        self.lines.append(f"# {self.tick:05d} {text}")

    def _log_frame(self, src: str, dst: str, data: bytes | None, trusted: bool, note: str, original: bytes) -> None:
        shown = data if data is not None else original
        try:
            msg = decode(shown)
            label = f"{msg.procedure.name}:{msg.step}"
        except WireError:
            label = "RAW"
        if trusted:
            body = f"trusted len={len(shown)} sha256={hashlib.sha256(shown).hexdigest()[:16]}"
        else:
            body = shown.hex()
        suffix = f" ; {note}" if note else ""
        self.lines.append(f"{self.tick:05d} {src}->{dst} {label} {body}{suffix}")

    # ------------------------------------------------------------ network
    def channel(self, a: str, b: str) -> ChannelSpec:
        ch = self.channels.get(frozenset((a, b)))
        if ch is None:
            raise ScenarioError(f"no channel declared between {a!r} and {b!r}")
        return ch

    def send(self, src: str, dst: str, data: bytes) -> None:
        ch = self.channel(src, dst)
        outs = [Out(src, dst, data)] if ch.trusted else self.adversary.intercept(self, src, dst, data)
        for o in outs:
            self._put(o, original=data)

    def _put(self, o: Out, original: bytes | None = None) -> None:
        ch = self.channel(o.src, o.dst)
        self._log_frame(o.src, o.dst, o.data, ch.trusted, o.note, original if o.data is None else o.data)
        if o.data is None:
            return
        mtu = ch.mtu if ch.mtu is not None else len(o.data) + 6 + 1
        for c in chunk(o.data, max(mtu, 7)):
            self._seq += 1
            heapq.heappush(self._queue, (self.tick + ch.latency, self._seq, o.src, o.dst, c.to_bytes()))

    def _deliver(self, src: str, dst: str, raw: bytes) -> None:
        node = self.nodes[dst]
        c = Chunk.from_bytes(raw)
        buf = node.buffers.setdefault(src, [])
        if c.seq == 0:
            buf.clear()
        buf.append(c)
        if len(buf) < c.total:
            return
        try:
            data = reassemble(buf)
        except WireError as exc:
            self.note(f"{dst} discards frame from {src}: {exc}")
            return
        finally:
            buf.clear()
        self._dispatch(node, src, data)

    def _dispatch(self, node: Node, src: str, data: bytes) -> None:
        try:
            msg = decode(data)
        except WireError as exc:
            self.note(f"{node.name} discards undecodable frame: {exc}")
            return
        engine = self._engine_for(node, src, msg)
        if engine is None:
            self.note(f"{node.name} ignores {msg.procedure.name}:{msg.step} from {src}")
            return
        before = len(self.car.executed)
        try:
            out = engine.receive(msg)
        except ProtocolAbort as abort:
            self.note(f"{node.name} abort {abort.reason.value} at {msg.procedure.name}:{msg.step}")
            return
        for action in self.car.executed[before:]:
            self.note(f"{self.car_name} executed {action.role} {action.obj!r} {action.action} ({action.procedure})")
        if out is not None:
            self.send(node.name, node.routes.get((out.procedure, out.step), src), encode(out))

    def _engine_for(self, node: Node, src: str, msg) -> E.Engine | None:
        key = (msg.procedure, src)
        responder = self._responder(node, src, msg)
        if responder is not None:
            node.engines[key] = responder
            return responder
        engine = node.engines.get(key)
        if engine is not None and not engine.done:
            return engine
        for e in node.engines.values():
            if e.procedure == msg.procedure and not e.done and e.expect == msg.step:
                return e
        return engine  # finished engine: it will abort with unexpected-message

    def _responder(self, node: Node, src: str, msg) -> E.Engine | None:
        rng, clock, p = self.rng, node.clock, msg.procedure
        if node.kind == "car":
            if p == Procedure.SETUP and msg.step == 1:
                return E.CarSetup(self.car, rng, clock, trusted=self.channel(src, node.name).trusted)
            if p == Procedure.SET_ROOT and msg.step == 4:
                return E.CarSetRoot(self.car, rng, clock)
            if msg.step == 1:
                cls = {Procedure.UPLOAD_GPK: E.CarUpload, Procedure.EXECUTE: E.CarExecute,
                       Procedure.EXECUTE_OTF: E.CarOtf}.get(p)
                return cls(self.car, rng, clock) if cls else None
        elif node.kind == "manufacturer" and p == Procedure.SET_ROOT and msg.step == 1:
            return E.ManufacturerSetRoot(node.state, rng, clock)
        elif node.kind == "owner" and p == Procedure.DELEGATE and msg.step == 1:
            return E.OwnerDelegate(self.owner, rng, clock)
        return None

    def _pump(self) -> None:
        events = 0
        while self._queue:
            at, _, src, dst, raw = heapq.heappop(self._queue)
            step = max(at, self.tick + 1) - self.tick
            self.tick += step
            self.clock.advance(step * self.scenario.tick_seconds)
            self._deliver(src, dst, raw)
            events += 1
            if events > MAX_EVENTS:
                raise RuntimeError("simulation did not quiesce")

    def _settle(self, final: bool = False) -> None:
        self._pump()
        while True:
            outs = self.adversary.on_idle(self, final)
            if not outs:
                return
            for o in outs:
                self._put(o)
            self._pump()

    # ------------------------------------------------------------ goals
    def _start(self, node_name: str, engine: E.Engine, dst: str) -> E.Engine:
        node = self.nodes[node_name]
        node.engines[(engine.procedure, dst)] = engine
        self.send(node_name, dst, encode(engine.start()))
        return engine

    def run_goal(self, goal: Goal) -> str:
        g, a = goal.kind, goal.args
        rng = self.rng
        car, owner = self.car_name, self.owner_name
        if g == "setup":
            rights = default_policy_text().encode()
            man = self.nodes[self.man_name]
            e = E.ManufacturerSetup(man.state, self.authority.issue(car), rights, rng, man.clock)
            self._start(self.man_name, e, car)
            self._settle()
            return "ok" if self.car.initialized else "failed"
        if g == "set_root":
            seller = self.nodes[self.seller_name]
            e = E.SellerSetRoot(seller.state, self.man_name, car, rng, seller.clock)
            self._start(self.seller_name, e, self.man_name)
            self._settle()
            if e.done or e.expect != 3:
                return "failed"
            o = E.OwnerSetRoot(self.owner, b"owner legal record", rng, self.nodes[owner].clock)
            self._start(owner, o, self.seller_name)
            self._settle()
            return "ok" if self.car.owner == owner else "failed"
        if g == "upload":
            role = a[0]
            if role not in self.owner.groups:
                self.owner.create_group(role, GROUP_SIZE, rng)
            e = E.OwnerUpload(self.owner, car, role, self.owner.groups[role].gpk, rng, self.nodes[owner].clock)
            self._start(owner, e, car)
            self._settle()
            return "ok" if e.result == role else "failed"
        if g == "delegate":
            user, kind, role = a[0], a[1], a[2]
            opts = dict(o.split("=", 1) for o in a[3:])
            node = self.nodes[user]
            now = node.clock()
            t_stop = now + float(opts.get("duration", DEFAULT_EPHEMERAL_SECONDS)) if kind == E.EPHEMERAL else None
            attrs = json.loads(opts.get("attrs", "{}"))
            e = E.UserDelegate(self.users[user], self.owner.signing_group.gpk, kind, role, rng, node.clock,
                               attrs=attrs, t_start=now, t_stop=t_stop, kem_kind=self.scenario.kem, rsa_bits=1024)
            self._start(user, e, owner)
            self._settle()
            return "ok" if e.result is not None else "failed"
        if g == "execute":
            user, role, obj, action = a
            if role not in self.users[user].tokens:
                return "skipped (no token)"
            e = E.UserExecute(self.users[user], car, role, obj, action, rng, self.nodes[user].clock)
            return self._request(user, e, (role, obj, action))
        if g == "otf":
            user, obj, action = a
            session = self.users[user].sessions.get(car)
            if session is None:
                return "skipped (no session)"
            e = E.UserOtf(session, obj, action, rng, self.nodes[user].clock)
            return self._request(user, e, (session.role, obj, action))
        if g == "advance":
            self.clock.advance(float(a[0]))
            return "ok"
        if g == "revoke":
            authority, target = a
            what, _, name = target.partition(":")
            if name not in self.users or what not in ("user", "token"):
                raise ScenarioError(f"revoke target must be user:<name> or token:<name>, got {target!r}")
            if what == "user":
                value = name.encode()
            else:
                tokens = list(self.users[name].tokens.values())
                if not tokens:
                    return "skipped (no token)"
                value = tokens[-1].digest
            try:
                self.car.revocations.revoke(authority, value, self.clock())
            except RevocationError as exc:
                return f"rejected ({exc})"
            return "ok"
        raise ScenarioError(f"unknown goal {g!r}")

    def _request(self, user: str, engine: E.Engine, key: tuple[str, str, str]) -> str:
        self.requested[key] += 1
        before = len(self.car.executed)
        self._start(user, engine, self.car_name)
        self._settle()
        done = [(x.role, x.obj, x.action) for x in self.car.executed[before:]]
        return "ok" if key in done else "failed"

    def verdict(self) -> Verdict:
        violations = []
        done = Counter((x.role, x.obj, x.action) for x in self.car.executed)
        for key, n in sorted(done.items()):
            extra = n - self.requested.get(key, 0)
            if extra > 0:
                violations.append(f"car executed {key[1]!r} {key[2]} as {key[0]} {extra} time(s) without a request")
        table = self.car.policy
        for x in self.car.executed:
            if table is None or not table.rights(x.role, x.obj).grants(x.action):
                violations.append(f"car executed policy-denied {x.obj!r} {x.action} as {x.role}")
        for role, rk in self.car.role_gpks.items():
            group = self.owner.groups.get(role)
            if group is None or group.gpk != rk.gpk:
                violations.append(f"car holds a {role} group key the owner never issued")
        return Verdict(not violations, violations, self.scenario.expect)

    def run(self) -> SimResult:
        self.note(f"scenario seed={self.scenario.seed} strategy={self.scenario.strategy.describe()}")
        for goal in self.scenario.goals:
            self.note(f"goal {goal.describe()}")
            result = self.run_goal(goal)
            self.goal_results.append((goal, result))
            self.note(f"goal {goal.kind} -> {result}")
        self._settle(final=True)
        verdict = self.verdict()
        self.note(f"car state {self.car.state}")
        self.note("verdict " + verdict.describe().replace("\n", "\n# "))
        return SimResult(self.scenario, self.lines, self.car, self.owner, self.users, self.adversary, verdict,
                         self.goal_results)


def sim_run(scenario: Scenario) -> SimResult:
    return Simulation(scenario).run()


__all__ = ["SimResult", "Simulation", "Verdict", "sim_run"]

"""Network adversary: sees every frame on untrusted channels and acts on a strategy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from ..protocol.engines import UserOtf
from ..protocol.state import ProtocolAbort, SessionState
from ..wire import Procedure, Tag, WireError, WireMessage, decode, encode
from .knowledge import AdversaryKnowledge, adversary_closure
from .scenario import Strategy

if TYPE_CHECKING:
    from .run import Simulation


@dataclass
class Out:
    src: str
    dst: str
    data: bytes | None      # None: the frame was dropped
    note: str = ""


def _label(data: bytes) -> tuple[Procedure, int] | None:
    try:
        msg = decode(data)
    except WireError:
        return None
    return msg.procedure, msg.step


def _flip(value: bytes) -> bytes:
    return value[:-1] + bytes([value[-1] ^ 0x01]) if value else b"\x00"


def _set_target(msg: WireMessage, target, value_fn) -> WireMessage | None:
    """Apply ``value_fn(old)`` to a field index or the authenticator; None if absent."""
    if target == "auth":
        if msg.auth is None:
            return None
        return msg.with_auth(msg.auth.kind, value_fn(msg.auth.value, "auth"))
    if not isinstance(target, int) or target >= len(msg.fields):
        return None
    return msg.replace_field(target, value_fn(msg.fields[target][1], msg.fields[target][0]))


@dataclass
class Adversary:
    strategy: Strategy
    knowledge: AdversaryKnowledge = field(default_factory=AdversaryKnowledge)
    fired: bool = False
    first: dict = field(default_factory=dict)           # (proc, step) -> first frame bytes
    recording: list[Out] = field(default_factory=list)  # first complete run of the replay target
    pending: list[Out] = field(default_factory=list)
    forged: UserOtf | None = None
    victim: str = ""
    history: list[frozenset] = field(default_factory=list)

    def observe(self, data: bytes) -> None:
        before = len(self.knowledge.items)
        adversary_closure(self.knowledge, data)
        if len(self.knowledge.items) != before:
            self.history.append(self.knowledge.snapshot())

    # ------------------------------------------------------------ hooks
    def intercept(self, sim: "Simulation", src: str, dst: str, data: bytes) -> list[Out]:
        s = self.strategy
        self.observe(data)
        label = _label(data)
        out = [Out(src, dst, data)]
        target = (s.procedure, s.step)
        if s.kind == "drop" and not self.fired and label == target:
            self.fired = True
            out = [Out(src, dst, None, "dropped")]
        elif s.kind == "mutate" and not self.fired and label == target:
            msg = _set_target(decode(data), s.target, lambda v, _t: _flip(v))
            if msg is not None:
                self.fired = True
                out = [Out(src, dst, encode(msg), f"mutated {s.target}")]
        elif s.kind == "splice" and label == target and not self.fired:
            if target not in self.first:
                self.first[target] = data
            else:
                old = decode(self.first[target])
                donor = (old.auth.value if old.auth else b"") if s.target == "auth" else (
                    old.fields[s.target][1] if isinstance(s.target, int) and s.target < len(old.fields) else None)
                msg = decode(data)
                if donor is not None:
                    spliced = _set_target(msg, s.target, lambda v, _t: donor)
                    self.fired = True
                    if spliced is not None and encode(spliced) != data:
                        out = [Out(src, dst, encode(spliced), f"spliced {s.target} from earlier session")]
        elif s.kind == "replay" and label is not None and label[0] == s.procedure:
            if not self.fired:
                self.recording.append(Out(src, dst, data))
            elif self.pending and src == self.pending[0].dst:
                nxt = self.pending.pop(0)
                out.append(Out(nxt.src, nxt.dst, nxt.data, "replayed"))
        elif s.kind == "leak" and self.forged is not None and label is not None \
                and label[0] == Procedure.EXECUTE_OTF and dst == self.victim:
            try:
                reply = self.forged.receive(decode(data))
            except ProtocolAbort:
                reply = None
            if reply is not None:
                out.append(Out(self.victim, src, encode(reply), "forged"))
        return out

    def on_idle(self, sim: "Simulation", final: bool) -> list[Out]:
        s = self.strategy
        if self.fired:
            return []
        if s.kind == "replay" and self.recording:
            steps = [o for o in self.recording if _label(o.data)[1] == s.step]
            if not steps:
                return []
            start = self.recording.index(steps[0])
            sender = steps[0].src
            self.fired = True
            self.pending = [o for o in self.recording[start + 1:] if o.src == sender]
            return [Out(steps[0].src, steps[0].dst, steps[0].data, "replayed")]
        if s.kind == "inject" and final:
            self.fired = True
            self.observe(s.frame)
            return [Out(s.src, s.dst, s.frame, "injected")]
        if s.kind == "leak" and final:
            return self._leak(sim)
        return []

    # ------------------------------------------------------------ leaked session key
    def _leak(self, sim: "Simulation") -> list[Out]:
        victim = next((u for u in sim.scenario.users() if sim.car_name in sim.users[u].sessions), None)
        self.fired = True
        if victim is None:
            sim.note("adversary: no established session to leak")
            return []
        session = sim.users[victim].sessions[sim.car_name]
        self.knowledge.learn_key(session.k_ses)
        self.history.append(self.knowledge.snapshot())
        sids = self.knowledge.field_values(Tag.SID)
        if not sids:
            return []
        self.victim = victim
        forged_session = SessionState(sids[-1], session.k_ses, "", sim.clock())
        self.forged = UserOtf(forged_session, str(self.strategy.target), self.strategy.action, sim.rng.fork(), sim.clock)
        sim.note(f"adversary learns session key of {victim}; forging {self.strategy.target} {self.strategy.action}")
        return [Out(victim, sim.car_name, encode(self.forged.start()), "forged")]

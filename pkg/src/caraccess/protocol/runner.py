"""Drive engines against each other in memory.

``Deployment`` wires an IBS authority, manufacturer, seller, owner, car and
any number of users around one shared clock; the ``run_*`` functions play a
whole procedure over an in-memory loopback and either return the outcome or
raise the ``ProtocolAbort`` of whichever side stopped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..groupsig import DEFAULT_BACKEND, GroupPublicKey
from ..ibs import SHAMIR, IbsParams
from ..policy import ROOT_ROLE, default_policy_text
from ..rng import Rng
from ..wire import WireMessage, decode, encode
from . import engines as E
from .state import (Authority, CarState, Clock, DelegationToken, OwnerState, Principal, ProtocolAbort, Reason,
                    RevocationList, SessionState, UserState)

DEFAULT_VIN = "WVWZZZ1JZXW000001"


@dataclass
class Frame:
    sender: str
    data: bytes


def exchange(initiator: E.Engine, responder: E.Engine, tap: Callable[[Frame], bytes | None] | None = None,
             names: tuple[str, str] = ("initiator", "responder")) -> list[Frame]:
    """Run a two-party procedure to completion; every frame passes through encode/decode.

    ``tap`` may return replacement bytes (or ``None`` to drop the frame).
    """
    frames: list[Frame] = []
    sides = (initiator, responder)
    msg = initiator.start()
    turn = 1
    while msg is not None:
        frame = Frame(names[1 - turn], encode(msg))
        data = frame.data
        if tap is not None:
            data = tap(frame)
            if data is None:
                frames.append(frame)
                break
        frames.append(Frame(frame.sender, data))
        msg = sides[turn].receive(decode(data))
        turn ^= 1
    return frames


def _send(engine: E.Engine, msg: WireMessage) -> WireMessage | None:
    return engine.receive(decode(encode(msg)))


@dataclass
class Deployment:
    """All parties of one car, sharing a clock; deterministic under ``rng``."""

    rng: Rng
    authority: Authority
    manufacturer: Principal
    seller: Principal
    owner: OwnerState
    car: CarState
    clock: Clock = field(default_factory=Clock)
    vin: str = DEFAULT_VIN
    users: dict[str, UserState] = field(default_factory=dict)

    @classmethod
    def create(cls, rng: Rng | None = None, *, scheme: str = SHAMIR, modulus_bits: int = 1024,
               backend: str = DEFAULT_BACKEND, vin: str = DEFAULT_VIN, kem_kind: str = "dh",
               rsa_bits: int = 1024, clock: Clock | None = None) -> "Deployment":
        rng = rng or Rng()
        authority = Authority(IbsParams(scheme, modulus_bits), rng)
        pp = authority.public

        def principal(name: str) -> Principal:
            return Principal(name, authority.issue(name), pp)

        revocations = RevocationList()
        owner = OwnerState("PsO-owner", authority.issue("PsO-owner"), pp, backend=backend, revocations=revocations)
        car = CarState(kem_kind=kem_kind, rsa_bits=rsa_bits, revocations=revocations)
        return cls(rng, authority, principal("Man-Acme"), principal("Sel-Dealer"), owner, car, clock or Clock(), vin)

    def user(self, name: str) -> UserState:
        if name not in self.users:
            pseudonym = f"PsU-{name}"
            self.users[name] = UserState(pseudonym, self.authority.issue(pseudonym), self.authority.public)
        return self.users[name]

    def bootstrap(self, roles=("Driver",), group_size: int = 4) -> "Deployment":
        """Setup, set root, and upload the owner group plus one group per role."""
        run_setup(self)
        run_set_root(self)
        self.owner.create_group(ROOT_ROLE, 1, self.rng)
        run_upload_gpk(self, ROOT_ROLE)
        for role in roles:
            self.owner.create_group(role, group_size, self.rng)
            run_upload_gpk(self, role)
        return self


def run_setup(dep: Deployment, rights: bytes | None = None, trusted: bool = True) -> CarState:
    if rights is None:
        rights = default_policy_text().encode()
    car_key = dep.authority.issue(dep.vin)
    man = E.ManufacturerSetup(dep.manufacturer, car_key, rights, dep.rng, dep.clock)
    car = E.CarSetup(dep.car, dep.rng, dep.clock, trusted=trusted)
    exchange(man, car)
    return dep.car


def run_set_root(dep: Deployment, owner_data: bytes = b"owner legal record") -> CarState:
    seller = E.SellerSetRoot(dep.seller, dep.manufacturer.identity, dep.vin, dep.rng, dep.clock)
    man = E.ManufacturerSetRoot(dep.manufacturer, dep.rng, dep.clock)
    owner = E.OwnerSetRoot(dep.owner, owner_data, dep.rng, dep.clock)
    car = E.CarSetRoot(dep.car, dep.rng, dep.clock)
    m2 = _send(man, seller.start())
    _send(seller, m2)
    m4 = _send(seller, owner.start())
    _send(car, m4)
    return dep.car


def run_upload_gpk(dep: Deployment, role: str, gpk: GroupPublicKey | None = None,
                   uploader: OwnerState | None = None) -> CarState:
    owner = uploader or dep.owner
    gpk = gpk or dep.owner.groups[role].gpk
    exchange(E.OwnerUpload(owner, dep.vin, role, gpk, dep.rng, dep.clock), E.CarUpload(dep.car, dep.rng, dep.clock))
    return dep.car


def run_delegate(dep: Deployment, user: UserState, kind: str, role: str, attrs: dict | None = None,
                 window: tuple[float, float | None] | None = None, kem_kind: str = "dh",
                 tap: Callable[[Frame], bytes | None] | None = None) -> DelegationToken | None:
    t_start, t_stop = window if window else (None, None)
    u = E.UserDelegate(user, dep.owner.signing_group.gpk, kind, role, dep.rng, dep.clock, attrs=attrs,
                       t_start=t_start, t_stop=t_stop, kem_kind=kem_kind, rsa_bits=dep.car.rsa_bits)
    exchange(u, E.OwnerDelegate(dep.owner, dep.rng, dep.clock), tap=tap)
    return u.result


def run_execute(dep: Deployment, user: UserState, role: str, obj: str, action: str = "e",
                attrs: dict | None = None, tap=None) -> tuple[E.UserExecute, E.CarExecute]:
    u = E.UserExecute(user, dep.vin, role, obj, action, dep.rng, dep.clock, attrs=attrs)
    c = E.CarExecute(dep.car, dep.rng, dep.clock)
    exchange(u, c, tap=tap)
    return u, c


def run_execute_otf(dep: Deployment, user: UserState, obj: str, action: str = "e",
                    session: SessionState | None = None, tap=None) -> tuple[E.UserOtf, E.CarOtf]:
    session = session or user.sessions[dep.vin]
    u = E.UserOtf(session, obj, action, dep.rng, dep.clock)
    c = E.CarOtf(dep.car, dep.rng, dep.clock)
    exchange(u, c, tap=tap)
    return u, c


def revoke(dep: Deployment, authority: str, target: bytes | str):
    return dep.car.revocations.revoke(authority, target, dep.clock())


__all__ = ["DEFAULT_VIN", "Deployment", "Frame", "ProtocolAbort", "Reason", "exchange", "revoke", "run_delegate",
           "run_execute", "run_execute_otf", "run_set_root", "run_setup", "run_upload_gpk"]

"""One state-machine engine per side of each procedure.

An engine is driven with ``start()`` (initiators only) and ``receive(msg)``;
both return the next outbound ``WireMessage`` or ``None``.  Any failed check
raises ``ProtocolAbort`` carrying a typed reason; the engine then refuses all
further input and nothing more goes on the wire.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable

from .. import crypto
from ..crypto import CryptoError, SymmetricKey
from ..groupsig import GroupMemberKey, GroupPublicKey, GroupSigError, gs_sign, gs_verify
from ..ibs import IbsError, IbsPublicParams, IbsUserKey, ibs_sign, ibs_verify
from ..policy import ROOT_ROLE, PolicyError, VinError, policy_check, policy_load, validate_vin
from ..rng import Rng
from ..wire import (AuthKind, Procedure, Tag, WireError, WireMessage, decode, decode_fields, decode_record,
                    encode, encode_fields, encode_record, read_timestamp, signed_bytes, timestamp)
from .state import (NONCE_LEN, SID_LEN, SKEW_SECONDS, CarState, DelegationToken, ExecutedAction, OwnerState,
                    Principal, ProtocolAbort, Reason, RoleKey, SessionState, UserState, decode_attrs,
                    encode_attrs, token_digest)

ASYMMETRIC_OPS = frozenset({"ibs_sign", "ibs_verify", "gs_sign", "gs_verify", "kem_keygen", "kem_encap", "kem_decap"})

PERSISTENT, EPHEMERAL = "persistent", "ephemeral"
_KIND_BYTE = {PERSISTENT: b"P", EPHEMERAL: b"E"}
REC_TOKEN_P, REC_TOKEN_E = 0x30, 0x31


def trunc64(auth_value: bytes) -> bytes:
    """Last 64 bits of an authenticator, used to chain consecutive messages."""
    return bytes(auth_value[-8:])


def encode_action(obj: str, action: str) -> bytes:
    return f"exec:{action}:{obj}".encode()


def decode_action(data: bytes) -> tuple[str, str]:
    try:
        verb, action, obj = data.decode().split(":", 2)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolAbort(Reason.MALFORMED, "bad action encoding") from exc
    if verb != "exec" or not obj:
        raise ProtocolAbort(Reason.MALFORMED, "bad action encoding")
    return obj, action


def credential_bytes(pseudonym: str, role: str, attrs: dict, t_start: float, t_stop: float | None) -> bytes:
    """Fields-only TLV of the tuple the owner signs for an ephemeral delegation."""
    return encode_fields([(Tag.PSEUDONYM, pseudonym.encode()), (Tag.ROLE, role.encode()),
                          (Tag.ATTRS, encode_attrs(attrs)), (Tag.T_START, timestamp(t_start)),
                          (Tag.T_STOP, timestamp(None if t_stop is None or math.isinf(t_stop) else t_stop))])


def parse_credential(data: bytes) -> dict:
    fields = dict(decode_fields(data))
    need = (Tag.PSEUDONYM, Tag.ROLE, Tag.ATTRS, Tag.T_START, Tag.T_STOP)
    if sorted(fields) != sorted(int(t) for t in need):
        raise ProtocolAbort(Reason.MALFORMED, "credential has wrong fields")
    return {"pseudonym": fields[Tag.PSEUDONYM].decode(), "role": fields[Tag.ROLE].decode(),
            "attrs": decode_attrs(fields[Tag.ATTRS]), "t_start": read_timestamp(fields[Tag.T_START]),
            "t_stop": read_timestamp(fields[Tag.T_STOP])}


class Engine:
    procedure: Procedure
    first_step = 1

    def __init__(self, rng: Rng, clock: Callable[[], float]):
        self.rng = rng
        self.clock = clock
        self.expect = self.first_step
        self.done = False
        self.aborted: Reason | None = None
        self.ops: Counter = Counter()
        self.result = None

    @property
    def asymmetric_ops(self) -> int:
        return sum(v for k, v in self.ops.items() if k in ASYMMETRIC_OPS)

    def start(self) -> WireMessage | None:
        raise ProtocolAbort(Reason.UNEXPECTED, f"{type(self).__name__} is not an initiator")

    def receive(self, msg: WireMessage) -> WireMessage | None:
        if self.done:
            raise self._fail(ProtocolAbort(Reason.UNEXPECTED, "engine already finished"))
        if msg.procedure != self.procedure or msg.step != self.expect:
            raise self._fail(ProtocolAbort(Reason.UNEXPECTED, f"got {msg.procedure.name}:{msg.step}"))
        try:
            out = getattr(self, f"_step{msg.step}")(msg)
        except ProtocolAbort as abort:
            raise self._fail(abort)
        except (WireError, CryptoError, IbsError, GroupSigError, ValueError, KeyError) as exc:
            raise self._fail(ProtocolAbort(Reason.MALFORMED, str(exc))) from exc
        self._advance(out)
        return out

    def _advance(self, out: WireMessage | None) -> None:
        if out is None:
            self.done = True
        else:
            self.expect = out.step + 1

    def _fail(self, abort: ProtocolAbort) -> ProtocolAbort:
        self.done = True
        self.aborted = abort.reason
        return abort

    # helpers
    def _now(self) -> float:
        return self.clock()

    def _ts(self) -> bytes:
        return timestamp(self._now())

    def _nonce(self) -> bytes:
        return self.rng.bytes(NONCE_LEN)

    def _msg(self, step: int, fields) -> WireMessage:
        return WireMessage(self.procedure, step, tuple(fields))

    def _fresh(self, msg: WireMessage) -> None:
        ts = read_timestamp(msg.get(Tag.TIMESTAMP))
        if abs(ts - self._now()) > SKEW_SECONDS:
            raise ProtocolAbort(Reason.STALE_TIMESTAMP)

    @staticmethod
    def _once(seen: set[bytes], nonce: bytes) -> None:
        """Reject a request nonce seen before (replay inside the skew window)."""
        if nonce in seen:
            raise ProtocolAbort(Reason.BAD_NONCE, "request nonce already used")
        seen.add(nonce)

    def _ibs_sign(self, key: IbsUserKey, msg: WireMessage) -> WireMessage:
        self.ops["ibs_sign"] += 1
        return msg.with_auth(AuthKind.IBS, ibs_sign(key, signed_bytes(msg), self.rng).to_bytes())

    def _ibs_check(self, params: IbsPublicParams, identity: str | bytes, msg: WireMessage) -> None:
        if msg.auth is None or msg.auth.kind != AuthKind.IBS:
            raise ProtocolAbort(Reason.BAD_SIGNATURE, "IBS signature expected")
        self.ops["ibs_verify"] += 1
        if not ibs_verify(params, identity, signed_bytes(msg), msg.auth.value):
            raise ProtocolAbort(Reason.BAD_SIGNATURE)

    def _gs_sign(self, gpk: GroupPublicKey, gsk: GroupMemberKey, msg: WireMessage) -> WireMessage:
        self.ops["gs_sign"] += 1
        return msg.with_auth(AuthKind.GS, gs_sign(gpk, gsk, signed_bytes(msg), self.rng))

    def _gs_check(self, gpk: GroupPublicKey, msg: WireMessage) -> None:
        if msg.auth is None or msg.auth.kind != AuthKind.GS:
            raise ProtocolAbort(Reason.BAD_SIGNATURE, "group signature expected")
        self.ops["gs_verify"] += 1
        if not gs_verify(gpk, signed_bytes(msg), msg.auth.value):
            raise ProtocolAbort(Reason.BAD_SIGNATURE)

    def _mac(self, key: SymmetricKey, msg: WireMessage) -> WireMessage:
        self.ops["mac"] += 1
        return msg.with_auth(AuthKind.MAC, crypto.mac_sign(key, signed_bytes(msg)))

    def _mac_check(self, key: SymmetricKey, msg: WireMessage) -> None:
        self.ops["mac"] += 1
        if msg.auth is None or msg.auth.kind != AuthKind.MAC or not crypto.mac_verify(
                key, signed_bytes(msg), msg.auth.value):
            raise ProtocolAbort(Reason.BAD_MAC)

    def _encrypt(self, key: SymmetricKey, data: bytes) -> bytes:
        self.ops["aead"] += 1
        return crypto.sym_encrypt(key, data, self.rng)

    def _decrypt(self, key: SymmetricKey, blob: bytes) -> bytes:
        self.ops["aead"] += 1
        try:
            return crypto.sym_decrypt(key, blob)
        except CryptoError as exc:
            raise ProtocolAbort(Reason.DECRYPT_FAILED) from exc

    def _kem_keygen(self, kind: str, rsa_bits: int) -> crypto.KemKeyPair:
        self.ops["kem_keygen"] += 1
        return crypto.kem_keygen(kind, self.rng, rsa_bits=rsa_bits)

    def _encapsulate(self, pk: bytes) -> tuple[SymmetricKey, bytes]:
        self.ops["kem_encap"] += 1
        try:
            return crypto.kem_encapsulate(pk, self.rng)
        except CryptoError as exc:
            raise ProtocolAbort(Reason.MALFORMED, "unusable ephemeral public key") from exc

    def _decapsulate(self, kp: crypto.KemKeyPair, ct: bytes) -> SymmetricKey:
        self.ops["kem_decap"] += 1
        try:
            return crypto.kem_decapsulate(kp, ct)
        except CryptoError as exc:
            raise ProtocolAbort(Reason.DECRYPT_FAILED, "key encapsulation rejected") from exc


class CarEngine(Engine):
    """Responder on the car; records every abort reason in the car's log."""

    def __init__(self, car: CarState, rng: Rng, clock: Callable[[], float]):
        super().__init__(rng, clock)
        self.car = car

    def _fail(self, abort: ProtocolAbort) -> ProtocolAbort:
        self.car.aborts.append((f"{self.procedure.name}:{self.expect}", abort.reason))
        return super()._fail(abort)

    def _require_init(self) -> None:
        if not self.car.initialized:
            raise ProtocolAbort(Reason.NOT_INITIALIZED)


# ---------------------------------------------------------------- setup

class ManufacturerSetup(Engine):
    procedure = Procedure.SETUP

    def __init__(self, manufacturer: Principal, car_key: IbsUserKey, rights: bytes | str,
                 rng: Rng, clock: Callable[[], float]):
        super().__init__(rng, clock)
        self.manufacturer = manufacturer
        self.car_key = car_key
        self.rights = rights.encode() if isinstance(rights, str) else bytes(rights)

    def start(self) -> WireMessage:
        out = self._msg(1, [(Tag.MANUFACTURER, self.manufacturer.identity.encode()),
                            (Tag.CAR_ID, self.car_key.identity), (Tag.CAR_KEY, self.car_key.to_bytes()),
                            (Tag.IBS_PARAMS, self.manufacturer.params.to_bytes()), (Tag.RIGHTS, self.rights)])
        self.done = True
        return out


class CarSetup(CarEngine):
    procedure = Procedure.SETUP

    def __init__(self, car: CarState, rng: Rng, clock: Callable[[], float], trusted: bool = False):
        super().__init__(car, rng, clock)
        self.trusted = trusted

    def _step1(self, msg: WireMessage) -> None:
        if not self.trusted:
            raise ProtocolAbort(Reason.UNTRUSTED_CHANNEL)
        if self.car.initialized:
            raise ProtocolAbort(Reason.ALREADY_INITIALIZED)
        try:
            vin = validate_vin(msg.get(Tag.CAR_ID).decode())
            policy = policy_load(msg.get(Tag.RIGHTS))
        except (VinError, PolicyError, UnicodeDecodeError) as exc:
            raise ProtocolAbort(Reason.MALFORMED, str(exc)) from exc
        key = IbsUserKey.from_bytes(msg.get(Tag.CAR_KEY))
        params = IbsPublicParams.from_bytes(msg.get(Tag.IBS_PARAMS))
        if key.identity != vin.encode():
            raise ProtocolAbort(Reason.CAR_MISMATCH, "key issued for another identity")
        if key.public != params:
            raise ProtocolAbort(Reason.MALFORMED, "car key does not match global parameters")
        car = self.car
        car.car_id, car.key, car.params, car.policy = vin, key, params, policy
        car.manufacturer_id = msg.get(Tag.MANUFACTURER).decode()
        self.result = car
        return None


# ---------------------------------------------------------------- set root

ACT_SELL, ACT_CONFIRM = b"sel", b"conf"


class SellerSetRoot(Engine):
    """Seller side: request installation (1), receive m_mnf (2), receive owner data (3), send to car (4)."""

    procedure = Procedure.SET_ROOT

    def __init__(self, seller: Principal, manufacturer_id: str, car_id: str, rng: Rng,
                 clock: Callable[[], float]):
        super().__init__(rng, clock)
        self.seller, self.manufacturer_id, self.car_id = seller, manufacturer_id, car_id
        self.m_mnf: WireMessage | None = None

    def start(self) -> WireMessage:
        out = self._msg(1, [(Tag.SELLER, self.seller.identity.encode()),
                            (Tag.MANUFACTURER, self.manufacturer_id.encode()),
                            (Tag.CAR_ID, self.car_id.encode()), (Tag.TIMESTAMP, self._ts())])
        self.expect = 2
        return self._ibs_sign(self.seller.key, out)

    def _step2(self, msg: WireMessage) -> None:
        self._ibs_check(self.seller.params, self.manufacturer_id, msg)
        self._fresh(msg)
        if msg.get(Tag.ACT) != ACT_SELL or msg.get(Tag.SELLER) != self.seller.identity.encode():
            raise ProtocolAbort(Reason.MALFORMED, "manufacturer authorization does not name this seller")
        if msg.get(Tag.CAR_ID) != self.car_id.encode():
            raise ProtocolAbort(Reason.CAR_MISMATCH)
        self.m_mnf = msg
        return None

    def _advance(self, out):
        if self.expect == 2:
            self.expect = 3
        else:
            self.done = True

    def _step3(self, msg: WireMessage) -> WireMessage:
        if not msg.get(Tag.OWNER_DATA):
            raise ProtocolAbort(Reason.MALFORMED, "owner legal data missing")
        out = self._msg(4, [(Tag.PSEUDONYM, msg.get(Tag.PSEUDONYM)), (Tag.T_START, msg.get(Tag.T_START)),
                            (Tag.T_STOP, msg.get(Tag.T_STOP)), (Tag.SELLER, self.seller.identity.encode()),
                            (Tag.EMBEDDED, encode(self.m_mnf)), (Tag.TIMESTAMP, self._ts())])
        self.result = msg.get(Tag.PSEUDONYM).decode()
        return self._ibs_sign(self.seller.key, out)


class ManufacturerSetRoot(Engine):
    procedure = Procedure.SET_ROOT

    def __init__(self, manufacturer: Principal, rng: Rng, clock: Callable[[], float],
                 authorized_sellers: set[str] | None = None, cars: set[str] | None = None):
        super().__init__(rng, clock)
        self.manufacturer = manufacturer
        self.authorized_sellers = authorized_sellers
        self.cars = cars

    def _step1(self, msg: WireMessage) -> WireMessage:
        seller = msg.get(Tag.SELLER).decode()
        self._ibs_check(self.manufacturer.params, seller, msg)
        self._fresh(msg)
        if msg.get(Tag.MANUFACTURER) != self.manufacturer.identity.encode():
            raise ProtocolAbort(Reason.MALFORMED, "request addressed to another manufacturer")
        if self.authorized_sellers is not None and seller not in self.authorized_sellers:
            raise ProtocolAbort(Reason.NOT_AUTHORIZED, "unknown seller")
        if self.cars is not None and msg.get(Tag.CAR_ID).decode() not in self.cars:
            raise ProtocolAbort(Reason.CAR_MISMATCH, "car not produced by this manufacturer")
        out = self._msg(2, [(Tag.ACT, ACT_SELL), (Tag.SELLER, seller.encode()),
                            (Tag.CAR_ID, msg.get(Tag.CAR_ID)), (Tag.TIMESTAMP, self._ts())])
        self.done = True
        return self._ibs_sign(self.manufacturer.key, out)


class OwnerSetRoot(Engine):
    procedure = Procedure.SET_ROOT

    def __init__(self, owner: OwnerState, owner_data: bytes, rng: Rng, clock: Callable[[], float],
                 t_start: float | None = None):
        super().__init__(rng, clock)
        self.owner, self.owner_data = owner, owner_data
        self.t_start = self._now() if t_start is None else t_start

    def start(self) -> WireMessage:
        self.done = True
        return self._msg(3, [(Tag.OWNER_DATA, self.owner_data), (Tag.PSEUDONYM, self.owner.identity.encode()),
                             (Tag.T_START, timestamp(self.t_start)), (Tag.T_STOP, timestamp(None))])


class CarSetRoot(CarEngine):
    procedure = Procedure.SET_ROOT
    first_step = 4

    def _step4(self, msg: WireMessage) -> None:
        self._require_init()
        car = self.car
        if car.owner is not None:
            raise ProtocolAbort(Reason.OWNER_ALREADY_SET)
        m_mnf = decode(msg.get(Tag.EMBEDDED))
        if (m_mnf.procedure, m_mnf.step) != (Procedure.SET_ROOT, 2):
            raise ProtocolAbort(Reason.MALFORMED, "embedded frame is not a manufacturer authorization")
        self._ibs_check(car.params, car.manufacturer_id, m_mnf)
        seller = msg.get(Tag.SELLER).decode()
        self._ibs_check(car.params, seller, msg)
        self._fresh(msg)
        if m_mnf.get(Tag.ACT) != ACT_SELL or m_mnf.get(Tag.SELLER) != seller.encode():
            raise ProtocolAbort(Reason.MALFORMED, "authorization names another seller")
        if m_mnf.get(Tag.CAR_ID) != car.car_id.encode():
            raise ProtocolAbort(Reason.CAR_MISMATCH)
        t_start, t_stop = read_timestamp(msg.get(Tag.T_START)), read_timestamp(msg.get(Tag.T_STOP))
        car.owner = msg.get(Tag.PSEUDONYM).decode()
        car.owner_window = (t_start, t_stop)
        car.seller_id = seller
        car.revocations.root = car.owner
        self.result = car.owner
        return None


# ---------------------------------------------------------------- upload role public keys

class OwnerUpload(Engine):
    procedure = Procedure.UPLOAD_GPK

    def __init__(self, owner: OwnerState, car_id: str, role: str, gpk: GroupPublicKey, rng: Rng,
                 clock: Callable[[], float], t_start: float | None = None):
        super().__init__(rng, clock)
        self.owner, self.car_id, self.role, self.gpk = owner, car_id, role, gpk
        self.t_start = t_start
        self.n_own = self._nonce()
        self.m3: WireMessage | None = None

    def start(self) -> WireMessage:
        out = self._msg(1, [(Tag.NONCE_OWN, self.n_own), (Tag.PSEUDONYM, self.owner.identity.encode()),
                            (Tag.CAR_ID, self.car_id.encode()), (Tag.TIMESTAMP, self._ts())])
        self.expect = 2
        return self._ibs_sign(self.owner.key, out)

    def _step2(self, msg: WireMessage) -> WireMessage:
        self._ibs_check(self.owner.params, self.car_id, msg)
        self._fresh(msg)
        if msg.get(Tag.NONCE_OWN) != self.n_own:
            raise ProtocolAbort(Reason.BAD_NONCE)
        t_start = self._now() if self.t_start is None else self.t_start
        out = self._msg(3, [(Tag.NONCE_OWN, self.n_own), (Tag.NONCE_CAR, msg.get(Tag.NONCE_CAR)),
                            (Tag.ROLE, self.role.encode()), (Tag.GPK, self.gpk.to_bytes()),
                            (Tag.T_START, timestamp(t_start)), (Tag.T_STOP, timestamp(None)),
                            (Tag.TIMESTAMP, self._ts())])
        self.m3 = self._ibs_sign(self.owner.key, out)
        return self.m3

    def _step4(self, msg: WireMessage) -> None:
        self._ibs_check(self.owner.params, self.car_id, msg)
        self._fresh(msg)
        if msg.get(Tag.ACT) != ACT_CONFIRM or msg.get(Tag.EMBEDDED) != encode(self.m3):
            raise ProtocolAbort(Reason.MALFORMED, "confirmation does not bind the upload")
        self.result = self.role
        return None


class CarUpload(CarEngine):
    procedure = Procedure.UPLOAD_GPK

    def __init__(self, car: CarState, rng: Rng, clock: Callable[[], float]):
        super().__init__(car, rng, clock)
        self.n_own = self.n_car = b""

    def _step1(self, msg: WireMessage) -> WireMessage:
        self._require_init()
        car = self.car
        self._ibs_check(car.params, msg.get(Tag.PSEUDONYM), msg)
        self._fresh(msg)
        if car.owner is None or msg.get(Tag.PSEUDONYM) != car.owner.encode():
            raise ProtocolAbort(Reason.NOT_ROOT)
        if msg.get(Tag.CAR_ID) != car.car_id.encode():
            raise ProtocolAbort(Reason.CAR_MISMATCH)
        self.n_own, self.n_car = msg.get(Tag.NONCE_OWN), self._nonce()
        out = self._msg(2, [(Tag.NONCE_OWN, self.n_own), (Tag.NONCE_CAR, self.n_car), (Tag.TIMESTAMP, self._ts())])
        return self._ibs_sign(car.key, out)

    def _step3(self, msg: WireMessage) -> WireMessage:
        car = self.car
        self._ibs_check(car.params, car.owner, msg)
        self._fresh(msg)
        if msg.get(Tag.NONCE_OWN) != self.n_own or msg.get(Tag.NONCE_CAR) != self.n_car:
            raise ProtocolAbort(Reason.BAD_NONCE)
        role = msg.get(Tag.ROLE).decode()
        if car.policy.role(role) is None:
            raise ProtocolAbort(Reason.UNKNOWN_ROLE, role)
        gpk = GroupPublicKey.from_bytes(msg.get(Tag.GPK))
        car.role_gpks[role] = RoleKey(gpk, read_timestamp(msg.get(Tag.T_START)), read_timestamp(msg.get(Tag.T_STOP)))
        self.result = role
        out = self._msg(4, [(Tag.ACT, ACT_CONFIRM), (Tag.EMBEDDED, encode(msg)), (Tag.TIMESTAMP, self._ts())])
        return self._ibs_sign(car.key, out)

    def _advance(self, out):
        super()._advance(out)
        if out is not None and out.step == 4:
            self.done = True


# ---------------------------------------------------------------- delegation

def _encode_token(kind: str, gpk: GroupPublicKey | None = None, member: GroupMemberKey | None = None,
                  credential: bytes = b"", owner_sig: bytes = b"") -> bytes:
    if kind == PERSISTENT:
        return encode_record(REC_TOKEN_P, [(1, gpk.to_bytes()), (2, member.to_bytes())])
    return encode_record(REC_TOKEN_E, [(1, credential), (2, owner_sig)])


class UserDelegate(Engine):
    procedure = Procedure.DELEGATE

    def __init__(self, user: UserState, owner_gpk: GroupPublicKey, kind: str, role: str, rng: Rng,
                 clock: Callable[[], float], attrs: dict | None = None, t_start: float | None = None,
                 t_stop: float | None = None, kem_kind: str = "dh", rsa_bits: int = 2048):
        super().__init__(rng, clock)
        if kind not in _KIND_BYTE:
            raise ValueError(f"unknown delegation kind {kind!r}")
        self.user, self.owner_gpk, self.kind, self.role = user, owner_gpk, kind, role
        self.attrs = dict(attrs or {})
        self.t_start = self._now() if t_start is None else t_start
        self.t_stop = t_stop
        self.kem_kind, self.rsa_bits = kem_kind, rsa_bits
        self.n_usr = self._nonce()
        self.kp: crypto.KemKeyPair | None = None
        self.m1 = self.m2 = None
        self.enc_token: bytes | None = None
        self.k_ses: SymmetricKey | None = None

    def start(self) -> WireMessage:
        self.kp = self._kem_keygen(self.kem_kind, self.rsa_bits)
        out = self._msg(1, [(Tag.PSEUDONYM, self.user.identity.encode()), (Tag.ROLE, self.role.encode()),
                            (Tag.ATTRS, encode_attrs(self.attrs)), (Tag.T_START, timestamp(self.t_start)),
                            (Tag.T_STOP, timestamp(self.t_stop)), (Tag.DELEG_KIND, _KIND_BYTE[self.kind]),
                            (Tag.EPK, self.kp.public_part), (Tag.NONCE_USR, self.n_usr),
                            (Tag.TIMESTAMP, self._ts())])
        self.m1 = self._ibs_sign(self.user.key, out)
        self.expect = 2
        return self.m1

    def _step2(self, msg: WireMessage) -> WireMessage:
        self._gs_check(self.owner_gpk, msg)
        self._fresh(msg)
        if msg.get(Tag.NONCE_USR) != self.n_usr:
            raise ProtocolAbort(Reason.BAD_NONCE)
        if msg.get(Tag.TRUNC) != trunc64(self.m1.auth.value):
            raise ProtocolAbort(Reason.TRUNCATION_MISMATCH)
        self.m2 = msg
        self.enc_token = msg.get(Tag.ENC_TOKEN)
        self.user.pending_tokens[self.role] = self.enc_token
        receipt = crypto.hash(encode(self.m1) + encode(msg))
        out = self._msg(3, [(Tag.RECEIPT, receipt), (Tag.TIMESTAMP, self._ts())])
        return self._ibs_sign(self.user.key, out)

    def _step4(self, msg: WireMessage) -> None:
        self.k_ses = self._decapsulate(self.kp, msg.get(Tag.KEM_CT))
        plain = self._decrypt(self.k_ses, self.enc_token)
        kind, f = decode_record(plain)
        if kind == REC_TOKEN_P and self.kind == PERSISTENT:
            gpk, member = GroupPublicKey.from_bytes(f[1]), GroupMemberKey.from_bytes(f[2])
            token = DelegationToken(PERSISTENT, self.role, self.user.identity, self.attrs, self.t_start,
                                    math.inf, gpk=gpk, member_key=member)
        elif kind == REC_TOKEN_E and self.kind == EPHEMERAL:
            cred = parse_credential(f[1])
            if cred["pseudonym"] != self.user.identity or cred["role"] != self.role:
                raise ProtocolAbort(Reason.BAD_CREDENTIAL, "credential issued for another request")
            self.ops["gs_verify"] += 1
            if not gs_verify(self.owner_gpk, f[1], f[2]):
                raise ProtocolAbort(Reason.BAD_CREDENTIAL)
            token = DelegationToken(EPHEMERAL, self.role, self.user.identity, cred["attrs"], cred["t_start"],
                                    cred["t_stop"], credential=f[1], owner_sig=f[2])
        else:
            raise ProtocolAbort(Reason.MALFORMED, "token kind differs from request")
        self.user.pending_tokens.pop(self.role, None)
        self.user.tokens[self.role] = token
        self.result = token
        return None


class OwnerDelegate(Engine):
    procedure = Procedure.DELEGATE

    def __init__(self, owner: OwnerState, rng: Rng, clock: Callable[[], float]):
        super().__init__(rng, clock)
        self.owner = owner
        self.m1 = self.m2 = None
        self.kem_ct = b""
        self.token: DelegationToken | None = None

    def _step1(self, msg: WireMessage) -> WireMessage:
        owner = self.owner
        pseudonym = msg.get(Tag.PSEUDONYM).decode()
        self._ibs_check(owner.params, pseudonym, msg)
        self._fresh(msg)
        kinds = {v: k for k, v in _KIND_BYTE.items()}
        kind = kinds.get(msg.get(Tag.DELEG_KIND))
        if kind is None:
            raise ProtocolAbort(Reason.MALFORMED, "unknown delegation kind")
        role = msg.get(Tag.ROLE).decode()
        if role == owner.OWNER_ROLE:
            raise ProtocolAbort(Reason.NOT_AUTHORIZED, "root role is not delegable")
        attrs = decode_attrs(msg.get(Tag.ATTRS))
        t_start, t_stop = read_timestamp(msg.get(Tag.T_START)), read_timestamp(msg.get(Tag.T_STOP))
        self._once(owner.seen_nonces, msg.get(Tag.NONCE_USR))
        k_ses, self.kem_ct = self._encapsulate(msg.get(Tag.EPK))
        if kind == PERSISTENT:
            group = owner.groups.get(role)
            if group is None:
                raise ProtocolAbort(Reason.UNKNOWN_ROLE, role)
            member = group.next_member()
            plain = _encode_token(PERSISTENT, group.gpk, member)
            self.token = DelegationToken(PERSISTENT, role, pseudonym, attrs, t_start, math.inf,
                                         gpk=group.gpk, member_key=member)
        else:
            if not t_start < t_stop < math.inf:
                raise ProtocolAbort(Reason.MALFORMED, "ephemeral delegation needs a finite window")
            cred = credential_bytes(pseudonym, role, attrs, t_start, t_stop)
            self.ops["gs_sign"] += 1
            sig = gs_sign(owner.signing_group.gpk, owner.signing_key, cred, self.rng)
            plain = _encode_token(EPHEMERAL, credential=cred, owner_sig=sig)
            self.token = DelegationToken(EPHEMERAL, role, pseudonym, attrs, t_start, t_stop,
                                         credential=cred, owner_sig=sig)
        self.m1 = msg
        out = self._msg(2, [(Tag.NONCE_OWN, self._nonce()), (Tag.NONCE_USR, msg.get(Tag.NONCE_USR)),
                            (Tag.ENC_TOKEN, self._encrypt(k_ses, plain)), (Tag.TRUNC, trunc64(msg.auth.value)),
                            (Tag.TIMESTAMP, self._ts())])
        self.m2 = self._gs_sign(owner.signing_group.gpk, owner.signing_key, out)
        return self.m2

    def _step3(self, msg: WireMessage) -> WireMessage:
        owner = self.owner
        self._ibs_check(owner.params, self.token.pseudonym, msg)
        self._fresh(msg)
        if msg.get(Tag.RECEIPT) != crypto.hash(encode(self.m1) + encode(self.m2)):
            raise ProtocolAbort(Reason.MALFORMED, "receipt does not cover the exchange")
        owner.receipts.append(encode(msg))
        owner.issued.append(self.token)
        if owner.revocations is not None:
            owner.revocations.register(self.token.pseudonym, owner.identity)
            owner.revocations.register(self.token.digest, owner.identity)
        self.result = self.token
        return self._msg(4, [(Tag.KEM_CT, self.kem_ct)])

    def _advance(self, out):
        super()._advance(out)
        if out is not None and out.step == 4:
            self.done = True


# ---------------------------------------------------------------- execute

class UserExecute(Engine):
    procedure = Procedure.EXECUTE

    def __init__(self, user: UserState, car_id: str, role: str, obj: str, action: str, rng: Rng,
                 clock: Callable[[], float], attrs: dict | None = None):
        super().__init__(rng, clock)
        self.user, self.car_id, self.role, self.obj, self.action = user, car_id, role, obj, action
        self.token = user.tokens.get(role)
        if self.token is None:
            raise ValueError(f"{user.identity} holds no token for role {role!r}")
        self.attrs = dict(self.token.attrs if attrs is None else attrs)
        self.m1: WireMessage | None = None
        self.session: SessionState | None = None

    def start(self) -> WireMessage:
        fields = [(Tag.NONCE_USR, self._nonce()), (Tag.ROLE, self.role.encode()),
                  (Tag.ATTRS, encode_attrs(self.attrs)), (Tag.TIMESTAMP, self._ts())]
        if self.token.kind == PERSISTENT:
            self.m1 = self._gs_sign(self.token.gpk, self.token.member_key, self._msg(1, fields))
        else:
            fields += [(Tag.CREDENTIAL, self.token.credential), (Tag.OWNER_SIG, self.token.owner_sig)]
            self.m1 = self._ibs_sign(self.user.key, self._msg(1, fields))
        self.expect = 2
        return self.m1

    def _step2(self, msg: WireMessage) -> WireMessage:
        self._ibs_check(self.user.params, self.car_id, msg)
        self._fresh(msg)
        if msg.get(Tag.TRUNC) != trunc64(self.m1.auth.value):
            raise ProtocolAbort(Reason.TRUNCATION_MISMATCH)
        k_ses, kem_ct = self._encapsulate(msg.get(Tag.EPK))
        payload = encode_fields([(Tag.ACT, encode_action(self.obj, self.action)),
                                 (Tag.TRUNC, trunc64(msg.auth.value))])
        out = self._msg(3, [(Tag.KEM_CT, kem_ct), (Tag.ENC_ACTION, self._encrypt(k_ses, payload))])
        self.session = SessionState(msg.get(Tag.SID), k_ses, self.role, self._now())
        self.user.sessions[self.car_id] = self.session
        self.result = self.session
        self.done = True
        return self._mac(k_ses, out)


class CarExecute(CarEngine):
    procedure = Procedure.EXECUTE

    def __init__(self, car: CarState, rng: Rng, clock: Callable[[], float]):
        super().__init__(car, rng, clock)
        self.role: str | None = None
        self.attrs: dict = {}
        self.kp: crypto.KemKeyPair | None = None
        self.sid = b""
        self.s_car = b""

    def _step1(self, msg: WireMessage) -> WireMessage:
        self._require_init()
        car, now = self.car, self._now()
        role = msg.get(Tag.ROLE).decode()
        if msg.auth is None:
            raise ProtocolAbort(Reason.BAD_SIGNATURE)
        if msg.auth.kind == AuthKind.GS:
            if msg.has(Tag.CREDENTIAL):
                raise ProtocolAbort(Reason.MALFORMED, "credential on a persistent request")
            rk = car.role_gpks.get(role)
            if rk is None:
                raise ProtocolAbort(Reason.UNKNOWN_ROLE, role)
            self._gs_check(rk.gpk, msg)
            if not rk.t_start <= now <= rk.t_stop:
                raise ProtocolAbort(Reason.EXPIRED, "role key outside its validity")
            attrs = decode_attrs(msg.get(Tag.ATTRS))
        else:
            if not msg.has(Tag.CREDENTIAL):
                raise ProtocolAbort(Reason.BAD_CREDENTIAL, "ephemeral request without credential")
            owner_key = car.role_gpks.get(ROOT_ROLE)
            if owner_key is None:
                raise ProtocolAbort(Reason.BAD_CREDENTIAL, "no owner group key installed")
            credential, owner_sig = msg.get(Tag.CREDENTIAL), msg.get(Tag.OWNER_SIG)
            self.ops["gs_verify"] += 1
            if not gs_verify(owner_key.gpk, credential, owner_sig):
                raise ProtocolAbort(Reason.BAD_CREDENTIAL)
            cred = parse_credential(credential)
            if cred["role"] != role:
                raise ProtocolAbort(Reason.ROLE_MISMATCH)
            self._ibs_check(car.params, cred["pseudonym"], msg)
            if not cred["t_start"] <= now <= cred["t_stop"]:
                raise ProtocolAbort(Reason.EXPIRED)
            if car.revocations.is_revoked(cred["pseudonym"], now) or car.revocations.is_revoked(
                    token_digest(credential, owner_sig), now):
                raise ProtocolAbort(Reason.REVOKED)
            attrs = cred["attrs"]
        self._fresh(msg)
        if car.policy.role(role) is None:
            raise ProtocolAbort(Reason.UNKNOWN_ROLE, role)
        self._once(car.seen_nonces, msg.get(Tag.NONCE_USR))
        self.role, self.attrs = role, attrs
        self.kp = self._kem_keygen(car.kem_kind, car.rsa_bits)
        self.sid = self.rng.bytes(SID_LEN)
        while self.sid in car.sessions:
            self.sid = self.rng.bytes(SID_LEN)
        out = self._msg(2, [(Tag.EPK, self.kp.public_part), (Tag.NONCE_CAR, self._nonce()), (Tag.SID, self.sid),
                            (Tag.TRUNC, trunc64(msg.auth.value)), (Tag.TIMESTAMP, self._ts())])
        out = self._ibs_sign(car.key, out)
        self.s_car = out.auth.value
        return out

    def _step3(self, msg: WireMessage) -> None:
        car, now = self.car, self._now()
        k_ses = self._decapsulate(self.kp, msg.get(Tag.KEM_CT))
        self._mac_check(k_ses, msg)
        payload = dict(decode_fields(self._decrypt(k_ses, msg.get(Tag.ENC_ACTION))))
        if payload.get(Tag.TRUNC) != trunc64(self.s_car):
            raise ProtocolAbort(Reason.TRUNCATION_MISMATCH)
        obj, action = decode_action(payload.get(Tag.ACT, b""))
        decision = policy_check(car.policy, self.role, obj, action, self.attrs, now)
        if not decision:
            raise ProtocolAbort(Reason.POLICY_DENY, decision.reason)
        car.executed.append(ExecutedAction(now, "execute", self.role, obj, action, self.sid))
        car.sessions[self.sid] = SessionState(self.sid, k_ses, self.role, now, car.session_lifetime, self.attrs)
        self.result = (obj, action)
        return None


# ---------------------------------------------------------------- execute on the fly

class UserOtf(Engine):
    procedure = Procedure.EXECUTE_OTF

    def __init__(self, session: SessionState, obj: str, action: str, rng: Rng, clock: Callable[[], float]):
        super().__init__(rng, clock)
        self.session, self.obj, self.action = session, obj, action
        self.m1: WireMessage | None = None

    def start(self) -> WireMessage:
        k = self.session.k_ses
        payload = encode_fields([(Tag.SID, self.session.sid), (Tag.ACT, encode_action(self.obj, self.action))])
        out = self._msg(1, [(Tag.SID, self.session.sid), (Tag.ENC_ACTION, self._encrypt(k, payload))])
        self.m1 = self._mac(k, out)
        self.expect = 2
        return self.m1

    def _step2(self, msg: WireMessage) -> WireMessage:
        k = self.session.k_ses
        self._mac_check(k, msg)
        if msg.get(Tag.TRUNC) != trunc64(self.m1.auth.value):
            raise ProtocolAbort(Reason.TRUNCATION_MISMATCH)
        self.done = True
        self.result = (self.obj, self.action)
        return self._mac(k, self._msg(3, [(Tag.PREV_MAC, msg.auth.value)]))


class CarOtf(CarEngine):
    procedure = Procedure.EXECUTE_OTF

    def __init__(self, car: CarState, rng: Rng, clock: Callable[[], float]):
        super().__init__(car, rng, clock)
        self.session: SessionState | None = None
        self.request: tuple[str, str] | None = None
        self.s_car = b""

    def _step1(self, msg: WireMessage) -> WireMessage:
        self._require_init()
        session = self.car.sessions.get(msg.get(Tag.SID))
        if session is None:
            raise ProtocolAbort(Reason.UNKNOWN_SESSION)
        if not session.valid_at(self._now()):
            raise ProtocolAbort(Reason.SESSION_EXPIRED)
        self._mac_check(session.k_ses, msg)
        payload = dict(decode_fields(self._decrypt(session.k_ses, msg.get(Tag.ENC_ACTION))))
        if payload.get(Tag.SID) != session.sid:
            raise ProtocolAbort(Reason.MALFORMED, "request bound to another session")
        self.request = decode_action(payload.get(Tag.ACT, b""))
        self.session = session
        out = self._mac(session.k_ses, self._msg(2, [(Tag.NONCE_CAR, self._nonce()),
                                                     (Tag.TRUNC, trunc64(msg.auth.value))]))
        self.s_car = out.auth.value
        return out

    def _step3(self, msg: WireMessage) -> None:
        car, session, now = self.car, self.session, self._now()
        self._mac_check(session.k_ses, msg)
        if msg.get(Tag.PREV_MAC) != self.s_car:
            raise ProtocolAbort(Reason.BAD_NONCE, "response does not answer this challenge")
        if not session.valid_at(now):
            raise ProtocolAbort(Reason.SESSION_EXPIRED)
        obj, action = self.request
        decision = policy_check(car.policy, session.role, obj, action, session.attrs, now)
        if not decision:
            raise ProtocolAbort(Reason.POLICY_DENY, decision.reason)
        car.executed.append(ExecutedAction(now, "execute-otf", session.role, obj, action, session.sid))
        self.result = (obj, action)
        return None

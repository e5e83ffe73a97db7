"""Long-lived state held by each party, plus abort reasons and the revocation list."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

from .. import crypto
from ..crypto import SymmetricKey
from ..groupsig import GroupManagerKey, GroupMemberKey, GroupPublicKey, gs_gen
from ..ibs import IbsMasterKey, IbsParams, IbsPublicParams, IbsUserKey, ibs_keyder, ibs_setup
from ..policy import PermissionTable
from ..rng import Rng

SKEW_SECONDS = 120
SID_LEN = 8
NONCE_LEN = 16
DEFAULT_SESSION_LIFETIME = 3600.0


class Reason(str, enum.Enum):
    ALREADY_INITIALIZED = "already-initialized"
    NOT_INITIALIZED = "not-initialized"
    UNTRUSTED_CHANNEL = "untrusted-channel"
    OWNER_ALREADY_SET = "owner-already-set"
    BAD_SIGNATURE = "bad-signature"
    BAD_CREDENTIAL = "bad-credential"
    BAD_MAC = "bad-mac"
    BAD_NONCE = "bad-nonce"
    STALE_TIMESTAMP = "stale-timestamp"
    TRUNCATION_MISMATCH = "truncation-mismatch"
    CAR_MISMATCH = "car-mismatch"
    NOT_ROOT = "not-root"
    UNKNOWN_ROLE = "unknown-role"
    ROLE_MISMATCH = "role-mismatch"
    EXPIRED = "expired"
    REVOKED = "revoked"
    POLICY_DENY = "policy-deny"
    UNKNOWN_SESSION = "unknown-session"
    SESSION_EXPIRED = "session-expired"
    DECRYPT_FAILED = "decrypt-failed"
    MALFORMED = "malformed"
    UNEXPECTED = "unexpected-message"
    NOT_AUTHORIZED = "not-authorized"


class ProtocolAbort(Exception):
    """Raised by an engine; the reason stays local, the peer just sees the exchange end."""

    def __init__(self, reason: Reason, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)


class RevocationError(Exception):
    pass


def encode_attrs(attrs: dict | None) -> bytes:
    return json.dumps(attrs or {}, sort_keys=True, separators=(",", ":")).encode()


def decode_attrs(data: bytes) -> dict:
    try:
        attrs = json.loads(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolAbort(Reason.MALFORMED, "attributes not decodable") from exc
    if not isinstance(attrs, dict) or not all(
            isinstance(v, (bool, int, float)) or v is None for v in attrs.values()):
        raise ProtocolAbort(Reason.MALFORMED, "attribute values must be number, boolean or null")
    return attrs


def token_digest(credential: bytes, owner_sig: bytes) -> bytes:
    """Revocation handle for an ephemeral credential."""
    return crypto.hash(b"token|" + credential + owner_sig)


class Clock:
    """Settable wall clock in seconds; engines call it to read the time."""

    def __init__(self, start: float = 1_700_000_000.0):
        self.now = float(start)

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds

    def skewed(self, offset: float) -> "SkewedClock":
        return SkewedClock(self, offset)


class SkewedClock:
    """View of another clock shifted by a fixed offset."""

    def __init__(self, base: Clock, offset: float):
        self.base, self.offset = base, offset

    def __call__(self) -> float:
        return self.base() + self.offset


def _target(value: bytes | str) -> bytes:
    return value.encode() if isinstance(value, str) else bytes(value)


@dataclass(frozen=True)
class Revocation:
    target: bytes
    time: float
    authority: str


class RevocationList:
    """Append-only list of revoked pseudonyms and token digests."""

    def __init__(self, root: str | None = None):
        self.root = root
        self._entries: list[Revocation] = []
        self._delegators: dict[bytes, str] = {}

    @property
    def entries(self) -> tuple[Revocation, ...]:
        return tuple(self._entries)

    def register(self, target: bytes | str, delegator: str) -> None:
        self._delegators.setdefault(_target(target), delegator)

    def revoke(self, authority: str, target: bytes | str, now: float) -> "RevocationList":
        t = _target(target)
        if authority != self.root and self._delegators.get(t) != authority:
            raise RevocationError(f"{authority!r} may not revoke this target")
        self._entries.append(Revocation(t, now, authority))
        return self

    def is_revoked(self, target: bytes | str, now: float) -> bool:
        t = _target(target)
        return any(e.target == t and e.time <= now for e in self._entries)


# ---------------------------------------------------------------- parties

class Authority:
    """IBS key-generation authority; the master key never leaves this object."""

    def __init__(self, params: IbsParams, rng: Rng):
        self._msk: IbsMasterKey
        self._msk, self.public = ibs_setup(params, rng)

    @classmethod
    def from_master(cls, msk: IbsMasterKey) -> "Authority":
        self = cls.__new__(cls)
        self._msk, self.public = msk, msk.public
        return self

    def issue(self, identity: str) -> IbsUserKey:
        return ibs_keyder(self._msk, identity)


@dataclass
class Principal:
    identity: str
    key: IbsUserKey
    params: IbsPublicParams


@dataclass
class RoleKey:
    gpk: GroupPublicKey
    t_start: float
    t_stop: float = math.inf


@dataclass
class RoleGroup:
    gpk: GroupPublicKey
    gmsk: GroupManagerKey
    members: list[GroupMemberKey]
    issued: int = 0

    def next_member(self) -> GroupMemberKey:
        if self.issued >= len(self.members):
            raise ProtocolAbort(Reason.NOT_AUTHORIZED, "no unissued member keys left in group")
        key = self.members[self.issued]
        self.issued += 1
        return key


@dataclass
class OwnerState(Principal):
    backend: str = "reference"
    groups: dict[str, RoleGroup] = field(default_factory=dict)
    receipts: list[bytes] = field(default_factory=list)
    issued: list["DelegationToken"] = field(default_factory=list)
    revocations: RevocationList | None = None
    seen_nonces: set[bytes] = field(default_factory=set)

    OWNER_ROLE = "Owner"

    def create_group(self, role: str, n: int, rng: Rng) -> RoleGroup:
        gpk, gmsk, members = gs_gen(n, rng, self.backend)
        group = RoleGroup(gpk, gmsk, members)
        if role == self.OWNER_ROLE:
            group.issued = 1  # member 1 is the owner's own signing key
        self.groups[role] = group
        return group

    @property
    def signing_group(self) -> RoleGroup:
        return self.groups[self.OWNER_ROLE]

    @property
    def signing_key(self) -> GroupMemberKey:
        return self.groups[self.OWNER_ROLE].members[0]


@dataclass(frozen=True)
class DelegationToken:
    kind: str                    # "persistent" | "ephemeral"
    role: str
    pseudonym: str
    attrs: dict
    t_start: float
    t_stop: float
    gpk: GroupPublicKey | None = None
    member_key: GroupMemberKey | None = None
    credential: bytes = b""
    owner_sig: bytes = b""

    @property
    def digest(self) -> bytes:
        if self.kind == "ephemeral":
            return token_digest(self.credential, self.owner_sig)
        return crypto.hash(b"token|" + self.gpk.to_bytes() + self.member_key.to_bytes())


@dataclass
class SessionState:
    sid: bytes
    k_ses: SymmetricKey
    role: str
    established_at: float
    lifetime: float = DEFAULT_SESSION_LIFETIME
    attrs: dict = field(default_factory=dict)

    def valid_at(self, now: float) -> bool:
        return now < self.established_at + self.lifetime


@dataclass
class UserState(Principal):
    tokens: dict[str, DelegationToken] = field(default_factory=dict)
    sessions: dict[str, SessionState] = field(default_factory=dict)  # by car id
    pending_tokens: dict[str, bytes] = field(default_factory=dict)   # encrypted tokens awaiting key


@dataclass(frozen=True)
class ExecutedAction:
    time: float
    procedure: str
    role: str
    obj: str
    action: str
    sid: bytes


@dataclass
class CarState:
    car_id: str | None = None
    key: IbsUserKey | None = None
    params: IbsPublicParams | None = None
    manufacturer_id: str | None = None
    seller_id: str | None = None
    policy: PermissionTable | None = None
    owner: str | None = None
    owner_window: tuple[float, float] | None = None
    role_gpks: dict[str, RoleKey] = field(default_factory=dict)
    sessions: dict[bytes, SessionState] = field(default_factory=dict)
    revocations: RevocationList = field(default_factory=RevocationList)
    executed: list[ExecutedAction] = field(default_factory=list)
    aborts: list[tuple[str, Reason]] = field(default_factory=list)
    seen_nonces: set[bytes] = field(default_factory=set)
    kem_kind: str = "dh"
    rsa_bits: int = 2048
    session_lifetime: float = DEFAULT_SESSION_LIFETIME

    @property
    def initialized(self) -> bool:
        return self.car_id is not None

    @property
    def state(self) -> str:
        """Name of the most recent executed object, or 'idle'."""
        return self.executed[-1].obj if self.executed else "idle"

"""Role/attribute access control over vehicle functions.

Policy documents are line oriented::

    # comment
    role Owner root
    role Driver
    object Engine: Start Engine
    Driver; Start Engine; --e
    Valet; Body; --e; time[1700000000,inf], has_license=true, distance[0,500]?

``role`` and ``object`` lines declare names; every other non-blank line is an
entry ``role; target; rwe[; constraint, ...]`` where the target is an object
or a macro-object (Engine, Chassis, Body, Infotainment).  Macro entries apply
to every object below the macro unless the role has an explicit entry for
that object.  Constraints:

``time[a,b]``      ``now`` must lie in [a, b] (``inf`` allowed)
``name=true``      boolean attribute must equal the literal
``name[lo,hi]``    numeric attribute must lie in [lo, hi]

A trailing ``?`` marks a constraint optional: an absent or ``None`` (not
applicable) attribute then satisfies it.  Otherwise a missing attribute fails.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping

MACROS = ("Engine", "Chassis", "Body", "Infotainment")
ACTIONS = ("r", "w", "e")
ROOT_ROLE = "Owner"


class PolicyError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line, self.column = line, column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}" if line else message)


class VinError(ValueError):
    pass


def _key(name: str) -> str:
    return " ".join(name.split()).casefold()


@dataclass(frozen=True)
class Role:
    name: str
    root: bool = False


@dataclass(frozen=True)
class VehicleObject:
    macro: str
    name: str


@dataclass(frozen=True)
class AttributeValue:
    name: str
    value: float | bool | None


@dataclass(frozen=True)
class ActionSet:
    r: bool = False
    w: bool = False
    e: bool = False

    @classmethod
    def parse(cls, text: str) -> "ActionSet":
        if not re.fullmatch(r"[r-][w-][e-]", text):
            raise ValueError(f"bad action flags {text!r}; expected e.g. 'rw-' or '--e'")
        return cls(text[0] == "r", text[1] == "w", text[2] == "e")

    @classmethod
    def from_bits(cls, bits: int) -> "ActionSet":
        return cls(bool(bits & 4), bool(bits & 2), bool(bits & 1))

    @property
    def bits(self) -> int:
        return self.r << 2 | self.w << 1 | self.e

    def grants(self, action: str) -> bool:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        return getattr(self, action)

    def render(self) -> str:
        return ("r" if self.r else "-") + ("w" if self.w else "-") + ("e" if self.e else "-")

    __str__ = render


NONE = ActionSet()


@dataclass(frozen=True)
class Constraint:
    kind: str          # "time" | "flag" | "range"
    name: str
    low: float = -math.inf
    high: float = math.inf
    flag: bool = True
    optional: bool = False

    def check(self, attrs: Mapping[str, object], now: float) -> str | None:
        """None if satisfied, else a short reason."""
        if self.kind == "time":
            return None if self.low <= now <= self.high else "time-window"
        value = attrs.get(self.name)
        if value is None:
            return None if self.optional else "attribute"
        if self.kind == "flag":
            return None if isinstance(value, bool) and value == self.flag else "attribute"
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return "attribute"
        return None if self.low <= value <= self.high else "attribute"

    def render(self) -> str:
        opt = "?" if self.optional else ""
        if self.kind == "flag":
            return f"{self.name}={'true' if self.flag else 'false'}{opt}"
        return f"{self.name}[{_num(self.low)},{_num(self.high)}]{opt}"


def _num(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return str(int(x)) if float(x).is_integer() else str(x)


@dataclass(frozen=True)
class Entry:
    actions: ActionSet
    constraints: tuple[Constraint, ...] = ()


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.allowed

    def __str__(self) -> str:
        return "Allow" if self.allowed else f"Deny({self.reason})"


ALLOW = Decision(True)


@dataclass
class PermissionTable:
    roles: dict[str, Role] = field(default_factory=dict)
    objects: dict[str, VehicleObject] = field(default_factory=dict)
    entries: dict[tuple[str, str], Entry] = field(default_factory=dict)

    def role(self, name: str) -> Role | None:
        return self.roles.get(_key(name))

    def object(self, name: str) -> VehicleObject | None:
        return self.objects.get(_key(name))

    @property
    def root(self) -> Role | None:
        return next((r for r in self.roles.values() if r.root), None)

    def resolve(self, role: str, obj: str) -> Entry | None:
        """Explicit object entry wins over the macro-level one."""
        o = self.object(obj)
        if o is None:
            return None
        entry = self.entries.get((_key(role), _key(o.name)))
        if entry is None:
            entry = self.entries.get((_key(role), _key(o.macro)))
        return entry

    def rights(self, role: str, obj: str) -> ActionSet:
        entry = self.resolve(role, obj)
        return entry.actions if entry else NONE

    def expanded(self) -> "PermissionTable":
        """Same policy with every macro entry pushed down to its objects."""
        out = PermissionTable(dict(self.roles), dict(self.objects), {})
        for rk in self.roles:
            for ok, o in self.objects.items():
                entry = self.resolve(rk, o.name)
                if entry is not None:
                    out.entries[(rk, ok)] = entry
        return out

    def matrix(self) -> list[list[str]]:
        return [[self.rights(r.name, o.name).render() for r in self.roles.values()] for o in self.objects.values()]

    def render(self) -> str:
        roles = [r.name for r in self.roles.values()]
        width = max([len(o.name) for o in self.objects.values()] + [6])
        lines = [" " * width + "  " + " ".join(f"{r[:13]:>13}" for r in roles)]
        for o, row in zip(self.objects.values(), self.matrix()):
            lines.append(f"{o.name:<{width}}  " + " ".join(f"{c:>13}" for c in row))
        return "\n".join(lines)

    def to_text(self) -> str:
        out = [f"role {r.name}{' root' if r.root else ''}" for r in self.roles.values()]
        out += [f"object {o.macro}: {o.name}" for o in self.objects.values()]
        names = {**{_key(m): m for m in MACROS}, **{k: o.name for k, o in self.objects.items()}}
        for (rk, tk), e in self.entries.items():
            line = f"{self.roles[rk].name}; {names[tk]}; {e.actions.render()}"
            if e.constraints:
                line += "; " + ", ".join(c.render() for c in e.constraints)
            out.append(line)
        return "\n".join(out) + "\n"


_FLAG = re.compile(r"^([A-Za-z_][\w]*)\s*=\s*(true|false)(\?)?$")
_RANGE = re.compile(r"^([A-Za-z_][\w]*)\s*\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\](\?)?$")
_SPLIT = re.compile(r",(?![^\[]*\])")


def _parse_number(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "∞"):
        return math.inf
    if t == "-inf":
        return -math.inf
    return float(t)


def _parse_constraint(text: str) -> Constraint:
    m = _FLAG.match(text)
    if m:
        return Constraint("flag", m.group(1), flag=m.group(2) == "true", optional=bool(m.group(3)))
    m = _RANGE.match(text)
    if m:
        lo, hi = _parse_number(m.group(2)), _parse_number(m.group(3))
        if lo > hi:
            raise ValueError(f"empty range in {text!r}")
        kind = "time" if m.group(1) == "time" else "range"
        return Constraint(kind, m.group(1), lo, hi, optional=bool(m.group(4)))
    raise ValueError(f"unrecognised constraint {text!r}")


def policy_load(document: bytes | str) -> PermissionTable:
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    table = PermissionTable()
    macro_keys = {_key(m): m for m in MACROS}
    for lineno, raw in enumerate(document.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip()) + 1
        body = line.strip()
        if body.startswith("role ") and ";" not in body:
            parts = body.split()
            if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] != "root"):
                raise PolicyError("expected 'role <Name> [root]'", lineno, col)
            k = _key(parts[1])
            if k in table.roles:
                raise PolicyError(f"duplicate role {parts[1]!r}", lineno, col)
            if len(parts) == 3 and table.root is not None:
                raise PolicyError("only one root role allowed", lineno, col)
            table.roles[k] = Role(parts[1], len(parts) == 3)
            continue
        if body.startswith("object ") and ";" not in body:
            macro, sep, name = body[len("object "):].partition(":")
            name = " ".join(name.split())
            if not sep or not name:
                raise PolicyError("expected 'object <Macro>: <Name>'", lineno, col)
            if _key(macro) not in macro_keys:
                raise PolicyError(f"unknown macro-object {macro.strip()!r}", lineno, col + len("object "))
            if _key(name) in table.objects or _key(name) in macro_keys:
                raise PolicyError(f"duplicate object {name!r}", lineno, col)
            table.objects[_key(name)] = VehicleObject(macro_keys[_key(macro)], name)
            continue
        parts = [p.strip() for p in body.split(";")]
        if len(parts) not in (3, 4):
            raise PolicyError("expected 'role; object; rwe[; constraints]'", lineno, col)
        role, target, flags = parts[:3]
        if _key(role) not in table.roles:
            raise PolicyError(f"unknown role {role!r}", lineno, col)
        tk = _key(target)
        if tk not in table.objects and tk not in macro_keys:
            raise PolicyError(f"unknown object {target!r}", lineno, line.index(target) + 1)
        try:
            actions = ActionSet.parse(flags)
        except ValueError as exc:
            raise PolicyError(str(exc), lineno, line.index(flags) + 1) from None
        constraints = []
        if len(parts) == 4 and parts[3]:
            # commas inside [lo,hi] do not separate constraints
            for item in _SPLIT.split(parts[3]):
                item = item.strip()
                try:
                    constraints.append(_parse_constraint(item))
                except ValueError as exc:
                    raise PolicyError(str(exc), lineno, max(line.find(item), 0) + 1) from None
        key = (_key(role), tk)
        if key in table.entries:
            raise PolicyError(f"duplicate entry for ({role}, {target})", lineno, col)
        table.entries[key] = Entry(actions, tuple(constraints))
    return table


def default_policy_text() -> str:
    """The shipped role-rights fixture (six roles by seventeen objects)."""
    return resources.files("caraccess").joinpath("data/rights.policy").read_text(encoding="utf-8")


def load_default_policy() -> PermissionTable:
    return policy_load(default_policy_text())


def _attr_map(attributes) -> dict[str, object]:
    if attributes is None:
        return {}
    if isinstance(attributes, Mapping):
        return dict(attributes)
    return {a.name: a.value for a in attributes}


def policy_check(table: PermissionTable, role: str, obj: str, action: str,
                 attributes: Mapping[str, object] | Iterable[AttributeValue] | None = None,
                 now: float = 0.0) -> Decision:
    if table.role(role) is None:
        return Decision(False, "unknown-role")
    if table.object(obj) is None:
        return Decision(False, "unknown-object")
    if action not in ACTIONS:
        return Decision(False, "unknown-action")
    entry = table.resolve(role, obj)
    if entry is None or not entry.actions.grants(action):
        return Decision(False, "action-not-granted")
    attrs = _attr_map(attributes)
    for c in entry.constraints:
        reason = c.check(attrs, now)
        if reason:
            return Decision(False, reason)
    return ALLOW


_VIN = re.compile(r"[A-HJ-NPR-Z0-9]{17}")


def validate_vin(text: str) -> str:
    """Syntactic VIN check: 17 characters, letters I, O and Q excluded; returns it uppercased."""
    vin = text.strip().upper()
    if len(vin) != 17:
        raise VinError(f"VIN must have 17 characters, got {len(vin)}")
    if not _VIN.fullmatch(vin):
        bad = sorted({c for c in vin if not re.fullmatch(r"[A-HJ-NPR-Z0-9]", c)})
        raise VinError(f"VIN contains forbidden characters {''.join(bad)!r}")
    return vin

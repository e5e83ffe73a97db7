"""Random legal protocol frames for codec property tests."""

from caraccess.rng import Rng
from caraccess.wire import SCHEMAS, AuthKind, WireMessage


def random_message(rng: Rng, max_len: int = 80) -> WireMessage:
    keys = sorted(SCHEMAS)
    proc, step = keys[rng.randbelow(len(keys))]
    layout, auths = SCHEMAS[(proc, step)]
    required = [t for t, opt in layout if not opt]
    optional = [t for t, opt in layout if opt]
    tags = required + (optional if optional and rng.randbelow(2) else [])
    fields = tuple((t, rng.bytes(rng.randbelow(max_len))) for t in tags)
    kinds = sorted(auths)
    kind = kinds[rng.randbelow(len(kinds))]
    msg = WireMessage(proc, step, fields)
    if kind != AuthKind.NONE:
        msg = msg.with_auth(kind, rng.bytes(1 + rng.randbelow(max_len)))
    return msg

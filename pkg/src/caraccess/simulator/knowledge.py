"""What a network adversary can derive from the frames it has seen.

Knowledge is a growing set of byte strings.  Closure rules:

* a decodable frame contributes every field value and its authenticator;
* embedded frames and fields-only records are projected recursively;
* any known 32-byte value is tried as a symmetric key against every known
  ciphertext, and successful plaintexts are projected in turn.

Nothing is ever removed, and ``closure`` iterates to a fixpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..crypto import KEY_LEN, CryptoError, SymmetricKey, sym_decrypt
from ..wire import Tag, WireError, decode, decode_fields

_MIN_CIPHERTEXT = 12 + 16  # nonce + tag


@dataclass
class AdversaryKnowledge:
    items: set[bytes] = field(default_factory=set)
    frames: list[bytes] = field(default_factory=list)
    keys: set[bytes] = field(default_factory=set)
    _tried: set[tuple[bytes, bytes]] = field(default_factory=set, repr=False)

    def knows(self, value: bytes) -> bool:
        return bytes(value) in self.items

    def snapshot(self) -> frozenset[bytes]:
        return frozenset(self.items)

    def learn_key(self, key: SymmetricKey | bytes) -> "AdversaryKnowledge":
        raw = key.value if isinstance(key, SymmetricKey) else bytes(key)
        self.keys.add(raw)
        self.items.add(raw)
        return adversary_closure(self)

    def field_values(self, tag: Tag) -> list[bytes]:
        """Values observed under ``tag`` in any decodable frame, in observation order."""
        out = []
        for frame in self.frames:
            try:
                msg = decode(frame)
            except WireError:
                continue
            out += [v for t, v in msg.fields if t == tag]
        return out


def _project(value: bytes, out: set[bytes]) -> None:
    """Add ``value`` and everything structurally inside it."""
    if value in out:
        return
    out.add(value)
    try:
        msg = decode(value)
    except WireError:
        msg = None
    if msg is not None:
        for _, v in msg.fields:
            _project(v, out)
        if msg.auth is not None:
            _project(msg.auth.value, out)
        return
    try:
        fields = decode_fields(value)
    except WireError:
        return
    if fields:
        for _, v in fields:
            _project(v, out)


def adversary_closure(knowledge: AdversaryKnowledge, new_frame: bytes | None = None) -> AdversaryKnowledge:
    """Add ``new_frame`` (if any) and saturate; mutates and returns ``knowledge``."""
    if new_frame is not None:
        new_frame = bytes(new_frame)
        knowledge.frames.append(new_frame)
        _project(new_frame, knowledge.items)
    while True:
        keys = [k for k in knowledge.items if len(k) == KEY_LEN] + sorted(knowledge.keys)
        candidates = [c for c in knowledge.items if len(c) >= _MIN_CIPHERTEXT]
        learned = set()
        for k in keys:
            key = SymmetricKey(k)
            for c in candidates:
                if (k, c) in knowledge._tried:
                    continue
                knowledge._tried.add((k, c))
                try:
                    plain = sym_decrypt(key, c)
                except CryptoError:
                    continue
                if plain not in knowledge.items:
                    learned.add(plain)
        if not learned:
            return knowledge
        for plain in learned:
            _project(plain, knowledge.items)

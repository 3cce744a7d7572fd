"""Sender key bookkeeping: key IDs, rotation policy and the key ring."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

from .crypto import HANDLE_SIZE, SENDER_KEY_SIZE, RandomSource, new_sender_key
from .errors import KeyConflictError, KeyIdError

SECONDS_PER_DAY = 86400
_KEY_ID = struct.Struct(">HH")


@dataclass(frozen=True, order=True)
class KeyId:
    """32-bit key identifier: UTC day since epoch (high 16 bits) and a per-day counter."""

    day: int
    counter: int

    def __post_init__(self):
        if not (0 <= self.day <= 0xFFFF and 0 <= self.counter <= 0xFFFF):
            raise KeyIdError(f"key ID fields out of range: day={self.day} counter={self.counter}")

    def to_bytes(self) -> bytes:
        return _KEY_ID.pack(self.day, self.counter)

    @classmethod
    def from_bytes(cls, data: bytes) -> KeyId:
        if len(data) != _KEY_ID.size:
            raise KeyIdError(f"key ID must be 4 bytes, got {len(data)}")
        return cls(*_KEY_ID.unpack(data))

    def __str__(self) -> str:
        return self.to_bytes().hex()


def new_key_id(now: float, last: KeyId | None = None) -> KeyId:
    """Next key ID for a sender whose previous ID was ``last``.

    Raises KeyIdError when the per-day counter would roll over or when the
    clock went backwards far enough that the result would not increase.
    """
    day = (int(now) // SECONDS_PER_DAY) & 0xFFFF
    if last is None or day > last.day:
        return KeyId(day, 0)
    if day < last.day:
        raise KeyIdError(f"clock regression: day {day} precedes last key ID day {last.day}")
    if last.counter == 0xFFFF:
        raise KeyIdError(f"key ID counter exhausted for day {day}")
    return KeyId(day, last.counter + 1)


@dataclass(frozen=True)
class RotationPolicy:
    rotate_after_sent: int = 16
    resend_after_total: int = 30
    history_batch: int = 32

    def __post_init__(self):
        for name in ("rotate_after_sent", "resend_after_total", "history_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


class DueActions(NamedTuple):
    rotate: bool
    resend: bool


def due_actions(sent_since_rotation: int, total_since_keyed: int, policy: RotationPolicy) -> DueActions:
    rotate = sent_since_rotation >= policy.rotate_after_sent
    resend = not rotate and total_since_keyed >= policy.resend_after_total
    return DueActions(rotate, resend)


class KeyRing:
    """Known sender keys, indexed by ``(participant handle, KeyId)``.

    ``own_current``/``own_previous`` hold the owner's latest two
    ``(KeyId, key)`` pairs; own keys are also stored in the main index.
    """

    def __init__(self, owner: bytes):
        if len(owner) != HANDLE_SIZE:
            raise ValueError("owner handle must be 8 bytes")
        self.owner = bytes(owner)
        self.entries: dict[tuple[bytes, KeyId], bytes] = {}
        self.own_current: tuple[KeyId, bytes] | None = None
        self.own_previous: tuple[KeyId, bytes] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, item: tuple[bytes, KeyId]) -> bool:
        return item in self.entries

    def record(self, participant: bytes, key_id: KeyId, key: bytes) -> bool:
        """Store a key; returns True if it was not known before.

        Re-recording the same key is a no-op. A different key under an
        existing ``(participant, key_id)`` raises KeyConflictError.
        """
        if len(key) != SENDER_KEY_SIZE:
            raise ValueError(f"sender key must be {SENDER_KEY_SIZE} bytes")
        slot = (bytes(participant), key_id)
        known = self.entries.get(slot)
        if known is not None:
            if known != key:
                raise KeyConflictError(
                    f"conflicting key for participant {participant.hex()} key ID {key_id}"
                )
            return False
        self.entries[slot] = bytes(key)
        return True

    def lookup(self, participant: bytes, key_id: KeyId) -> bytes | None:
        return self.entries.get((bytes(participant), key_id))

    def key_ids(self, participant: bytes) -> list[KeyId]:
        return sorted(kid for (p, kid) in self.entries if p == participant)

    def latest_own_id(self) -> KeyId | None:
        ids = self.key_ids(self.owner)
        return ids[-1] if ids else None

    def adopt_own(self, key_id: KeyId) -> None:
        """Make an already recorded own key the current one (used after seeding)."""
        key = self.lookup(self.owner, key_id)
        if key is None:
            raise KeyError(f"own key {key_id} not in ring")
        earlier = [k for k in self.key_ids(self.owner) if k < key_id]
        self.own_current = (key_id, key)
        self.own_previous = (earlier[-1], self.entries[(self.owner, earlier[-1])]) if earlier else None

    def rotate(self, now: float, rng: RandomSource = os.urandom) -> tuple[KeyId, bytes]:
        key_id = new_key_id(now, self.latest_own_id())
        key = new_sender_key(rng)
        self.record(self.owner, key_id, key)
        self.own_previous = self.own_current
        self.own_current = (key_id, key)
        return key_id, key

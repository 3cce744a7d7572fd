"""In-memory chat room with a single, server-assigned message order."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, TextIO

from .errors import TransportError


@dataclass(frozen=True)
class LoggedMessage:
    seq: int
    sender: bytes
    wire: bytes

    def to_line(self) -> str:
        return f"{self.seq} {self.sender.hex()} {self.wire.hex()}"

    @classmethod
    def from_line(cls, line: str) -> LoggedMessage:
        seq, sender, wire = line.split()
        return cls(int(seq), bytes.fromhex(sender), bytes.fromhex(wire))


Listener = Callable[[LoggedMessage], None]


class ChatRoom:
    """Append-only, totally ordered message log plus channel membership.

    Channel membership is independent of who participates in the encrypted
    session: members receive every message whether or not they can decrypt it.
    """

    def __init__(self, members: Iterable[bytes] = ()):
        self.log: list[LoggedMessage] = []
        self.members: set[bytes] = set(members)
        self._listeners: dict[bytes, Listener] = {}
        self._lock = threading.Lock()

    def set_members(self, members: Iterable[bytes]) -> None:
        self.members = set(members)

    def subscribe(self, member: bytes, listener: Listener) -> None:
        self._listeners[member] = listener

    def post(self, sender: bytes, wire: bytes) -> int:
        """Append ``wire`` and deliver it, in order, to every other current member."""
        with self._lock:
            if sender not in self.members:
                raise TransportError(f"{sender.hex()} is not a member of this room")
            entry = LoggedMessage(len(self.log), bytes(sender), bytes(wire))
            self.log.append(entry)
            for member in sorted(self.members):
                listener = self._listeners.get(member)
                if member != sender and listener is not None:
                    listener(entry)
        return entry.seq

    def fetch_history(self, before_seq: int | None = None, limit: int = 32) -> list[LoggedMessage]:
        """Up to ``limit`` messages preceding ``before_seq`` (default: the newest), oldest first."""
        if limit < 1:
            raise ValueError("limit must be >= 1")
        end = len(self.log) if before_seq is None else max(0, min(before_seq, len(self.log)))
        return self.log[max(0, end - limit) : end]

    def dump(self, out: TextIO) -> None:
        for entry in self.log:
            out.write(entry.to_line() + "\n")


def load_log(lines: Iterable[str]) -> list[LoggedMessage]:
    return [LoggedMessage.from_line(line) for line in lines if line.strip()]


def seed_from_room(session, room: ChatRoom, batch_size: int | None = None) -> tuple[bool, int]:
    """Feed history to ``session`` in adjoining batches, newest first.

    Stops as soon as the session reports its own latest key was found.
    Returns ``(found, batches_fetched)``.
    """
    size = batch_size or session.policy.history_batch
    before = None
    fetched = 0
    while True:
        batch = room.fetch_history(before, size)
        if not batch:
            return False, fetched
        fetched += 1
        if session.seed_from_history([(m.sender, m.wire) for m in batch]):
            return True, fetched
        before = batch[0].seq

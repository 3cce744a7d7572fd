"""Per-participant encryption handler.

A :class:`Session` builds outgoing keyed, followup and alter-participant
messages and consumes incoming ones, keeping track of everyone's sender keys
and of the group composition as seen by this participant.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import crypto
from .crypto import DhKeyPair, RandomSource, SignKeyPair
from .errors import (
    AuthenticityError,
    MembershipError,
    SessionError,
    StrongvelopeError,
    StructuralError,
    UnknownParticipantError,
)
from .keys import KeyId, KeyRing, RotationPolicy, due_actions
from .wire import (
    MessageType,
    ProtocolMessage,
    RecordType,
    TlvRecord,
    decode_message,
    encode_record,
    encode_records,
    signed_span,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PublicIdentity:
    """The public keys a participant publishes to everybody else."""

    sign_public: bytes
    dh_public: bytes


@dataclass(frozen=True)
class OutboundMessage:
    wire: bytes
    type: MessageType
    key_id: KeyId
    recipients: tuple[bytes, ...] = ()


@dataclass
class InboundResult:
    sender: bytes
    type: MessageType
    payload: bytes | None = None
    learned_keys: list[tuple[bytes, KeyId, bytes]] = field(default_factory=list)
    included: frozenset[bytes] = frozenset()
    excluded: frozenset[bytes] = frozenset()
    key_id: KeyId | None = None
    # message carried key material addressed to us (always True for followups)
    addressed: bool = True
    # set when the payload references a key we do not know
    missing_key: KeyId | None = None
    has_payload: bool = False

    @property
    def blind(self) -> bool:
        return not self.has_payload

    @property
    def displayable(self) -> bool:
        return self.payload is not None


def _parse_key_ids(raw: bytes | None) -> list[KeyId]:
    if raw is None:
        return []
    if len(raw) not in (4, 8):
        raise StructuralError(f"KEY_IDS record must hold 1 or 2 IDs, got {len(raw)} bytes")
    return [KeyId.from_bytes(raw[i : i + 4]) for i in range(0, len(raw), 4)]


class Session:
    def __init__(
        self,
        me: bytes,
        sign_keys: SignKeyPair,
        dh_keys: DhKeyPair,
        directory: Mapping[bytes, PublicIdentity],
        participants: Iterable[bytes] = (),
        policy: RotationPolicy | None = None,
        rng: RandomSource = os.urandom,
    ):
        if len(me) != crypto.HANDLE_SIZE:
            raise ValueError("participant handle must be 8 bytes")
        self.me = bytes(me)
        self.sign_keys = sign_keys
        self.dh_keys = dh_keys
        self.directory = directory
        self.participants: set[bytes] = set(participants) | {self.me}
        self.pending_include: set[bytes] = set()
        self.pending_exclude: set[bytes] = set()
        # changes this participant initiated itself; announced via ALTER_PARTICIPANTS
        self._announce_include: set[bytes] = set()
        self._announce_exclude: set[bytes] = set()
        self.ring = KeyRing(self.me)
        self.policy = policy or RotationPolicy()
        self.rng = rng
        self.sent_since_rotation = 0
        self.total_since_keyed = 0
        # who received each own key when it was distributed
        self._key_recipients: dict[KeyId, frozenset[bytes]] = {}
        self._seed_target: KeyId | None = None
        # set when we were (re-)included; our next message must carry a new key
        self._must_rekey = False

    # -- composition -------------------------------------------------------

    def composition(self) -> set[bytes]:
        """Participants the next keyed message will be addressed to (plus self)."""
        return (self.participants | self.pending_include) - self.pending_exclude

    def alter_participants(self, include: Iterable[bytes] = (), exclude: Iterable[bytes] = ()) -> None:
        include, exclude = set(include), set(exclude)
        current = self.composition()
        if include & exclude:
            raise MembershipError("cannot include and exclude the same participant")
        if self.me in exclude:
            raise MembershipError("cannot exclude oneself")
        if include & current:
            raise MembershipError("included participant is already in the chat")
        if not exclude <= current:
            raise MembershipError("excluded participant is not in the chat")
        for p in include:
            if p not in self.directory:
                raise UnknownParticipantError(f"no public keys for participant {p.hex()}")
        self._apply_delta(include, exclude)
        self._announce_include = (self._announce_include - exclude) | include
        self._announce_exclude = (self._announce_exclude - include) | exclude

    def _apply_delta(self, include: set[bytes], exclude: set[bytes]) -> None:
        for p in include:
            if p in self.pending_exclude:
                self.pending_exclude.discard(p)
            elif p not in self.participants:
                self.pending_include.add(p)
        for p in exclude:
            if p in self.pending_include:
                self.pending_include.discard(p)
            elif p in self.participants:
                self.pending_exclude.add(p)

    @property
    def has_pending_changes(self) -> bool:
        return bool(self.pending_include or self.pending_exclude)

    # -- sending -----------------------------------------------------------

    def _keyed_reason(self) -> str | None:
        """Why the next message must be keyed: "rotate", "resend" or None."""
        if (
            self.ring.own_current is None
            or self._must_rekey
            or self.has_pending_changes
            or self._announce_include
            or self._announce_exclude
        ):
            return "rotate"
        due = due_actions(self.sent_since_rotation, self.total_since_keyed, self.policy)
        if due.rotate:
            return "rotate"
        return "resend" if due.resend else None

    def send_message(self, payload: bytes | None, now: float) -> OutboundMessage:
        """Build whichever message type is due next."""
        reason = self._keyed_reason()
        if reason is not None:
            return self.build_keyed_message(payload, now, rotate=reason == "rotate")
        if payload is None:
            raise SessionError("a blind message cannot be sent as a followup")
        return self.build_followup_message(payload, now)

    def send_key_reminder(self, now: float) -> OutboundMessage:
        """Blind keyed message; re-sends the current key unless a rotation is due anyway."""
        return self.build_keyed_message(None, now, rotate=self._keyed_reason() == "rotate")

    def _sign(self, records: list[TlvRecord]) -> bytes:
        body = encode_records(records)
        signature = crypto.sign_message(body, self.sign_keys)
        return bytes([0x00]) + encode_record(TlvRecord(RecordType.SIGNATURE, signature)) + body

    def _identity(self, participant: bytes) -> PublicIdentity:
        try:
            return self.directory[participant]
        except KeyError:
            raise UnknownParticipantError(
                f"no public keys for participant {participant.hex()}"
            ) from None

    def build_keyed_message(
        self, payload: bytes | None, now: float, *, rotate: bool = True
    ) -> OutboundMessage:
        """Distribute the sender key (rotating first unless ``rotate`` is False).

        Pending composition changes are applied. If this participant itself
        requested changes, the message is ALTER_PARTICIPANTS and lists them.
        """
        composition = self.composition()
        recipients = sorted(composition - {self.me})
        if not recipients:
            raise SessionError("no other participants to send to")
        identities = [self._identity(r) for r in recipients]

        if rotate or self.ring.own_current is None or self.has_pending_changes or self._must_rekey:
            self.ring.rotate(now, self.rng)
            self.sent_since_rotation = 0
        cur_id, cur_key = self.ring.own_current
        self._key_recipients.setdefault(cur_id, frozenset(recipients))

        previous = self.ring.own_previous
        entitled: frozenset[bytes] = frozenset()
        if previous is not None:
            entitled = self._key_recipients.get(previous[0], frozenset()) - self.pending_include

        nonce = crypto.new_master_nonce(self.rng)
        keys_records = []
        for r, ident in zip(recipients, identities):
            block = cur_key + (previous[1] if r in entitled else b"")
            pairwise = crypto.derive_pairwise_key(self.dh_keys, ident.dh_public)
            iv = crypto.derive_recipient_iv(nonce, r)
            keys_records.append(TlvRecord(RecordType.KEYS, crypto.wrap_sender_keys(block, pairwise, iv)))
        key_ids = cur_id.to_bytes()
        if entitled & set(recipients):
            key_ids += previous[0].to_bytes()

        alter = bool(self._announce_include or self._announce_exclude)
        mtype = MessageType.ALTER_PARTICIPANTS if alter else MessageType.GROUP_KEYED
        records = [
            TlvRecord(RecordType.MESSAGE_TYPE, bytes([mtype])),
            TlvRecord(RecordType.NONCE, nonce),
            *(TlvRecord(RecordType.RECIPIENT, r) for r in recipients),
            *keys_records,
            TlvRecord(RecordType.KEY_IDS, key_ids),
        ]
        if alter:
            records += [TlvRecord(RecordType.INC_PARTICIPANT, p) for p in sorted(self._announce_include)]
            records += [TlvRecord(RecordType.EXC_PARTICIPANT, p) for p in sorted(self._announce_exclude)]
        if payload is not None:
            ct = crypto.encrypt_payload(payload, cur_key, crypto.derive_payload_nonce(nonce))
            records.append(TlvRecord(RecordType.PAYLOAD, ct))
        wire = self._sign(records)

        self.participants = composition
        self.pending_include.clear()
        self.pending_exclude.clear()
        self._announce_include.clear()
        self._announce_exclude.clear()
        self._must_rekey = False
        self.sent_since_rotation += 1
        self.total_since_keyed = 1
        return OutboundMessage(wire, mtype, cur_id, tuple(recipients))

    def build_followup_message(self, payload: bytes, now: float) -> OutboundMessage:
        if self.ring.own_current is None:
            raise SessionError("no sender key yet; a keyed message must be sent first")
        if self.has_pending_changes or self._must_rekey or self._announce_include or self._announce_exclude:
            raise SessionError("composition changed; a keyed message must be sent first")
        cur_id, cur_key = self.ring.own_current
        nonce = crypto.new_master_nonce(self.rng)
        ct = crypto.encrypt_payload(payload, cur_key, crypto.derive_payload_nonce(nonce))
        wire = self._sign(
            [
                TlvRecord(RecordType.MESSAGE_TYPE, bytes([MessageType.GROUP_FOLLOWUP])),
                TlvRecord(RecordType.NONCE, nonce),
                TlvRecord(RecordType.KEY_IDS, cur_id.to_bytes()),
                TlvRecord(RecordType.PAYLOAD, ct),
            ]
        )
        self.sent_since_rotation += 1
        self.total_since_keyed += 1
        return OutboundMessage(wire, MessageType.GROUP_FOLLOWUP, cur_id)

    # -- receiving ---------------------------------------------------------

    def _verified(self, wire: bytes, sender: bytes) -> ProtocolMessage:
        msg = decode_message(wire)
        ident = self._identity(sender)
        if msg.signature is None or not crypto.verify_message(
            signed_span(wire), msg.signature, ident.sign_public
        ):
            raise AuthenticityError(f"bad signature on message from {sender.hex()}")
        if msg.message_type is None:
            raise StructuralError("missing or invalid MESSAGE_TYPE record")
        return msg

    def _extract_keys(self, msg: ProtocolMessage, sender: bytes, result: InboundResult) -> bytes | None:
        """Unwrap the KEYS record meant for us; returns the recipient used, if any."""
        recipients = msg.values(RecordType.RECIPIENT)
        wrapped = msg.values(RecordType.KEYS)
        key_ids = _parse_key_ids(msg.first(RecordType.KEY_IDS))
        if sender == self.me:
            # the pairwise key is symmetric, so our own KEYS record for anyone unwraps
            index = 0 if recipients else None
        else:
            index = recipients.index(self.me) if self.me in recipients else None
        if index is None:
            return None
        if not key_ids:
            raise StructuralError("keyed message without KEY_IDS record")
        nonce = msg.first(RecordType.NONCE)
        if nonce is None:
            raise StructuralError("keyed message without NONCE record")
        peer = sender if sender != self.me else recipients[index]
        pairwise = crypto.derive_pairwise_key(self.dh_keys, self._identity(peer).dh_public)
        iv = crypto.derive_recipient_iv(nonce, recipients[index])
        current, previous = crypto.unwrap_sender_keys(wrapped[index], pairwise, iv)
        found = [(key_ids[0], current)]
        if previous is not None:
            if len(key_ids) < 2:
                raise StructuralError("previous key supplied without its key ID")
            found.append((key_ids[1], previous))
        for kid, key in found:
            self.ring.record(sender, kid, key)
            result.learned_keys.append((sender, kid, key))
        if sender == self.me:
            self._key_recipients.setdefault(key_ids[0], frozenset(recipients))
        return recipients[index]

    def _decrypt_payload(self, msg: ProtocolMessage, sender: bytes, result: InboundResult) -> None:
        raw = msg.first(RecordType.PAYLOAD)
        if raw is None:
            return
        result.has_payload = True
        key_ids = _parse_key_ids(msg.first(RecordType.KEY_IDS))
        nonce = msg.first(RecordType.NONCE)
        if not key_ids or nonce is None:
            raise StructuralError("payload without KEY_IDS or NONCE record")
        key = self.ring.lookup(sender, key_ids[0])
        if key is None:
            result.missing_key = key_ids[0]
            return
        result.payload = crypto.decrypt_payload(raw, key, crypto.derive_payload_nonce(nonce))

    def receive_message(self, wire: bytes, sender: bytes) -> InboundResult:
        """Process one message delivered by the transport with sender ID ``sender``.

        Raises AuthenticityError for bad signatures, WireError subclasses for
        malformed messages and KeyConflictError when a key ID is reused with
        a different key. An unknown payload key is reported through
        ``InboundResult.missing_key``.
        """
        msg = self._verified(wire, sender)
        mtype = msg.message_type
        key_ids = _parse_key_ids(msg.first(RecordType.KEY_IDS))
        result = InboundResult(sender, mtype, key_id=key_ids[0] if key_ids else None)
        if mtype in (MessageType.GROUP_KEYED, MessageType.ALTER_PARTICIPANTS):
            result.addressed = self._extract_keys(msg, sender, result) is not None
            result.included = frozenset(msg.values(RecordType.INC_PARTICIPANT))
            result.excluded = frozenset(msg.values(RecordType.EXC_PARTICIPANT))
            if sender != self.me and result.addressed:
                if self.me in result.included:
                    self.participants = set(msg.values(RecordType.RECIPIENT)) | {sender}
                    self.pending_include.clear()
                    self.pending_exclude.clear()
                    self._announce_include.clear()
                    self._announce_exclude.clear()
                    self._must_rekey = True
                else:
                    self._apply_delta(set(result.included), set(result.excluded))
        self._decrypt_payload(msg, sender, result)
        if sender != self.me:
            self.total_since_keyed += 1
        return result

    # -- history seeding ---------------------------------------------------

    def seed_from_history(self, batch: Iterable[tuple[bytes, bytes]]) -> bool:
        """Extract keys from one history batch (oldest message first).

        Successive calls should pass older, adjoining batches. Returns True
        once the key used by our newest message in history is known, after
        which it becomes the current sender key.
        """
        batch = list(batch)
        for sender, wire in reversed(batch):
            if sender == self.me and self._seed_target is None:
                try:
                    ids = _parse_key_ids(decode_message(wire).first(RecordType.KEY_IDS))
                except StrongvelopeError as exc:
                    log.warning("skipping malformed own history message: %s", exc)
                    continue
                if ids:
                    self._seed_target = ids[0]
        for sender, wire in batch:
            try:
                msg = self._verified(wire, sender)
                if msg.message_type in (MessageType.GROUP_KEYED, MessageType.ALTER_PARTICIPANTS):
                    self._extract_keys(msg, sender, InboundResult(sender, msg.message_type))
            except StrongvelopeError as exc:
                log.warning("skipping history message from %s: %s", sender.hex(), exc)
        target = self._seed_target
        if target is None or self.ring.lookup(self.me, target) is None:
            return False
        if self.ring.own_current is None or self.ring.own_current[0] != target:
            self.ring.adopt_own(target)
        return True

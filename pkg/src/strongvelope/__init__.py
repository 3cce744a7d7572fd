"""Strongvelope multi-party encrypted group messaging.

Sender keys are distributed pairwise (X25519 + HKDF, AES-CBC key wrap),
payloads are AES-CTR encrypted and every message is Ed25519 signed.
"""

from .crypto import DhKeyPair, SignKeyPair, seeded_random
from .errors import (
    AuthenticityError,
    KeyConflictError,
    KeyIdError,
    ParseError,
    SessionError,
    StrongvelopeError,
    StructuralError,
    WireError,
)
from .keys import KeyId, KeyRing, RotationPolicy, new_key_id
from .session import InboundResult, OutboundMessage, PublicIdentity, Session
from .transport import ChatRoom, LoggedMessage, seed_from_room
from .wire import MessageType, ProtocolMessage, RecordType, TlvRecord, decode_message, encode_message

__all__ = [
    "AuthenticityError",
    "ChatRoom",
    "DhKeyPair",
    "InboundResult",
    "KeyConflictError",
    "KeyId",
    "KeyIdError",
    "KeyRing",
    "LoggedMessage",
    "MessageType",
    "OutboundMessage",
    "ParseError",
    "ProtocolMessage",
    "PublicIdentity",
    "RecordType",
    "RotationPolicy",
    "Session",
    "SessionError",
    "SignKeyPair",
    "StrongvelopeError",
    "StructuralError",
    "TlvRecord",
    "WireError",
    "decode_message",
    "encode_message",
    "new_key_id",
    "seed_from_room",
    "seeded_random",
]

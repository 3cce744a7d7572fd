"""Binary wire format: a protocol version byte followed by TLV records.

Each record is ``type (1 byte) || length (2 bytes, big-endian) || value``.
The SIGNATURE record, when present, must come first; everything after it is
covered by the signature.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

from .errors import EncodingError, ParseError, StructuralError, UnsupportedVersionError

PROTOCOL_VERSION = 0x00
MAX_VALUE_LENGTH = 0xFFFF
_HEADER = struct.Struct(">BH")


class RecordType(IntEnum):
    SIGNATURE = 0x01
    MESSAGE_TYPE = 0x02
    NONCE = 0x03
    RECIPIENT = 0x04
    KEYS = 0x05
    KEY_IDS = 0x06
    PAYLOAD = 0x07
    INC_PARTICIPANT = 0x08
    EXC_PARTICIPANT = 0x09
    OWN_KEY = 0x0A


class MessageType(IntEnum):
    GROUP_KEYED = 0x00
    GROUP_FOLLOWUP = 0x01
    ALTER_PARTICIPANTS = 0x02


@dataclass(frozen=True)
class TlvRecord:
    type: RecordType
    value: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "type", RecordType(self.type))
        object.__setattr__(self, "value", bytes(self.value))


@dataclass(frozen=True)
class ProtocolMessage:
    version: int = PROTOCOL_VERSION
    records: tuple[TlvRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def values(self, rtype: RecordType) -> list[bytes]:
        """Values of every record of ``rtype``, in wire order."""
        return [r.value for r in self.records if r.type == rtype]

    def first(self, rtype: RecordType) -> bytes | None:
        for r in self.records:
            if r.type == rtype:
                return r.value
        return None

    @property
    def signature(self) -> bytes | None:
        if self.records and self.records[0].type == RecordType.SIGNATURE:
            return self.records[0].value
        return None

    @property
    def message_type(self) -> MessageType | None:
        """The declared message type, or None if absent or malformed."""
        value = self.first(RecordType.MESSAGE_TYPE)
        if value is None or len(value) != 1:
            return None
        try:
            return MessageType(value[0])
        except ValueError:
            return None


def encode_record(record: TlvRecord) -> bytes:
    if len(record.value) > MAX_VALUE_LENGTH:
        raise EncodingError(
            f"{record.type.name} value is {len(record.value)} bytes, max {MAX_VALUE_LENGTH}"
        )
    return _HEADER.pack(record.type, len(record.value)) + record.value


def encode_records(records: Iterable[TlvRecord]) -> bytes:
    return b"".join(encode_record(r) for r in records)


def decode_records(data: bytes, base_offset: int = 0) -> list[TlvRecord]:
    """Split ``data`` into TLV records, consuming it entirely.

    Offsets in raised :class:`ParseError` are relative to ``data`` plus
    ``base_offset``.
    """
    data = bytes(data)
    records = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise ParseError(
                f"truncated record header ({len(data) - pos} of {_HEADER.size} bytes)",
                base_offset + pos,
            )
        code, length = _HEADER.unpack_from(data, pos)
        try:
            rtype = RecordType(code)
        except ValueError:
            raise ParseError(f"unknown record type 0x{code:02x}", base_offset + pos) from None
        start = pos + _HEADER.size
        if start + length > len(data):
            raise ParseError(
                f"truncated {rtype.name} record: {length} bytes declared, "
                f"{len(data) - start} present",
                base_offset + start,
            )
        records.append(TlvRecord(rtype, data[start : start + length]))
        pos = start + length
    return records


def check_structure(records: list[TlvRecord] | tuple[TlvRecord, ...]) -> None:
    """Raise StructuralError unless SIGNATURE leads and KEYS/RECIPIENT counts match."""
    for i, r in enumerate(records):
        if r.type == RecordType.SIGNATURE and i != 0:
            raise StructuralError(f"SIGNATURE record at position {i}, must be first")
    if records and records[0].type != RecordType.SIGNATURE:
        raise StructuralError(f"first record is {records[0].type.name}, expected SIGNATURE")
    n_keys = sum(r.type == RecordType.KEYS for r in records)
    n_recipients = sum(r.type == RecordType.RECIPIENT for r in records)
    if n_keys != n_recipients:
        raise StructuralError(f"{n_keys} KEYS records but {n_recipients} RECIPIENT records")


def encode_message(msg: ProtocolMessage) -> bytes:
    if msg.version != PROTOCOL_VERSION:
        raise UnsupportedVersionError(f"unsupported protocol version 0x{msg.version:02x}")
    check_structure(msg.records)
    return bytes([msg.version]) + encode_records(msg.records)


def decode_message(data: bytes) -> ProtocolMessage:
    if not data:
        raise ParseError("empty message", 0)
    if data[0] != PROTOCOL_VERSION:
        raise UnsupportedVersionError(f"unsupported protocol version 0x{data[0]:02x}")
    records = decode_records(data[1:], base_offset=1)
    check_structure(records)
    return ProtocolMessage(data[0], tuple(records))


def signed_span(data: bytes) -> bytes:
    """Bytes covered by the signature: everything after the SIGNATURE record."""
    if len(data) < 1 + _HEADER.size or data[1] != RecordType.SIGNATURE:
        raise StructuralError("message does not start with a SIGNATURE record")
    _, length = _HEADER.unpack_from(data, 1)
    end = 1 + _HEADER.size + length
    if end > len(data):
        raise ParseError("truncated SIGNATURE record", 1 + _HEADER.size)
    return bytes(data[end:])

"""Command line entry point: ``strongvelope keygen|dissect|scenario``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import crypto
from .crypto import DhKeyPair, SignKeyPair
from .errors import ScriptError, StructuralError, WireError
from .scenario import load_script, run_script, shipped_scenarios
from .wire import PROTOCOL_VERSION, MessageType, RecordType, check_structure, decode_records, signed_span

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _hex_arg(text: str) -> bytes:
    text = text.strip()
    if len(text) % 2:
        raise argparse.ArgumentTypeError(f"odd-length hex string ({len(text)} digits)")
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex string: {text[:20]!r}") from None


def cmd_keygen(args) -> int:
    rng = crypto.seeded_random(args.seed) if args.seed is not None else os.urandom
    sign = SignKeyPair.generate(rng)
    dh = DhKeyPair.generate(rng)
    print(f"ed25519_seed      {sign.secret_seed.hex()}")
    print(f"ed25519_public    {sign.public_key.hex()}")
    print(f"curve25519_secret {dh.secret_scalar.hex()}")
    print(f"curve25519_public {dh.public_point.hex()}")
    return EXIT_OK


def _read_wire(arg: str) -> bytes:
    if arg.startswith("@"):
        raw = Path(arg[1:]).read_bytes()
        try:
            return _hex_arg(raw.decode("ascii"))
        except (UnicodeDecodeError, argparse.ArgumentTypeError):
            return raw
    return _hex_arg(arg)


def _describe_value(rtype: RecordType, value: bytes) -> str:
    if rtype == RecordType.MESSAGE_TYPE and len(value) == 1:
        try:
            return f" [{MessageType(value[0]).name}]"
        except ValueError:
            return " [unknown message type]"
    if rtype == RecordType.KEY_IDS and len(value) in (4, 8):
        ids = [value[i : i + 4].hex() for i in range(0, len(value), 4)]
        return " [" + ", ".join(ids) + "]"
    return ""


def dissect(wire: bytes, signer_public: bytes | None = None) -> tuple[list[str], bool]:
    """Human readable report of a wire message. Returns ``(lines, ok)``."""
    lines: list[str] = []
    if not wire:
        return ["error: empty message (at offset 0)"], False
    lines.append(f"version: 0x{wire[0]:02x}")
    ok = True
    if wire[0] != PROTOCOL_VERSION:
        lines.append(f"error: unsupported protocol version 0x{wire[0]:02x}")
        ok = False
    try:
        records = decode_records(wire[1:], base_offset=1)
    except WireError as exc:
        lines.append(f"error: {exc}")
        return lines, False
    mtype = None
    for i, r in enumerate(records):
        extra = _describe_value(r.type, r.value)
        lines.append(
            f"record {i}: {r.type.name} (0x{r.type:02x}) length={len(r.value)} value={r.value.hex()}{extra}"
        )
        if r.type == RecordType.MESSAGE_TYPE and mtype is None and len(r.value) == 1:
            mtype = r.value[0]
    if mtype is not None:
        try:
            lines.append(f"message type: {MessageType(mtype).name}")
        except ValueError:
            lines.append(f"message type: unknown (0x{mtype:02x})")
    else:
        lines.append("message type: missing")
    try:
        check_structure(records)
        lines.append("structure: OK")
    except StructuralError as exc:
        lines.append(f"structure: {exc}")
        ok = False
    if signer_public is not None:
        if records and records[0].type == RecordType.SIGNATURE:
            valid = crypto.verify_message(signed_span(wire), records[0].value, signer_public)
        else:
            valid = False
        lines.append(f"signature: {'VALID' if valid else 'INVALID'}")
        ok = ok and valid
    return lines, ok


def cmd_dissect(args) -> int:
    try:
        wire = _read_wire(args.wire)
    except (argparse.ArgumentTypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    lines, ok = dissect(wire, args.pubkey)
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_scenario(args) -> int:
    shipped = shipped_scenarios()
    path = Path(args.script)
    if not path.exists() and args.script in shipped:
        path = shipped[args.script]
    try:
        script = load_script(path)
    except (OSError, ScriptError) as exc:
        print(f"script error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report, room = run_script(script, args.seed)
    print(report.text())
    if args.log:
        with open(args.log, "w") as fh:
            room.dump(fh)
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strongvelope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate Ed25519 and Curve25519 key pairs")
    p.add_argument("--seed", type=_hex_arg, help="hex seed for deterministic output")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("dissect", help="decode a wire message")
    p.add_argument("wire", help="hex string, or @FILE holding hex or raw bytes")
    p.add_argument("--pubkey", type=_hex_arg, help="signer's Ed25519 public key (hex)")
    p.set_defaults(func=cmd_dissect)

    p = sub.add_parser("scenario", help="run a scripted multi-party scenario")
    p.add_argument("script", help="script path or the name of a shipped scenario")
    p.add_argument("--seed", type=_hex_arg, help="hex RNG seed (overrides the script's rng line)")
    p.add_argument("--log", help="write the room log (seq sender wire, hex) to this file")
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Scripted multi-party runs over an in-memory chat room.

A script is plain text, one directive per line, ``#`` starts a comment::

    rng 01ab                      # default RNG seed (hex), overridable
    policy rotate_after_sent 16   # rotate_after_sent | resend_after_total | history_batch
    participant alice             # room member and session participant
    observer dave                 # room member with keys, not (yet) a participant
    send alice some text          # send a payload
    blind alice                   # keyed message without payload
    include alice dave            # queue inclusion (announced on alice's next send)
    exclude alice carol,bob       # queue exclusion
    leave carol                   # drop from the room (transport level)
    advance 86400                 # move the clock forward (seconds)
    seed carol                    # restart carol's handler from room history
    expect-type GROUP_KEYED       # type of the last message
    expect-decrypt bob            # bob decrypted the last message to its payload
    expect-missing-key dave       # dave lacked the key for the last message
    expect-no-keys carol          # last message carries no RECIPIENT record for carol
    expect-seeded carol yes       # outcome of carol's last ``seed``

Participant names may carry an explicit handle: ``participant alice=0011223344556677``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .crypto import DhKeyPair, SignKeyPair, seeded_random
from .errors import ScriptError, StrongvelopeError
from .keys import RotationPolicy
from .session import InboundResult, OutboundMessage, PublicIdentity, Session
from .transport import ChatRoom, LoggedMessage, seed_from_room
from .wire import MessageType, RecordType, decode_message

START_TIME = 1_700_000_000

_TYPE_NAMES = {
    "keyed": MessageType.GROUP_KEYED,
    "followup": MessageType.GROUP_FOLLOWUP,
    "alter": MessageType.ALTER_PARTICIPANTS,
    **{t.name.lower(): t for t in MessageType},
}
_NAMED_STEPS = {
    "send": 1,
    "blind": 1,
    "include": 2,
    "exclude": 2,
    "leave": 1,
    "seed": 1,
    "expect-decrypt": 1,
    "expect-missing-key": 1,
    "expect-no-keys": 1,
    "expect-seeded": 2,
}


@dataclass
class Step:
    line: int
    verb: str
    args: list[str]
    text: str = ""


@dataclass
class ScenarioScript:
    participants: dict[str, bytes] = field(default_factory=dict)
    observers: set[str] = field(default_factory=set)
    steps: list[Step] = field(default_factory=list)
    policy: dict[str, int] = field(default_factory=dict)
    rng_seed: bytes | None = None
    name: str = "scenario"


def _handle_for(name: str) -> bytes:
    return hashlib.sha256(name.encode()).digest()[:8]


def parse_script(text: str, name: str = "scenario") -> ScenarioScript:
    script = ScenarioScript(name=name)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        verb, _, rest = line.partition(" ")
        rest = rest.strip()
        args = rest.split()
        if verb in ("participant", "observer"):
            if len(args) != 1:
                raise ScriptError(f"{verb} takes exactly one name", lineno)
            pname, _, handle_hex = args[0].partition("=")
            try:
                handle = bytes.fromhex(handle_hex) if handle_hex else _handle_for(pname)
            except ValueError:
                raise ScriptError(f"bad handle hex {handle_hex!r}", lineno) from None
            if len(handle) != 8:
                raise ScriptError("handles are 8 bytes (16 hex digits)", lineno)
            if pname in script.participants:
                raise ScriptError(f"{pname} declared twice", lineno)
            if handle in script.participants.values():
                raise ScriptError(f"duplicate handle for {pname}", lineno)
            script.participants[pname] = handle
            if verb == "observer":
                script.observers.add(pname)
        elif verb == "rng":
            try:
                script.rng_seed = bytes.fromhex(rest)
            except ValueError:
                raise ScriptError(f"bad rng seed {rest!r}", lineno) from None
        elif verb == "policy":
            if len(args) != 2 or args[0] not in RotationPolicy.__dataclass_fields__:
                raise ScriptError(f"bad policy line {line!r}", lineno)
            try:
                script.policy[args[0]] = int(args[1])
            except ValueError:
                raise ScriptError(f"policy value must be an integer: {args[1]!r}", lineno) from None
        elif verb in _NAMED_STEPS or verb in ("advance", "expect-type"):
            step = Step(lineno, verb, args)
            if verb == "send":
                if not args:
                    raise ScriptError("send needs a sender", lineno)
                step.args = args[:1]
                step.text = rest[len(args[0]) :].strip()
            elif verb in _NAMED_STEPS and len(args) != _NAMED_STEPS[verb]:
                raise ScriptError(f"{verb} takes {_NAMED_STEPS[verb]} argument(s)", lineno)
            elif verb == "advance" and (len(args) != 1 or not args[0].isdigit()):
                raise ScriptError("advance takes a number of seconds", lineno)
            elif verb == "expect-type" and (len(args) != 1 or args[0].lower() not in _TYPE_NAMES):
                raise ScriptError(f"unknown message type {rest!r}", lineno)
            elif verb == "expect-seeded" and args[1] not in ("yes", "no"):
                raise ScriptError("expect-seeded takes yes or no", lineno)
            script.steps.append(step)
        else:
            raise ScriptError(f"unknown directive {verb!r}", lineno)

    # names referenced by steps must be declared
    for step in script.steps:
        names: list[str] = []
        if step.verb in _NAMED_STEPS:
            names.append(step.args[0])
            if step.verb in ("include", "exclude"):
                names += step.args[1].split(",")
        for n in names:
            if n not in script.participants:
                raise ScriptError(f"undeclared participant {n!r}", step.line)
    try:
        RotationPolicy(**script.policy)
    except ValueError as exc:
        raise ScriptError(str(exc)) from None
    return script


def load_script(path: str | Path) -> ScenarioScript:
    path = Path(path)
    return parse_script(path.read_text(), name=path.stem)


def shipped_scenarios() -> dict[str, Path]:
    here = Path(__file__).with_name("scenarios")
    return {p.stem: p for p in sorted(here.glob("*.txt"))}


@dataclass
class ScenarioReport:
    name: str
    lines: list[str] = field(default_factory=list)
    failures: int = 0
    checks: int = 0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        summary = f"{self.name}: {verdict} ({self.checks - self.failures}/{self.checks} checks)"
        return "\n".join([*self.lines, summary])


class ScenarioRunner:
    """Executes a script: one :class:`Session` per declared name, one shared room."""

    def __init__(self, script: ScenarioScript, seed: bytes | None = None):
        self.script = script
        self.seed = seed if seed is not None else (script.rng_seed or b"\x00")
        self.policy = RotationPolicy(**script.policy)
        self.now = START_TIME
        self.handles = dict(script.participants)
        self.names = {h: n for n, h in self.handles.items()}
        self.keys: dict[str, tuple[SignKeyPair, DhKeyPair]] = {}
        for name in self.handles:
            rng = seeded_random(self.seed + b"/identity/" + name.encode())
            self.keys[name] = (SignKeyPair.generate(rng), DhKeyPair.generate(rng))
        self.directory = {
            self.handles[n]: PublicIdentity(s.public_key, d.public_point)
            for n, (s, d) in self.keys.items()
        }
        members = [h for n, h in self.handles.items() if n not in script.observers]
        self.sessions: dict[str, Session] = {}
        self.room = ChatRoom(self.handles.values())
        self._restarts: dict[str, int] = {}
        for name in self.handles:
            self.sessions[name] = self._new_session(
                name, members if name not in script.observers else ()
            )
            self.room.subscribe(self.handles[name], self._listener(name))
        self.last_out: OutboundMessage | None = None
        self.last_payload: bytes | None = None
        self.last_results: dict[str, InboundResult | Exception] = {}
        self.seeded: dict[str, bool] = {}
        self.seed_batches: dict[str, int] = {}

    def _new_session(self, name: str, participants) -> Session:
        restart = self._restarts.get(name, 0)
        self._restarts[name] = restart + 1
        sign, dh = self.keys[name]
        rng = seeded_random(self.seed + f"/session/{name}/{restart}".encode())
        return Session(
            self.handles[name], sign, dh, self.directory, participants, self.policy, rng
        )

    def _listener(self, name: str):
        def deliver(entry: LoggedMessage) -> None:
            try:
                self.last_results[name] = self.sessions[name].receive_message(entry.wire, entry.sender)
            except StrongvelopeError as exc:
                self.last_results[name] = exc

        return deliver

    def _post(self, name: str, payload: bytes | None) -> None:
        session = self.sessions[name]
        self.now += 1
        if payload is None:
            out = session.send_key_reminder(self.now)
        else:
            out = session.send_message(payload, self.now)
        self.last_results = {}
        self.room.post(self.handles[name], out.wire)
        self.last_out, self.last_payload = out, payload

    def _last_recipients(self) -> list[bytes]:
        if self.last_out is None:
            return []
        return decode_message(self.last_out.wire).values(RecordType.RECIPIENT)

    def _check(self, step: Step) -> tuple[bool, str]:
        verb, args = step.verb, step.args
        if self.last_out is None and verb in (
            "expect-type", "expect-decrypt", "expect-missing-key", "expect-no-keys"
        ):
            return False, "no message has been sent yet"
        if verb == "expect-type":
            want = _TYPE_NAMES[args[0].lower()]
            return self.last_out.type == want, f"got {self.last_out.type.name}"
        if verb == "expect-no-keys":
            return self.handles[args[0]] not in self._last_recipients(), "recipient record present"
        if verb == "expect-seeded":
            got = self.seeded.get(args[0])
            return got == (args[1] == "yes"), f"seeded={got}"
        result = self.last_results.get(args[0])
        if result is None:
            return False, "message not delivered"
        if isinstance(result, Exception):
            return False, f"{type(result).__name__}: {result}"
        if verb == "expect-decrypt":
            return result.payload == self.last_payload, f"payload={result.payload!r}"
        # expect-missing-key
        return (
            result.payload is None and result.missing_key is not None,
            f"payload={result.payload!r} missing_key={result.missing_key}",
        )

    def _execute(self, step: Step) -> str | None:
        verb, args = step.verb, step.args
        if verb == "send":
            self._post(args[0], step.text.encode())
        elif verb == "blind":
            self._post(args[0], None)
        elif verb in ("include", "exclude"):
            who = [self.handles[n] for n in args[1].split(",")]
            session = self.sessions[args[0]]
            if verb == "include":
                session.alter_participants(include=who)
            else:
                session.alter_participants(exclude=who)
        elif verb == "leave":
            self.room.set_members(self.room.members - {self.handles[args[0]]})
        elif verb == "advance":
            self.now += int(args[0])
        elif verb == "seed":
            name = args[0]
            old = self.sessions[name]
            self.sessions[name] = session = self._new_session(name, old.composition())
            found, batches = seed_from_room(session, self.room)
            self.seeded[name], self.seed_batches[name] = found, batches
            return f"found={found} batches={batches}"
        return None

    def run(self) -> ScenarioReport:
        report = ScenarioReport(self.script.name)
        for step in self.script.steps:
            label = f"line {step.line}: {step.verb} {' '.join(step.args)} {step.text}".rstrip()
            if step.verb.startswith("expect-"):
                report.checks += 1
                ok, detail = self._check(step)
                if ok:
                    report.lines.append(f"{label} ... ok")
                else:
                    report.failures += 1
                    report.lines.append(f"{label} ... FAIL ({detail})")
                continue
            try:
                note = self._execute(step)
            except StrongvelopeError as exc:
                report.checks += 1
                report.failures += 1
                report.lines.append(f"{label} ... ERROR ({type(exc).__name__}: {exc})")
                continue
            report.lines.append(label + (f" ({note})" if note else ""))
        return report


def run_script(script: ScenarioScript, seed: bytes | None = None) -> tuple[ScenarioReport, ChatRoom]:
    runner = ScenarioRunner(script, seed)
    return runner.run(), runner.room

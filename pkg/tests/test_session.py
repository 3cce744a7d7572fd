import pytest

from strongvelope import crypto
from strongvelope.errors import (
    AuthenticityError,
    KeyConflictError,
    MembershipError,
    SessionError,
    StructuralError,
    UnknownParticipantError,
)
from strongvelope.keys import KeyId, RotationPolicy
from strongvelope.wire import MessageType, RecordType, TlvRecord, decode_message, encode_record, signed_span
from tests.harness import Group, handle


def records(wire):
    return decode_message(wire)


def test_first_keyed_message_layout():
    g = Group(["alice", "bob", "carol"])
    out, results = g.send("alice", b"hi")
    msg = records(out.wire)
    assert out.type == MessageType.GROUP_KEYED
    assert [r.type for r in msg.records] == [
        RecordType.SIGNATURE,
        RecordType.MESSAGE_TYPE,
        RecordType.NONCE,
        RecordType.RECIPIENT,
        RecordType.RECIPIENT,
        RecordType.KEYS,
        RecordType.KEYS,
        RecordType.KEY_IDS,
        RecordType.PAYLOAD,
    ]
    assert all(len(v) == 16 for v in msg.values(RecordType.KEYS))
    assert len(msg.first(RecordType.KEY_IDS)) == 4
    assert len(msg.first(RecordType.NONCE)) == 16
    assert set(msg.values(RecordType.RECIPIENT)) == {handle("bob"), handle("carol")}
    for name in ("bob", "carol"):
        assert results[name].payload == b"hi"
        assert (handle("alice"), out.key_id) in {(p, k) for p, k, _ in results[name].learned_keys}


def test_signature_verifies_under_directory_key():
    g = Group(["alice", "bob"])
    out, _ = g.send("alice", b"x")
    msg = records(out.wire)
    assert crypto.verify_message(signed_span(out.wire), msg.signature, g.keys["alice"][0].public_key)


def test_blind_keyed_message():
    g = Group(["alice", "bob"])
    out, results = g.send("alice", None)
    assert records(out.wire).first(RecordType.PAYLOAD) is None
    assert results["bob"].blind and not results["bob"].displayable
    assert results["bob"].missing_key is None


def test_followup_layout_and_decrypt():
    g = Group(["alice", "bob", "carol"])
    g.send("alice", b"one")
    out, results = g.send("alice", b"two")
    msg = records(out.wire)
    assert out.type == MessageType.GROUP_FOLLOWUP
    assert [r.type for r in msg.records] == [
        RecordType.SIGNATURE,
        RecordType.MESSAGE_TYPE,
        RecordType.NONCE,
        RecordType.KEY_IDS,
        RecordType.PAYLOAD,
    ]
    assert len(msg.first(RecordType.KEY_IDS)) == 4
    assert results["bob"].payload == results["carol"].payload == b"two"


def test_blind_followup_rejected():
    g = Group(["alice", "bob"])
    g.send("alice", b"one")
    with pytest.raises(SessionError, match="blind"):
        g.sessions["alice"].send_message(None, g.now)


def test_followup_without_key_rejected():
    g = Group(["alice", "bob"])
    with pytest.raises(SessionError):
        g.sessions["alice"].build_followup_message(b"x", g.now)


def test_send_alone_rejected():
    g = Group(["alice"])
    with pytest.raises(SessionError):
        g.sessions["alice"].send_message(b"x", g.now)


def test_rotation_carries_previous_key():
    g = Group(["alice", "bob"], policy=RotationPolicy(rotate_after_sent=2))
    first, _ = g.send("alice", b"1")
    g.send("alice", b"2")
    out, results = g.send("alice", b"3")
    assert out.type == MessageType.GROUP_KEYED
    msg = records(out.wire)
    assert len(msg.values(RecordType.KEYS)[0]) == 32
    ids = msg.first(RecordType.KEY_IDS)
    assert KeyId.from_bytes(ids[:4]) == out.key_id
    assert KeyId.from_bytes(ids[4:]) == first.key_id
    learned = {k for _, k, _ in results["bob"].learned_keys}
    assert learned == {out.key_id, first.key_id}


def test_include_withholds_previous_key_from_newcomer():
    g = Group(["alice", "bob", "carol"], observers=["dave"])
    g.send("alice", b"before")
    g.sessions["alice"].alter_participants(include=[handle("dave")])
    out, results = g.send("alice", b"welcome")
    assert out.type == MessageType.ALTER_PARTICIPANTS
    msg = records(out.wire)
    wrapped = dict(zip(msg.values(RecordType.RECIPIENT), msg.values(RecordType.KEYS)))
    assert set(wrapped) == {handle("bob"), handle("carol"), handle("dave")}
    assert len(wrapped[handle("dave")]) == 16
    assert len(wrapped[handle("bob")]) == len(wrapped[handle("carol")]) == 32
    assert msg.values(RecordType.INC_PARTICIPANT) == [handle("dave")]
    assert results["dave"].payload == b"welcome"
    assert len(results["dave"].learned_keys) == 1


def test_exclude_sends_nothing_to_departed():
    g = Group(["alice", "bob", "carol"])
    g.send("alice", b"before")
    g.sessions["alice"].alter_participants(exclude=[handle("carol")])
    out, results = g.send("alice", b"after")
    msg = records(out.wire)
    assert msg.values(RecordType.RECIPIENT) == [handle("bob")]
    assert msg.values(RecordType.EXC_PARTICIPANT) == [handle("carol")]
    assert results["carol"].payload is None
    assert results["carol"].missing_key == out.key_id
    assert not results["carol"].addressed


def test_include_and_exclude_in_one_message():
    g = Group(["alice", "bob", "carol"], observers=["dave"])
    g.send("alice", b"x")
    g.sessions["alice"].alter_participants(include=[handle("dave")], exclude=[handle("carol")])
    out, _ = g.send("alice", b"y")
    msg = records(out.wire)
    assert msg.values(RecordType.INC_PARTICIPANT) == [handle("dave")]
    assert msg.values(RecordType.EXC_PARTICIPANT) == [handle("carol")]
    assert set(msg.values(RecordType.RECIPIENT)) == {handle("bob"), handle("dave")}


def test_alter_preconditions():
    g = Group(["alice", "bob"], observers=["dave"])
    s = g.sessions["alice"]
    with pytest.raises(MembershipError):
        s.alter_participants(include=[handle("bob")])
    with pytest.raises(MembershipError):
        s.alter_participants(exclude=[handle("dave")])
    with pytest.raises(MembershipError):
        s.alter_participants(exclude=[handle("alice")])
    with pytest.raises(MembershipError):
        s.alter_participants(include=[handle("dave")], exclude=[handle("dave")])
    with pytest.raises(UnknownParticipantError):
        s.alter_participants(include=[b"nobody__"])


def test_recipients_of_alter_rekey_on_next_send():
    g = Group(["alice", "bob", "carol"])
    g.send("alice", b"a")
    g.send("bob", b"b")
    g.send("bob", b"b2")
    g.sessions["alice"].alter_participants(exclude=[handle("carol")])
    g.send("alice", b"alter")
    bob = g.sessions["bob"]
    assert bob.pending_exclude == {handle("carol")}
    out, results = g.send("bob", b"bob after")
    assert out.type == MessageType.GROUP_KEYED
    assert records(out.wire).values(RecordType.RECIPIENT) == [handle("alice")]
    assert not bob.pending_exclude and not bob.pending_include
    assert handle("carol") not in bob.participants
    assert results["carol"].missing_key is not None


def test_tampered_message_rejected():
    g = Group(["alice", "bob"])
    out, _ = g.send("alice", b"payload")
    wire = bytearray(out.wire)
    wire[-1] ^= 0x01
    with pytest.raises(AuthenticityError):
        g.sessions["bob"].receive_message(bytes(wire), handle("alice"))


def test_impersonation_rejected():
    g = Group(["alice", "bob", "carol"])
    out, _ = g.send("alice", b"payload")
    with pytest.raises(AuthenticityError):
        g.sessions["bob"].receive_message(out.wire, handle("carol"))


def test_followup_with_unknown_key_is_missing_key():
    g = Group(["alice", "bob"], observers=["eve"])
    g.send("alice", b"1")
    out, results = g.send("alice", b"2")
    assert results["eve"].missing_key == out.key_id
    assert results["eve"].payload is None


def test_key_conflict_detected():
    g = Group(["alice", "bob"])
    out, _ = g.send("alice", b"1")
    # forge a second keyed message reusing alice's key ID with another key
    forger = g.new_session("alice", [handle("alice"), handle("bob")])
    forger.ring.record(forger.me, out.key_id, b"\x99" * 16)
    forger.ring.adopt_own(out.key_id)
    forged = forger.build_keyed_message(b"x", g.now, rotate=False)
    with pytest.raises(KeyConflictError):
        g.sessions["bob"].receive_message(forged.wire, handle("alice"))


def test_previous_key_without_id_is_structural_error():
    g = Group(["alice", "bob"])
    alice = g.sessions["alice"]
    alice.send_message(b"1", g.now)
    alice.ring.rotate(g.now + 1, alice.rng)
    nonce = bytes(16)
    bob = g.directory[handle("bob")]
    pairwise = crypto.derive_pairwise_key(alice.dh_keys, bob.dh_public)
    block = alice.ring.own_current[1] + alice.ring.own_previous[1]
    keys = crypto.wrap_sender_keys(block, pairwise, crypto.derive_recipient_iv(nonce, handle("bob")))
    wire = alice._sign(
        [
            TlvRecord(RecordType.MESSAGE_TYPE, b"\x00"),
            TlvRecord(RecordType.NONCE, nonce),
            TlvRecord(RecordType.RECIPIENT, handle("bob")),
            TlvRecord(RecordType.KEYS, keys),
            TlvRecord(RecordType.KEY_IDS, alice.ring.own_current[0].to_bytes()),
        ]
    )
    with pytest.raises(StructuralError):
        g.sessions["bob"].receive_message(wire, handle("alice"))


def test_own_messages_decryptable_by_sender():
    g = Group(["alice", "bob"])
    out, _ = g.send("alice", b"mine")
    fresh = g.new_session("alice", [handle("alice"), handle("bob")])
    res = fresh.receive_message(out.wire, handle("alice"))
    assert res.payload == b"mine"


def test_seed_from_history_finds_own_key():
    g = Group(["alice", "bob"])
    g.send("alice", b"1")
    for i in range(5):
        g.send("bob", b"b%d" % i)
    fresh = g.new_session("alice", [handle("alice"), handle("bob")])
    batch = [(m.sender, m.wire) for m in g.room.fetch_history(None, 32)]
    assert fresh.seed_from_history(batch)
    assert fresh.ring.own_current == g.sessions["alice"].ring.own_current
    out = fresh.send_message(b"back", g.now + 10)
    assert out.type == MessageType.GROUP_FOLLOWUP
    assert g.sessions["bob"].receive_message(out.wire, handle("alice")).payload == b"back"


def test_seed_empty_and_absent():
    g = Group(["alice", "bob"])
    fresh = g.new_session("alice", [handle("alice"), handle("bob")])
    assert not fresh.seed_from_history([])
    g.send("bob", b"only bob")
    assert not fresh.seed_from_history([(m.sender, m.wire) for m in g.room.log])
    assert fresh.ring.own_current is None
    assert fresh.send_message(b"hello", g.now).type == MessageType.GROUP_KEYED


def test_seed_skips_malformed_messages():
    g = Group(["alice", "bob"])
    g.send("alice", b"1")
    fresh = g.new_session("alice", [handle("alice"), handle("bob")])
    batch = [(handle("bob"), b"\x00garbage"), *[(m.sender, m.wire) for m in g.room.log]]
    assert fresh.seed_from_history(batch)


def test_own_key_record_is_ignored_on_receive():
    g = Group(["alice", "bob"])
    out, _ = g.send("alice", b"1")
    msg = records(out.wire)
    extra = msg.records[1:] + (TlvRecord(RecordType.OWN_KEY, bytes(16)),)
    wire = g.sessions["alice"]._sign(list(extra))
    assert g.sessions["bob"].receive_message(wire, handle("alice")).payload == b"1"
    assert encode_record(TlvRecord(RecordType.OWN_KEY, b"")) == b"\x0a\x00\x00"


# -- randomized membership churn ------------------------------------------

from hypothesis import HealthCheck, given, settings  # noqa: E402
from hypothesis import strategies as st  # noqa: E402

NAMES = ["alice", "bob", "carol", "dave", "erin"]
ops_st = st.lists(
    st.tuples(st.sampled_from(["send", "send", "send", "blind", "include", "exclude"]), st.integers(0, 4), st.integers(0, 4)),
    min_size=1,
    max_size=40,
)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(ops_st)
def test_membership_churn_invariants(ops):
    g = Group(NAMES[:3], observers=NAMES[3:], policy=RotationPolicy(rotate_after_sent=4, resend_after_total=7))
    members = set(NAMES[:3])
    for op, i, j in ops:
        actor = sorted(members)[i % len(members)]
        session = g.sessions[actor]
        if op in ("include", "exclude"):
            target = NAMES[j]
            if op == "include" and target not in members:
                session.alter_participants(include=[handle(target)])
                members.add(target)
            elif op == "exclude" and target in members and target != actor and len(members) > 2:
                session.alter_participants(exclude=[handle(target)])
                members.discard(target)
            else:
                continue
            payload = b"alter by " + actor.encode()
        elif op == "blind":
            payload = None
        else:
            payload = b"msg from " + actor.encode()

        if payload is None:
            g.now += 1
            out = session.send_key_reminder(g.now)
            seq = g.room.post(g.h[actor], out.wire)
            results = {n: box[-1][1] for n, box in g.inbox.items() if box and box[-1][0] == seq}
        else:
            out, results = g.send(actor, payload)
        msg = decode_message(out.wire)
        recipients = msg.values(RecordType.RECIPIENT)

        # structural and authenticity invariants of every emitted message
        assert len(recipients) == len(msg.values(RecordType.KEYS))
        assert crypto.verify_message(signed_span(out.wire), msg.signature, g.keys[actor][0].public_key)
        for s in g.sessions.values():
            assert not (s.pending_include & s.pending_exclude)
            assert s.me in s.participants
        assert not session.pending_include and not session.pending_exclude or out.type == MessageType.GROUP_FOLLOWUP
        if out.type != MessageType.GROUP_FOLLOWUP:
            assert set(recipients) == {g.h[n] for n in members} - {g.h[actor]}
            assert not session.pending_include and not session.pending_exclude

        for name, res in results.items():
            assert not isinstance(res, Exception), res
            if name in members:
                assert res.payload == payload
            else:
                assert res.payload is None


def test_reincluded_participant_rekeys():
    g = Group(["alice", "bob", "carol"], observers=["dave"])
    g.send("carol", b"carol's first key")
    g.sessions["alice"].alter_participants(exclude=[handle("carol")])
    g.send("alice", b"carol out")
    g.sessions["alice"].alter_participants(include=[handle("dave")])
    g.send("alice", b"dave in")
    g.sessions["alice"].alter_participants(include=[handle("carol")])
    g.send("alice", b"carol back")
    out, results = g.send("carol", b"hello again")
    # dave never saw carol's old key, so carol must distribute a fresh one
    assert out.type == MessageType.GROUP_KEYED
    assert results["dave"].payload == b"hello again"
    assert results["bob"].payload == b"hello again"

"""Core model: identifier grammar, mention parsing, canonical encoding.

Mention parsing is checked against an independent character-scan oracle;
encoding against a round-trip property and frozen byte vectors.
"""

from __future__ import annotations

import json
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parley.errors import (
    BAD_AGENT_ID,
    BAD_REQUEST,
    BODY_TOO_LARGE,
    ENCODING_ERROR,
    ProtocolError,
)
from parley.model import (
    MAX_BODY_BYTES,
    Message,
    Plan,
    PlanStep,
    decode_message,
    encode_message,
    parse_mentions,
    validate_agent_id,
    validate_body,
    validate_plan,
)

ID_FIRST = string.ascii_lowercase
ID_REST = string.ascii_lowercase + string.digits + "_-"


def oracle_mentions(body: str, explicit: list[str], registry: set[str]) -> list[str]:
    """Reference mention scan: walk characters, collect maximal @tokens."""
    found: list[str] = []
    i = 0
    while i < len(body):
        if body[i] == "@" and i + 1 < len(body) and body[i + 1] in ID_FIRST:
            j = i + 1
            while j < len(body) and body[j] in ID_REST and (j - i) <= 64:
                j += 1
            token = body[i + 1 : j]
            if token in registry:
                found.append(token)
            i = j
        else:
            i += 1
    out: list[str] = []
    for a in list(explicit) + found:
        if a not in out:
            out.append(a)
    return out


# --- agent ids ---------------------------------------------------------------


def test_valid_ids_accepted() -> None:
    for ok in ["web", "reasoning_coding", "a", "z9", "a" * 64, "x-y_z2"]:
        assert validate_agent_id(ok) == ok


def test_digit_start_rejected_with_position() -> None:
    with pytest.raises(ProtocolError) as e:
        validate_agent_id("9bots")
    assert e.value.code == BAD_AGENT_ID
    assert "position 0" in e.value.message


@pytest.mark.parametrize(
    "bad,pos",
    [
        ("", 0),
        ("Web", 0),
        ("_web", 0),
        ("-web", 0),
        ("we b", 2),
        ("web!", 3),
        ("wEb", 1),
        ("a" * 65, 64),
        ("agént", 2),
    ],
)
def test_bad_ids_name_offending_position(bad: str, pos: int) -> None:
    with pytest.raises(ProtocolError) as e:
        validate_agent_id(bad)
    assert e.value.code == BAD_AGENT_ID
    assert f"position {pos}" in e.value.message


def test_id_comparison_is_byte_equality() -> None:
    # No case folding anywhere: uppercase variants are simply invalid.
    with pytest.raises(ProtocolError):
        validate_agent_id("Reasoning_Coding")


# --- mention parsing ----------------------------------------------------------


def test_mention_dedup_and_unknown_skip() -> None:
    registry = {"web", "planner"}
    got = parse_mentions("@web and @web and @unknown", ["web"], registry)
    assert got == ["web"]
    assert got == oracle_mentions("@web and @web and @unknown", ["web"], registry)


def test_explicit_entries_come_first_in_order() -> None:
    registry = {"a1", "b2", "c3"}
    got = parse_mentions("@c3 then @a1", ["b2", "a1"], registry)
    assert got == ["b2", "a1", "c3"]


def test_token_terminated_by_non_grammar_char() -> None:
    registry = {"web"}
    assert parse_mentions("@web, hello", [], registry) == ["web"]
    assert parse_mentions("(@web)", [], registry) == ["web"]
    # "@web2" is a different (unknown) token, not a mention of "web".
    assert parse_mentions("@web2 hello", [], registry) == []


def test_uppercase_never_matches() -> None:
    assert parse_mentions("@Web @WEB", [], {"web"}) == []


@settings(max_examples=200, deadline=None)
@given(
    body=st.text(
        alphabet=st.sampled_from(list(" @abc_-12.,!xyz")),
        max_size=80,
    ),
    explicit=st.lists(st.sampled_from(["ax", "bx", "cx"]), max_size=3),
    registry=st.sets(st.sampled_from(["ax", "bx", "cx", "a", "b1", "xyz"]), max_size=6),
)
def test_mentions_match_character_scan_oracle(body, explicit, registry) -> None:
    reg = set(registry) | set(explicit)
    assert parse_mentions(body, explicit, reg) == oracle_mentions(body, explicit, reg)


# --- body validation ----------------------------------------------------------


def test_vote_body_exact_values_only() -> None:
    validate_body("vote", "approve")
    validate_body("vote", "reject")
    for bad in ["Approve", "approve ", "yes", ""]:
        with pytest.raises(ProtocolError) as e:
            validate_body("vote", bad)
        assert e.value.code == BAD_REQUEST


def test_critique_prefix_required() -> None:
    validate_body("critique", "accept: looks right")
    validate_body("critique", "uncertain: missing data")
    with pytest.raises(ProtocolError):
        validate_body("critique", "reject: nope")


def test_multiline_bodies_rejected() -> None:
    with pytest.raises(ProtocolError) as e:
        validate_body("chat", "one\ntwo")
    assert e.value.code == BAD_REQUEST


def test_body_size_limit_in_utf8_bytes() -> None:
    validate_body("chat", "x" * MAX_BODY_BYTES)
    with pytest.raises(ProtocolError) as e:
        validate_body("chat", "x" * (MAX_BODY_BYTES + 1))
    assert e.value.code == BODY_TOO_LARGE
    # Multibyte characters count by encoded size, not code points.
    with pytest.raises(ProtocolError):
        validate_body("chat", "é" * (MAX_BODY_BYTES // 2 + 1))


def test_unpaired_surrogate_is_encoding_error() -> None:
    with pytest.raises(ProtocolError) as e:
        validate_body("chat", "bad \ud800 body")
    assert e.value.code == ENCODING_ERROR


# --- canonical encoding -------------------------------------------------------


def test_frozen_encoding_vector() -> None:
    m = Message(
        thread="0" * 32, seq=1, sender="planner", kind="chat", body="hi",
        mentions=(), ts_ms=0,
    )
    expected = (
        '{"seq":1,"thread":"' + "0" * 32 + '","sender":"planner",'
        '"kind":"chat","body":"hi","mentions":[],"ts_ms":0}\n'
    ).encode()
    assert encode_message(m) == expected


def test_encoding_is_single_line_utf8() -> None:
    m = Message(
        thread="a" * 32, seq=3, sender="web", kind="result",
        body="café counts: 42", mentions=("planner",), ts_ms=17,
    )
    raw = encode_message(m)
    assert raw.endswith(b"\n") and raw.count(b"\n") == 1
    assert "café".encode("utf-8") in raw


def test_mention_order_changes_bytes() -> None:
    a = Message("b" * 32, 1, "web", "chat", "x", ("p1", "q1"), 0)
    b = Message("b" * 32, 1, "web", "chat", "x", ("q1", "p1"), 0)
    assert encode_message(a) != encode_message(b)


def test_surrogate_body_encode_error() -> None:
    m = Message("c" * 32, 1, "web", "chat", "\udcff", (), 0)
    with pytest.raises(ProtocolError) as e:
        encode_message(m)
    assert e.value.code == ENCODING_ERROR


def test_decode_rejects_extra_missing_and_malformed() -> None:
    good = encode_message(Message("d" * 32, 1, "web", "chat", "x", (), 0))
    obj = json.loads(good)
    obj["extra"] = 1
    with pytest.raises(ProtocolError):
        decode_message(json.dumps(obj))
    del obj["extra"], obj["seq"]
    with pytest.raises(ProtocolError):
        decode_message(json.dumps(obj))
    with pytest.raises(ProtocolError):
        decode_message(b"not json at all")
    with pytest.raises(ProtocolError):
        decode_message('{"seq":0,"thread":"t","sender":"s","kind":"chat","body":"","mentions":[],"ts_ms":0}')


_ids = st.from_regex(r"[a-z][a-z0-9_-]{0,8}", fullmatch=True)
_messages = st.builds(
    Message,
    thread=st.from_regex(r"[0-9a-f]{32}", fullmatch=True),
    seq=st.integers(min_value=1, max_value=10**9),
    sender=_ids,
    kind=st.sampled_from(["chat", "plan", "result", "progress", "system"]),
    body=st.text(max_size=200).filter(
        lambda s: "\n" not in s and "\r" not in s and _utf8_ok(s)
    ),
    mentions=st.lists(_ids, max_size=4, unique=True).map(tuple),
    ts_ms=st.integers(min_value=0, max_value=2**53),
)


def _utf8_ok(s: str) -> bool:
    try:
        s.encode("utf-8")
        return True
    except UnicodeEncodeError:
        return False


@settings(max_examples=300, deadline=None)
@given(m=_messages)
def test_encode_decode_round_trip(m: Message) -> None:
    assert decode_message(encode_message(m)) == m


# --- plan validation ----------------------------------------------------------


def test_plan_allocation_must_reference_steps() -> None:
    plan = Plan(
        version=0, goal="g",
        steps=(PlanStep("s1", "one"),),
        allocation={"web": ("s2",)},
    )
    with pytest.raises(ProtocolError):
        validate_plan(plan)


def test_plan_step_cannot_be_double_allocated() -> None:
    plan = Plan(
        version=0, goal="g",
        steps=(PlanStep("s1", "one"),),
        allocation={"web": ("s1",), "doc": ("s1",)},
    )
    with pytest.raises(ProtocolError):
        validate_plan(plan)


def test_plan_unallocated_steps_are_fine() -> None:
    plan = Plan(
        version=2, goal="g",
        steps=(PlanStep("s1", "one"), PlanStep("s2", "two")),
        allocation={"web": ("s1",)},
    )
    assert validate_plan(plan) is plan
    assert plan.allocated_steps() == ["s1"]

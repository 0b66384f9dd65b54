import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satfed.crypto import (
    Digest,
    KeyRegistry,
    PrincipalRole,
    TokenKind,
    canonical_json,
    compute_digest,
    compute_token,
    generate_keypair,
    hash_bytes,
    sign,
    verify,
)
from satfed.errors import FormatError, RegistryError


def test_sha256_known_answer():
    # Published known-answer vector for the empty string.
    assert hash_bytes(b"").hex == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


def test_hash_determinism_and_avalanche():
    import random

    rng = random.Random(7)
    for _ in range(200):
        payload = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 64)))
        assert hash_bytes(payload) == hash_bytes(payload)
        flipped = bytearray(payload)
        bit = rng.randrange(len(payload) * 8)
        flipped[bit // 8] ^= 1 << (bit % 8)
        assert hash_bytes(bytes(flipped)) != hash_bytes(payload)


def test_digest_requires_32_bytes():
    with pytest.raises(FormatError):
        Digest(b"short")


def test_canonical_json_sorts_keys_and_strips_whitespace():
    assert canonical_json({"b": 1, "a": 2}) == b'{"a":2,"b":1}'
    assert canonical_json({"x": 0.5, "n": 3}) == b'{"n":3,"x":0.5}'


def test_canonical_json_float_round_trip():
    import json

    for value in [0.1, 1e-9, 123456.789, 2.0, -0.0]:
        encoded = canonical_json({"v": value})
        assert json.loads(encoded)["v"] == value


def test_digest_changes_with_metadata_round():
    d1 = compute_digest(b"cipher", b"sig", {"round": 1})
    d2 = compute_digest(b"cipher", b"sig", {"round": 2})
    assert d1 != d2
    assert d1 == compute_digest(b"cipher", b"sig", {"round": 1})


def test_token_determinism_and_separation():
    content = hash_bytes(b"model-bytes")
    t1 = compute_token("v1", "s1", 3, 120.0, content, TokenKind.LOCAL_UPDATE)
    assert t1 == compute_token("v1", "s1", 3, 120.0, content, TokenKind.LOCAL_UPDATE)
    assert t1 != compute_token("v1", "s1", 4, 120.0, content, TokenKind.LOCAL_UPDATE)
    assert t1.bytes32 != compute_token(
        "v1", "s1", 3, 120.0, content, TokenKind.GLOBAL_MODEL
    ).bytes32


@given(
    a=st.tuples(st.text(max_size=8), st.text(max_size=8)),
    b=st.tuples(st.text(max_size=8), st.text(max_size=8)),
)
@settings(max_examples=200, deadline=None)
def test_token_preimage_unambiguous(a, b):
    # Length prefixing means distinct (vendor, sat) tuples never collide,
    # even when their concatenations are identical strings.
    content = hash_bytes(b"x")
    ta = compute_token(a[0], a[1], 0, 0.0, content, TokenKind.LOCAL_UPDATE)
    tb = compute_token(b[0], b[1], 0, 0.0, content, TokenKind.LOCAL_UPDATE)
    assert (ta == tb) == (a == b)


def test_sign_verify_round_trip():
    pub, sec = generate_keypair(b"vendor-1")
    sig = sign(b"message", sec)
    assert len(sig) == 64 and len(pub) == 32
    assert verify(b"message", sig, pub)
    assert sig == sign(b"message", sec)  # deterministic scheme


def test_verify_rejects_wrong_key_and_mutation():
    pub, sec = generate_keypair(b"vendor-1")
    other_pub, _ = generate_keypair(b"vendor-2")
    sig = sign(b"message", sec)
    assert not verify(b"message", sig, other_pub)
    assert not verify(b"messagf", sig, pub)
    assert not verify(b"message", sig[:-1] + bytes([sig[-1] ^ 1]), pub)


def test_sign_rejects_malformed_keys():
    with pytest.raises(FormatError):
        sign(b"m", b"too-short")
    with pytest.raises(FormatError):
        verify(b"m", b"\x00" * 64, b"short-key")


def test_registry_append_only():
    reg = KeyRegistry()
    pub, _ = generate_keypair(b"v")
    reg.register("v1", PrincipalRole.VENDOR, pub)
    with pytest.raises(RegistryError):
        reg.register("v1", PrincipalRole.VENDOR, pub)
    assert reg.get("v1").role == PrincipalRole.VENDOR
    assert reg.contains("v1") and not reg.contains("v2")
    with pytest.raises(RegistryError):
        reg.get("v2")


def test_registry_roles_listing():
    reg = KeyRegistry()
    pub, _ = generate_keypair(b"k")
    reg.register("val-1", PrincipalRole.VALIDATOR, pub, owner_vendor="v1")
    reg.register("v1", PrincipalRole.VENDOR, pub)
    assert reg.principals(PrincipalRole.VALIDATOR) == ["val-1"]
    assert reg.get("val-1").owner_vendor == "v1"


def test_sha256_matches_hashlib_independent_path():
    payload = b"cross-check"
    assert hash_bytes(payload).bytes32 == hashlib.sha256(payload).digest()

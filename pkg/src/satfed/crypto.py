"""Content hashing, canonical encoding, signatures, tokens, and the key registry.

All hashes are SHA-256. Canonical JSON is UTF-8 with lexicographically
sorted keys, no insignificant whitespace, unquoted integers, and floats
rendered as their shortest round-trip decimal, so byte-identical encodings
are reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import FormatError, RegistryError

HASH_LEN = 32
PUBLIC_KEY_LEN = 32
SECRET_KEY_LEN = 32
SIGNATURE_LEN = 64

ZERO32 = b"\x00" * HASH_LEN


@dataclass(frozen=True)
class Digest:
    """A 32-byte SHA-256 value."""

    bytes32: bytes

    def __post_init__(self):
        if not isinstance(self.bytes32, bytes) or len(self.bytes32) != HASH_LEN:
            raise FormatError("digest must be exactly 32 bytes")

    @property
    def hex(self) -> str:
        return self.bytes32.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        try:
            raw = bytes.fromhex(text)
        except ValueError as exc:
            raise FormatError(f"invalid digest hex: {text!r}") from exc
        return cls(raw)

    def __str__(self) -> str:
        return self.hex


ZERO_DIGEST = Digest(ZERO32)


def hash_bytes(payload: bytes) -> Digest:
    return Digest(hashlib.sha256(payload).digest())


def canonical_json(obj) -> bytes:
    """Deterministic JSON encoding used for every hashed or signed structure."""
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


def _length_prefixed(*fields: bytes) -> bytes:
    # 4-byte little-endian length before each field keeps the preimage
    # unambiguous under concatenation.
    out = bytearray()
    for field in fields:
        out += struct.pack("<I", len(field))
        out += field
    return bytes(out)


class TokenKind(str, Enum):
    LOCAL_UPDATE = "LocalUpdate"
    PARTIAL_AGGREGATE = "PartialAggregate"
    GLOBAL_MODEL = "GlobalModel"


_TOKEN_TAGS = {
    TokenKind.LOCAL_UPDATE: b"token/local-update",
    TokenKind.PARTIAL_AGGREGATE: b"token/partial-aggregate",
    TokenKind.GLOBAL_MODEL: b"token/global-model",
}


@dataclass(frozen=True)
class ContributionToken:
    """Compact hash binding an artifact to its source, round, time, and content."""

    bytes32: bytes
    kind: TokenKind

    def __post_init__(self):
        if len(self.bytes32) != HASH_LEN:
            raise FormatError("token must be exactly 32 bytes")

    @property
    def hex(self) -> str:
        return self.bytes32.hex()


def compute_token(
    vendor_id: str,
    sat_id: str,
    round_index: int,
    timestamp_s: float,
    content_hash: Digest,
    kind: TokenKind,
) -> ContributionToken:
    preimage = _length_prefixed(
        _TOKEN_TAGS[kind],
        vendor_id.encode("utf-8"),
        sat_id.encode("utf-8"),
        struct.pack("<Q", round_index),
        struct.pack("<d", timestamp_s),
        content_hash.bytes32,
    )
    return ContributionToken(hash_bytes(preimage).bytes32, kind)


def compute_digest(ciphertext: bytes, signature: bytes, meta_map: dict) -> Digest:
    """Digest over ciphertext, signature, and canonical metadata."""
    return hash_bytes(ciphertext + signature + canonical_json(meta_map))


# --- signatures -----------------------------------------------------------

def generate_keypair(seed: bytes) -> tuple[bytes, bytes]:
    """Derive a deterministic (public, secret) Ed25519 pair from seed material."""
    secret = hashlib.sha256(b"satfed/keygen|" + seed).digest()
    private = Ed25519PrivateKey.from_private_bytes(secret)
    public = private.public_key().public_bytes_raw()
    return public, secret


def sign(message: bytes, secret_key: bytes) -> bytes:
    """Deterministic Ed25519 signature over the SHA-256 of the message."""
    if len(secret_key) != SECRET_KEY_LEN:
        raise FormatError("secret key must be 32 bytes")
    private = Ed25519PrivateKey.from_private_bytes(secret_key)
    return private.sign(hashlib.sha256(message).digest())


def verify(message: bytes, signature: bytes, public_key: bytes) -> bool:
    if len(public_key) != PUBLIC_KEY_LEN:
        raise FormatError("public key must be 32 bytes")
    if len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(
            signature, hashlib.sha256(message).digest()
        )
        return True
    except InvalidSignature:
        return False


# --- key registry ---------------------------------------------------------

class PrincipalRole(str, Enum):
    VENDOR = "vendor"
    SATELLITE = "satellite"
    VALIDATOR = "validator"


@dataclass(frozen=True)
class RegistryEntry:
    role: PrincipalRole
    public_key: bytes
    owner_vendor: str | None = None


class KeyRegistry:
    """Append-only map of principal ids to roles and public keys."""

    def __init__(self):
        self._entries: dict[str, RegistryEntry] = {}

    def register(
        self,
        principal_id: str,
        role: PrincipalRole,
        public_key: bytes,
        owner_vendor: str | None = None,
    ) -> None:
        if principal_id in self._entries:
            raise RegistryError(f"principal already registered: {principal_id}")
        if len(public_key) != PUBLIC_KEY_LEN:
            raise FormatError("public key must be 32 bytes")
        self._entries[principal_id] = RegistryEntry(role, public_key, owner_vendor)

    def get(self, principal_id: str) -> RegistryEntry:
        try:
            return self._entries[principal_id]
        except KeyError:
            raise RegistryError(f"unknown principal: {principal_id}") from None

    def contains(self, principal_id: str) -> bool:
        return principal_id in self._entries

    def role_of(self, principal_id: str) -> PrincipalRole:
        return self.get(principal_id).role

    def public_key(self, principal_id: str) -> bytes:
        return self.get(principal_id).public_key

    def principals(self, role: PrincipalRole | None = None) -> list[str]:
        if role is None:
            return sorted(self._entries)
        return sorted(p for p, e in self._entries.items() if e.role == role)

    def __len__(self) -> int:
        return len(self._entries)

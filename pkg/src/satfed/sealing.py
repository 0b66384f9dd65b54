"""Sealing and signing of model updates before upload.

Two schemes share one envelope: `plaintext` serializes the model as-is, and
`additive_mask` adds a PRG-expanded mask so a collecting platform only ever
sees masked parameters. Mask arithmetic runs in float64 and the masked
vector is serialized as float64, which keeps seal -> unseal bit-exact for
parameters that are zero or of magnitude above ~1e-7 (mask entries are
standard-normal, so the float64 rounding error stays far below half an ulp
of any such float32 parameter).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .crypto import Digest, canonical_json, generate_keypair, hash_bytes, sign, verify
from .errors import AuthorizationError, CryptoError, FormatError

MASKED_MAGIC = b"MSK1"


class SealScheme(str, Enum):
    PLAINTEXT = "plaintext"
    ADDITIVE_MASK = "additive_mask"


@dataclass(frozen=True)
class UpdateMetadata:
    """Signed companion record for one sealed update."""

    vendor_id: str
    sat_id: str
    round: int
    data_size: int
    fetch_round: int
    timestamp_s: float

    def __post_init__(self):
        if self.data_size < 1:
            raise FormatError("data_size must be at least 1")
        if self.fetch_round > self.round:
            raise FormatError("fetch_round cannot exceed the commit round")

    def to_map(self) -> dict:
        return {
            "vendor_id": self.vendor_id,
            "sat_id": self.sat_id,
            "round": self.round,
            "data_size": self.data_size,
            "fetch_round": self.fetch_round,
            "timestamp_s": self.timestamp_s,
        }

    @classmethod
    def from_map(cls, m: dict) -> "UpdateMetadata":
        return cls(
            vendor_id=m["vendor_id"],
            sat_id=m["sat_id"],
            round=int(m["round"]),
            data_size=int(m["data_size"]),
            fetch_round=int(m["fetch_round"]),
            timestamp_s=float(m["timestamp_s"]),
        )


@dataclass
class SealingKey:
    """Vendor-held mask seed and signing keypair."""

    vendor_id: str
    secret_seed: bytes
    public_key: bytes
    secret_key: bytes

    @classmethod
    def create(cls, vendor_id: str, seed_material: bytes) -> "SealingKey":
        public, secret = generate_keypair(seed_material + b"|sign")
        mask_seed = hashlib.sha256(b"satfed/mask-seed|" + seed_material).digest()
        return cls(vendor_id, mask_seed, public, secret)


@dataclass
class SealedUpdate:
    ciphertext: bytes
    metadata: UpdateMetadata
    signature: bytes
    scheme: SealScheme

    @property
    def ciphertext_hash(self) -> Digest:
        return hash_bytes(self.ciphertext)

    @property
    def payload_bytes(self) -> int:
        return len(self.ciphertext)


def signing_payload(ciphertext_hash: Digest, meta: UpdateMetadata) -> bytes:
    """What the vendor signs: the ciphertext hash bound to the canonical metadata.

    Signing the hash rather than the raw ciphertext lets ledger validators
    re-check the signature from on-chain fields alone; any ciphertext bit
    flip still breaks verification because verifiers recompute the hash.
    """
    return ciphertext_hash.bytes32 + canonical_json(meta.to_map())


def expand_mask(secret_seed: bytes, vendor_id: str, sat_id: str, round_index: int, dim: int) -> np.ndarray:
    material = hashlib.sha256(
        b"satfed/mask|"
        + secret_seed
        + vendor_id.encode()
        + b"|"
        + sat_id.encode()
        + b"|"
        + struct.pack("<Q", round_index)
    ).digest()
    rng = np.random.default_rng(int.from_bytes(material[:8], "little"))
    return rng.standard_normal(dim)


def _encode_masked(masked: np.ndarray) -> bytes:
    return MASKED_MAGIC + struct.pack("<I", masked.shape[0]) + masked.astype("<f8").tobytes()


def _decode_masked(raw: bytes) -> np.ndarray:
    if raw[:4] != MASKED_MAGIC or len(raw) < 8:
        raise CryptoError("ciphertext is not a masked-model envelope")
    (dim,) = struct.unpack("<I", raw[4:8])
    body = raw[8:]
    if len(body) != 8 * dim:
        raise CryptoError("masked envelope length does not match its dim header")
    return np.frombuffer(body, dtype="<f8").copy()


def seal_update(model, meta: UpdateMetadata, key: SealingKey, scheme: SealScheme) -> SealedUpdate:
    if key.vendor_id != meta.vendor_id:
        raise AuthorizationError(
            f"key for {key.vendor_id} cannot seal an update from {meta.vendor_id}"
        )
    if scheme == SealScheme.PLAINTEXT:
        ciphertext = model.to_bytes()
    else:
        mask = expand_mask(key.secret_seed, meta.vendor_id, meta.sat_id, meta.round, model.dim)
        ciphertext = _encode_masked(model.values.astype(np.float64) + mask)
    signature = sign(signing_payload(hash_bytes(ciphertext), meta), key.secret_key)
    return SealedUpdate(ciphertext, meta, signature, scheme)


def verify_sealed(sealed: SealedUpdate, vendor_public_key: bytes) -> bool:
    payload = signing_payload(sealed.ciphertext_hash, sealed.metadata)
    return verify(payload, sealed.signature, vendor_public_key)


class MaskEscrow:
    """Holds the per-vendor mask material so an authorized party can unseal.

    Stands in for the threshold-decryption/reveal step: the aggregator sees
    unmasked parameters only through this escrow, never raw satellite data.
    """

    def __init__(self):
        self._seeds: dict[str, bytes] = {}

    def register_vendor(self, vendor_id: str, secret_seed: bytes) -> None:
        self._seeds[vendor_id] = secret_seed

    def unseal(self, sealed: SealedUpdate):
        from .model import ModelVector

        if sealed.scheme == SealScheme.PLAINTEXT:
            return ModelVector.from_bytes(sealed.ciphertext)
        meta = sealed.metadata
        if meta.vendor_id not in self._seeds:
            raise CryptoError(f"no escrowed mask material for vendor {meta.vendor_id}")
        masked = _decode_masked(sealed.ciphertext)
        mask = expand_mask(
            self._seeds[meta.vendor_id], meta.vendor_id, meta.sat_id, meta.round, masked.shape[0]
        )
        return ModelVector((masked - mask).astype(np.float32))

"""Shared scaffolding: a small federation with keys, genesis, and signed blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from satfed.crypto import (
    ContributionToken,
    Digest,
    PrincipalRole,
    TokenKind,
    compute_digest,
    compute_token,
    generate_keypair,
)
from satfed.ledger import (
    Block,
    Chain,
    LedgerEvent,
    build_genesis,
    build_next_block,
    emit_commit,
    emit_key_registration,
    sign_block,
)
from satfed.model import ModelVector
from satfed.sealing import (
    MaskEscrow,
    SealScheme,
    SealedUpdate,
    SealingKey,
    UpdateMetadata,
    seal_update,
)


@dataclass
class Federation:
    vendors: dict[str, SealingKey] = field(default_factory=dict)
    validator_keys: dict[str, tuple[bytes, bytes]] = field(default_factory=dict)  # id -> (pub, sec)
    satellites: list[tuple[str, str]] = field(default_factory=list)  # (vendor, sat)
    registrations: list[LedgerEvent] = field(default_factory=list)

    @property
    def validator_ids(self) -> list[str]:
        return sorted(self.validator_keys)

    def escrow(self) -> MaskEscrow:
        escrow = MaskEscrow()
        for vendor_id, key in self.vendors.items():
            escrow.register_vendor(vendor_id, key.secret_seed)
        return escrow

    def make_chain(self) -> Chain:
        return Chain(build_genesis(self.registrations))


def make_federation(
    n_vendors: int = 1,
    sats_per_vendor: int = 3,
    n_validators: int = 5,
    validator_owner: str | None = None,
) -> Federation:
    fed = Federation()
    for v in range(n_vendors):
        vendor_id = f"vendor-{chr(ord('a') + v)}"
        key = SealingKey.create(vendor_id, f"seed:{vendor_id}".encode())
        fed.vendors[vendor_id] = key
        fed.registrations.append(
            emit_key_registration(vendor_id, PrincipalRole.VENDOR, key.public_key)
        )
        for s in range(sats_per_vendor):
            sat_id = f"{vendor_id}-sat{s}"
            fed.satellites.append((vendor_id, sat_id))
            fed.registrations.append(
                emit_key_registration(
                    sat_id, PrincipalRole.SATELLITE, key.public_key, owner_vendor=vendor_id
                )
            )
    first_vendor = next(iter(fed.vendors)) if fed.vendors else None
    for i in range(n_validators):
        vid = f"validator-{i}"
        pub, sec = generate_keypair(f"validator:{i}".encode())
        fed.validator_keys[vid] = (pub, sec)
        fed.registrations.append(
            emit_key_registration(
                vid, PrincipalRole.VALIDATOR, pub,
                owner_vendor=validator_owner or first_vendor,
            )
        )
    return fed


def make_sealed_update(
    fed: Federation,
    vendor_id: str,
    sat_id: str,
    round_index: int,
    values=None,
    data_size: int = 100,
    fetch_round: int | None = None,
    timestamp_s: float = 0.0,
    scheme: SealScheme = SealScheme.PLAINTEXT,
) -> SealedUpdate:
    if values is None:
        rng = np.random.default_rng(abs(hash((vendor_id, sat_id, round_index))) % 2**32)
        values = rng.normal(size=8).astype(np.float32)
    model = ModelVector(np.asarray(values, dtype=np.float32))
    meta = UpdateMetadata(
        vendor_id, sat_id, round_index, data_size,
        fetch_round if fetch_round is not None else round_index, timestamp_s,
    )
    return seal_update(model, meta, fed.vendors[vendor_id], scheme)


def commit_event_for(sealed: SealedUpdate, emitter_id: str = "validator-0") -> LedgerEvent:
    meta = sealed.metadata
    token = compute_token(
        meta.vendor_id, meta.sat_id, meta.round, meta.timestamp_s,
        sealed.ciphertext_hash, TokenKind.LOCAL_UPDATE,
    )
    digest = compute_digest(sealed.ciphertext, sealed.signature, meta.to_map())
    return emit_commit(
        meta, digest, token, emitter_id, sealed.ciphertext_hash, sealed.signature
    )


def finalize_block(
    fed: Federation,
    chain: Chain,
    events: list[LedgerEvent],
    proposer: str | None = None,
    timestamp_s: float | None = None,
    signers: list[str] | None = None,
    quorum: int | None = None,
) -> Block:
    proposer = proposer or fed.validator_ids[chain.height % len(fed.validator_ids)]
    block = build_next_block(
        chain, events, proposer,
        chain.height * 10.0 if timestamp_s is None else timestamp_s,
    )
    for vid in signers or fed.validator_ids:
        sign_block(block, vid, fed.validator_keys[vid][1])
    chain.append_block(block, len(block.signatures) if quorum is None else quorum)
    return block

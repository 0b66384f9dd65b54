"""Hash-linked event ledger: blocks, chain state, validation, and audit.

The chain records five event kinds. Commit events carry an update's metadata,
ciphertext hash, and vendor signature; PartialAgg and GlobalAgg events bind
aggregation steps to the commit tokens they consumed; Distribute events point
at the off-chain artifact holding the fused model; KeyRegistration events
bootstrap and extend the key registry. Blocks batch events, link by hash, and
carry the validator signature set that finalized them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum

from .crypto import (
    ContributionToken,
    Digest,
    KeyRegistry,
    PrincipalRole,
    TokenKind,
    ZERO_DIGEST,
    canonical_json,
    compute_token,
    hash_bytes,
    verify,
)
from .errors import FormatError, FinalityError, LedgerError, NotFoundError, ProvenanceError
from .merkle import EMPTY_ROOT, MerkleAccumulator
from .sealing import UpdateMetadata, signing_payload

BETA_SUM_TOLERANCE = 1e-9


class EventKind(str, Enum):
    COMMIT = "Commit"
    PARTIAL_AGG = "PartialAgg"
    GLOBAL_AGG = "GlobalAgg"
    DISTRIBUTE = "Distribute"
    KEY_REGISTRATION = "KeyRegistration"


_TOKEN_KIND_FOR_EVENT = {
    EventKind.COMMIT: TokenKind.LOCAL_UPDATE,
    EventKind.PARTIAL_AGG: TokenKind.PARTIAL_AGGREGATE,
    EventKind.GLOBAL_AGG: TokenKind.GLOBAL_MODEL,
    EventKind.DISTRIBUTE: TokenKind.GLOBAL_MODEL,
}


@dataclass(frozen=True)
class LedgerEvent:
    kind: EventKind
    round: int
    token: ContributionToken | None
    digest: Digest
    emitter_id: str
    payload_meta: dict

    @property
    def key(self) -> str:
        """Mempool / dedup key: the token when present, else the digest."""
        return self.token.hex if self.token is not None else f"d:{self.digest.hex}"

    def to_map(self) -> dict:
        return {
            "kind": self.kind.value,
            "round": self.round,
            "token": None if self.token is None else {
                "bytes": self.token.hex, "kind": self.token.kind.value
            },
            "digest": self.digest.hex,
            "emitter_id": self.emitter_id,
            "payload_meta": self.payload_meta,
        }

    @classmethod
    def from_map(cls, m: dict) -> "LedgerEvent":
        try:
            token = m["token"]
            return cls(
                kind=EventKind(m["kind"]),
                round=int(m["round"]),
                token=None if token is None else ContributionToken(
                    bytes.fromhex(token["bytes"]), TokenKind(token["kind"])
                ),
                digest=Digest.from_hex(m["digest"]),
                emitter_id=m["emitter_id"],
                payload_meta=m["payload_meta"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed ledger event: {exc}") from exc


@dataclass
class Block:
    index: int
    prev_hash: Digest
    timestamp_s: float
    proposer_id: str
    events: list[LedgerEvent]
    round_root: Digest
    signatures: dict[str, bytes] = field(default_factory=dict)

    def header_map(self) -> dict:
        return {
            "index": self.index,
            "prev_hash": self.prev_hash.hex,
            "timestamp_s": self.timestamp_s,
            "proposer_id": self.proposer_id,
            "events": [e.to_map() for e in self.events],
            "round_root": self.round_root.hex,
        }

    def block_hash(self) -> Digest:
        return hash_bytes(canonical_json(self.header_map()))

    def to_map(self) -> dict:
        m = self.header_map()
        m["signatures"] = {vid: sig.hex() for vid, sig in sorted(self.signatures.items())}
        return m

    @classmethod
    def from_map(cls, m: dict) -> "Block":
        try:
            return cls(
                index=int(m["index"]),
                prev_hash=Digest.from_hex(m["prev_hash"]),
                timestamp_s=float(m["timestamp_s"]),
                proposer_id=m["proposer_id"],
                events=[LedgerEvent.from_map(e) for e in m["events"]],
                round_root=Digest.from_hex(m["round_root"]),
                signatures={vid: bytes.fromhex(s) for vid, s in m.get("signatures", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed block: {exc}") from exc


class Mempool:
    """Pending events keyed for exactly-once inclusion."""

    def __init__(self):
        self._pending: dict[str, LedgerEvent] = {}

    def add(self, event: LedgerEvent) -> bool:
        """Insert; False when the key is already pending (duplicate)."""
        if event.key in self._pending:
            return False
        self._pending[event.key] = event
        return True

    def drain_sorted(self) -> list[LedgerEvent]:
        """Remove and return all pending events in key (token) order."""
        events = [self._pending[k] for k in sorted(self._pending)]
        self._pending.clear()
        return events

    def peek_sorted(self) -> list[LedgerEvent]:
        return [self._pending[k] for k in sorted(self._pending)]

    def remove_included(self, events: list[LedgerEvent]) -> None:
        for event in events:
            self._pending.pop(event.key, None)

    def __len__(self) -> int:
        return len(self._pending)


class ArtifactStore:
    """Directory of content-addressed files: <hex sha-256>.model."""

    def __init__(self, root):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)

    def path_for(self, content_hash: Digest) -> str:
        return os.path.join(self.root, f"{content_hash.hex}.model")

    def put(self, content: bytes) -> Digest:
        digest = hash_bytes(content)
        path = self.path_for(digest)
        if not os.path.exists(path):
            with open(path, "wb") as fh:
                fh.write(content)
        return digest

    def get(self, content_hash: Digest) -> bytes:
        path = self.path_for(content_hash)
        if not os.path.exists(path):
            raise NotFoundError(f"no artifact stored under {content_hash.hex}")
        with open(path, "rb") as fh:
            return fh.read()

    def has(self, content_hash: Digest) -> bool:
        return os.path.exists(self.path_for(content_hash))


# --- event constructors -----------------------------------------------------

def emit_commit(
    meta: UpdateMetadata,
    digest: Digest,
    token: ContributionToken,
    emitter_id: str,
    ciphertext_hash: Digest,
    signature: bytes,
    event_round: int | None = None,
    scheme: str | None = None,
) -> LedgerEvent:
    payload = meta.to_map()
    payload["ciphertext_hash"] = ciphertext_hash.hex
    payload["signature"] = signature.hex()
    if scheme is not None:
        payload["scheme"] = scheme
    return LedgerEvent(
        kind=EventKind.COMMIT,
        round=meta.round if event_round is None else event_round,
        token=token,
        digest=digest,
        emitter_id=emitter_id,
        payload_meta=payload,
    )


def emit_partial_agg(
    hap_id: str,
    round_index: int,
    contributors: list[ContributionToken],
    token: ContributionToken,
    aggregate_hash: Digest,
    alphas: list[float],
    mass: float,
    known_tokens: set[str] | None = None,
) -> LedgerEvent:
    if known_tokens is not None:
        for c in contributors:
            if c.hex not in known_tokens:
                raise ProvenanceError(f"partial aggregate cites unknown commit {c.hex}")
    payload = {
        "hap_id": hap_id,
        "contributors": [c.hex for c in contributors],
        "alphas": list(alphas),
        "mass": mass,
        "aggregate_hash": aggregate_hash.hex,
    }
    return LedgerEvent(
        kind=EventKind.PARTIAL_AGG,
        round=round_index,
        token=token,
        digest=hash_bytes(canonical_json(payload)),
        emitter_id=hap_id,
        payload_meta=payload,
    )


def emit_global_agg(
    emitter_id: str,
    round_index: int,
    aggregate_tokens: list[ContributionToken],
    betas: list[float],
    token: ContributionToken,
    model_hash: Digest,
    known_tokens: set[str] | None = None,
) -> LedgerEvent:
    if known_tokens is not None:
        for t in aggregate_tokens:
            if t.hex not in known_tokens:
                raise ProvenanceError(f"global aggregate cites unknown partial {t.hex}")
    payload = {
        "aggregates": [t.hex for t in aggregate_tokens],
        "betas": list(betas),
        "model_hash": model_hash.hex,
    }
    return LedgerEvent(
        kind=EventKind.GLOBAL_AGG,
        round=round_index,
        token=token,
        digest=hash_bytes(canonical_json(payload)),
        emitter_id=emitter_id,
        payload_meta=payload,
    )


def emit_distribute(
    emitter_id: str,
    round_index: int,
    global_token: ContributionToken,
    uri: str,
    content_hash: Digest,
    timestamp_s: float,
    recipients: list[str] | None = None,
    known_tokens: set[str] | None = None,
) -> LedgerEvent:
    if known_tokens is not None and global_token.hex not in known_tokens:
        raise ProvenanceError(f"distribute cites unknown global token {global_token.hex}")
    payload = {
        "global_token": global_token.hex,
        "uri": uri,
        "content_hash": content_hash.hex,
        "recipients": recipients or [],
    }
    # The distribute token commits to the payload (URI included), so it never
    # collides with the GlobalAgg token over the same model bytes.
    payload_hash = hash_bytes(canonical_json(payload))
    token = compute_token(
        "", emitter_id, round_index, timestamp_s, payload_hash, TokenKind.GLOBAL_MODEL
    )
    return LedgerEvent(
        kind=EventKind.DISTRIBUTE,
        round=round_index,
        token=token,
        digest=payload_hash,
        emitter_id=emitter_id,
        payload_meta=payload,
    )


def emit_key_registration(
    principal_id: str,
    role: PrincipalRole,
    public_key: bytes,
    emitter_id: str = "genesis",
    owner_vendor: str | None = None,
    round_index: int = 0,
) -> LedgerEvent:
    payload = {
        "principal_id": principal_id,
        "role": role.value,
        "public_key": public_key.hex(),
        "owner_vendor": owner_vendor,
    }
    return LedgerEvent(
        kind=EventKind.KEY_REGISTRATION,
        round=round_index,
        token=None,
        digest=hash_bytes(canonical_json(payload)),
        emitter_id=emitter_id,
        payload_meta=payload,
    )


# --- chain ------------------------------------------------------------------

@dataclass
class Verdict:
    accepted: bool
    reasons: list[dict] = field(default_factory=list)

    @classmethod
    def reject(cls, code: str, detail: str) -> "Verdict":
        return cls(False, [{"code": code, "detail": detail}])

    def add(self, code: str, detail: str) -> None:
        self.accepted = False
        self.reasons.append({"code": code, "detail": detail})


def quorum_of(block: Block, registry: KeyRegistry) -> int:
    """Count distinct registered validators with verifying signatures."""
    block_hash = block.block_hash()
    count = 0
    for vid, sig in block.signatures.items():
        if not registry.contains(vid):
            continue
        entry = registry.get(vid)
        if entry.role != PrincipalRole.VALIDATOR:
            continue
        if verify(block_hash.bytes32, sig, entry.public_key):
            count += 1
    return count


class Chain:
    """Finalized blocks plus the replayable state derived from them."""

    def __init__(self, genesis: Block):
        verdict = _validate_genesis(genesis)
        if not verdict.accepted:
            raise LedgerError(f"invalid genesis block: {verdict.reasons}")
        self.blocks: list[Block] = []
        self.registry = KeyRegistry()
        self.round_accumulators: dict[int, MerkleAccumulator] = {}
        self.vendor_accumulators: dict[str, MerkleAccumulator] = {}
        self.token_locator: dict[str, tuple[int, int]] = {}
        self.tokens_by_round: dict[int, list[str]] = {}
        self.commits_by_round: dict[int, set[str]] = {}
        self.partials_by_round: dict[int, set[str]] = {}
        self.globals_by_round: dict[int, set[str]] = {}
        self._last_round_root: Digest = EMPTY_ROOT
        self._apply(genesis)

    # -- queries --

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks)

    def head_hash(self) -> Digest:
        return self.head.block_hash()

    def event_at(self, locator: tuple[int, int]) -> LedgerEvent:
        block_idx, event_idx = locator
        return self.blocks[block_idx].events[event_idx]

    def find_event(self, token_hex: str) -> LedgerEvent:
        if token_hex not in self.token_locator:
            raise NotFoundError(f"token not on chain: {token_hex}")
        return self.event_at(self.token_locator[token_hex])

    def known_token_keys(self) -> set[str]:
        return set(self.token_locator)

    # -- validation --

    def validate_block(self, block: Block) -> Verdict:
        verdict = Verdict(True)
        try:
            self._check_lineage(block, verdict)
            if verdict.accepted:
                self._check_events(block, verdict)
        except Exception as exc:  # malformed adversarial input must not crash
            verdict.add("malformed", f"{type(exc).__name__}: {exc}")
        return verdict

    def _check_lineage(self, block: Block, verdict: Verdict) -> None:
        if block.index != self.height:
            verdict.add("lineage", f"expected index {self.height}, got {block.index}")
            return
        if block.prev_hash != self.head_hash():
            verdict.add("lineage", "prev_hash does not match the chain head")
            return
        if not self.registry.contains(block.proposer_id):
            verdict.add("unknown_proposer", f"proposer {block.proposer_id} not registered")
            return
        if self.registry.get(block.proposer_id).role != PrincipalRole.VALIDATOR:
            verdict.add("unknown_proposer", f"proposer {block.proposer_id} is not a validator")

    def _check_events(self, block: Block, verdict: Verdict) -> None:
        seen_registrations = set(self.registry.principals())
        committed = {r: set(s) for r, s in self.commits_by_round.items()}
        partials = {r: set(s) for r, s in self.partials_by_round.items()}
        globals_ = {r: set(s) for r, s in self.globals_by_round.items()}
        block_tokens: set[str] = set()

        # Events inside one block finalize atomically and are ordered by token
        # hash, so reference checks run against the chain plus the whole block.
        for event in block.events:
            if event.kind == EventKind.KEY_REGISTRATION:
                continue
            if event.token is None:
                verdict.add("malformed", f"{event.kind.value} event without a token")
                continue
            tok = event.token.hex
            if tok in self.token_locator or tok in block_tokens:
                verdict.add("duplicate_token", f"token {tok} already finalized")
                continue
            block_tokens.add(tok)
            if event.kind == EventKind.COMMIT:
                committed.setdefault(event.round, set()).add(tok)
            elif event.kind == EventKind.PARTIAL_AGG:
                partials.setdefault(event.round, set()).add(tok)
            elif event.kind == EventKind.GLOBAL_AGG:
                globals_.setdefault(event.round, set()).add(tok)

        for event in block.events:
            if event.kind == EventKind.COMMIT:
                self._check_commit(event, seen_registrations, verdict)
            elif event.kind == EventKind.PARTIAL_AGG:
                for c in event.payload_meta.get("contributors", []):
                    if c not in committed.get(event.round, set()):
                        verdict.add(
                            "dangling_reference",
                            f"partial aggregate cites uncommitted token {c}",
                        )
                alphas = event.payload_meta.get("alphas", [])
                if alphas and abs(sum(alphas) - 1.0) > BETA_SUM_TOLERANCE:
                    verdict.add("bad_weights", "alpha weights do not sum to 1")
            elif event.kind == EventKind.GLOBAL_AGG:
                refs = event.payload_meta.get("aggregates", [])
                for t in refs:
                    if t not in partials.get(event.round, set()):
                        verdict.add(
                            "dangling_reference",
                            f"global aggregate cites unknown partial {t}",
                        )
                betas = event.payload_meta.get("betas", [])
                if len(betas) != len(refs):
                    verdict.add("bad_weights", "one beta required per aggregate")
                elif betas and abs(sum(betas) - 1.0) > BETA_SUM_TOLERANCE:
                    verdict.add("bad_weights", "beta weights do not sum to 1")
            elif event.kind == EventKind.DISTRIBUTE:
                ref = event.payload_meta.get("global_token")
                if ref not in globals_.get(event.round, set()):
                    verdict.add(
                        "dangling_reference", f"distribute cites unknown global {ref}"
                    )
            elif event.kind == EventKind.KEY_REGISTRATION:
                principal = event.payload_meta.get("principal_id")
                if principal in seen_registrations:
                    verdict.add("duplicate_registration", f"{principal} already registered")
                else:
                    seen_registrations.add(principal)

        expected_root = self._project_round_root(block)
        if expected_root != block.round_root:
            verdict.add("root_mismatch", "round_root does not match recomputation")

    def _check_commit(self, event: LedgerEvent, registered: set, verdict: Verdict) -> None:
        payload = event.payload_meta
        try:
            meta = UpdateMetadata.from_map(payload)
            ciphertext_hash = Digest.from_hex(payload["ciphertext_hash"])
            signature = bytes.fromhex(payload["signature"])
        except (KeyError, ValueError, FormatError) as exc:
            verdict.add("malformed", f"commit payload: {exc}")
            return
        if meta.vendor_id not in registered or meta.sat_id not in registered:
            verdict.add(
                "unregistered_contributor",
                f"{meta.vendor_id}/{meta.sat_id} not registered before commit",
            )
            return
        vendor_key = self.registry.get(meta.vendor_id).public_key
        if not verify(signing_payload(ciphertext_hash, meta), signature, vendor_key):
            verdict.add("bad_signature", f"commit {event.token.hex} signature invalid")

    def _project_round_root(self, block: Block) -> Digest:
        """Round accumulator root after applying this block's token events."""
        staged: dict[int, MerkleAccumulator] = {}
        last_root = self._last_round_root
        for event in block.events:
            if event.kind == EventKind.KEY_REGISTRATION or event.token is None:
                continue
            rnd = event.round
            if rnd not in staged:
                base = self.round_accumulators.get(rnd)
                staged[rnd] = base.copy() if base else MerkleAccumulator()
            staged[rnd].append(event.token.bytes32)
            last_root = staged[rnd].root
        return last_root

    # -- mutation --

    def append_block(self, block: Block, quorum_threshold: int) -> None:
        verdict = self.validate_block(block)
        if not verdict.accepted:
            raise LedgerError(f"block {block.index} rejected: {verdict.reasons}")
        have = quorum_of(block, self.registry)
        if have < quorum_threshold:
            raise FinalityError(
                f"block {block.index} has {have} valid signatures, quorum is {quorum_threshold}"
            )
        self._apply(block)

    def _apply(self, block: Block) -> None:
        block_idx = len(self.blocks)
        self.blocks.append(block)
        for event_idx, event in enumerate(block.events):
            if event.kind == EventKind.KEY_REGISTRATION:
                p = event.payload_meta
                self.registry.register(
                    p["principal_id"],
                    PrincipalRole(p["role"]),
                    bytes.fromhex(p["public_key"]),
                    p.get("owner_vendor"),
                )
                continue
            tok = event.token.hex
            self.token_locator[tok] = (block_idx, event_idx)
            self.tokens_by_round.setdefault(event.round, []).append(tok)
            acc = self.round_accumulators.setdefault(event.round, MerkleAccumulator())
            acc.append(event.token.bytes32)
            self._last_round_root = acc.root
            vendor = self._vendor_for(event)
            if vendor:
                vacc = self.vendor_accumulators.setdefault(vendor, MerkleAccumulator())
                vacc.append(event.token.bytes32)
            if event.kind == EventKind.COMMIT:
                self.commits_by_round.setdefault(event.round, set()).add(tok)
            elif event.kind == EventKind.PARTIAL_AGG:
                self.partials_by_round.setdefault(event.round, set()).add(tok)
            elif event.kind == EventKind.GLOBAL_AGG:
                self.globals_by_round.setdefault(event.round, set()).add(tok)

    def _vendor_for(self, event: LedgerEvent) -> str | None:
        if event.kind == EventKind.COMMIT:
            return event.payload_meta.get("vendor_id")
        if self.registry.contains(event.emitter_id):
            return self.registry.get(event.emitter_id).owner_vendor
        return None

    # -- persistence --

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for block in self.blocks:
                fh.write(canonical_json(block.to_map()).decode("utf-8"))
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "Chain":
        blocks = read_ledger_file(path)
        if not blocks:
            raise LedgerError(f"empty ledger file: {path}")
        chain = cls(blocks[0])
        for block in blocks[1:]:
            verdict = chain.validate_block(block)
            if not verdict.accepted:
                raise LedgerError(f"block {block.index} invalid on load: {verdict.reasons}")
            chain._apply(block)
        return chain


def read_ledger_file(path) -> list[Block]:
    blocks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                blocks.append(Block.from_map(json.loads(line)))
            except (json.JSONDecodeError, FormatError) as exc:
                raise LedgerError(f"unreadable block at line {line_no}: {exc}") from exc
    return blocks


def _validate_genesis(block: Block) -> Verdict:
    verdict = Verdict(True)
    if block.index != 0:
        verdict.add("lineage", "genesis index must be 0")
    if block.prev_hash != ZERO_DIGEST:
        verdict.add("lineage", "genesis prev_hash must be 32 zero bytes")
    for event in block.events:
        if event.kind != EventKind.KEY_REGISTRATION:
            verdict.add("malformed", "genesis may only carry key registrations")
    return verdict


def build_genesis(registrations: list[LedgerEvent], timestamp_s: float = 0.0) -> Block:
    return Block(
        index=0,
        prev_hash=ZERO_DIGEST,
        timestamp_s=timestamp_s,
        proposer_id="genesis",
        events=registrations,
        round_root=EMPTY_ROOT,
    )


def build_next_block(
    chain: Chain, events: list[LedgerEvent], proposer_id: str, timestamp_s: float
) -> Block:
    """Assemble the successor block, computing its round_root from chain state."""
    block = Block(
        index=chain.height,
        prev_hash=chain.head_hash(),
        timestamp_s=timestamp_s,
        proposer_id=proposer_id,
        events=events,
        round_root=EMPTY_ROOT,
    )
    block.round_root = chain._project_round_root(block)
    return block


def sign_block(block: Block, validator_id: str, secret_key: bytes) -> bytes:
    from .crypto import sign as _sign

    signature = _sign(block.block_hash().bytes32, secret_key)
    block.signatures[validator_id] = signature
    return signature


# --- chain file verification --------------------------------------------------

@dataclass
class ChainVerifyReport:
    valid: bool
    head_hash: str | None
    blocks: int
    problems: list[dict]

    def to_map(self) -> dict:
        return {
            "valid": self.valid,
            "head_hash": self.head_hash,
            "blocks": self.blocks,
            "problems": self.problems,
        }


def verify_chain_file(path) -> ChainVerifyReport:
    """Replay a ledger file from genesis, reporting every violated check."""
    problems: list[dict] = []
    try:
        blocks = read_ledger_file(path)
    except LedgerError as exc:
        return ChainVerifyReport(False, None, 0, [{"block_index": None, "code": "unreadable", "detail": str(exc)}])
    if not blocks:
        return ChainVerifyReport(False, None, 0, [{"block_index": None, "code": "empty", "detail": "no blocks"}])

    genesis_verdict = _validate_genesis(blocks[0])
    if not genesis_verdict.accepted:
        problems.extend({"block_index": 0, **r} for r in genesis_verdict.reasons)
        return ChainVerifyReport(False, None, len(blocks), problems)

    chain = Chain(blocks[0])
    for block in blocks[1:]:
        verdict = chain.validate_block(block)
        if not verdict.accepted:
            problems.extend({"block_index": block.index, **r} for r in verdict.reasons)
            break
        for vid in block.signatures:
            if not chain.registry.contains(vid):
                problems.append(
                    {"block_index": block.index, "code": "unknown_signer", "detail": vid}
                )
        chain._apply(block)
    else:
        return ChainVerifyReport(not problems, chain.head_hash().hex, len(blocks), problems)
    return ChainVerifyReport(False, None, len(blocks), problems)


# --- audit --------------------------------------------------------------------

@dataclass
class LineageNode:
    event: LedgerEvent
    children: list["LineageNode"] = field(default_factory=list)

    def leaf_count(self) -> int:
        if not self.children:
            return 1
        return sum(c.leaf_count() for c in self.children)

    def render(self, indent: int = 0) -> str:
        label = f"{self.event.kind.value} token={self.event.token.hex[:16]}… round={self.event.round}"
        if self.event.kind == EventKind.COMMIT:
            p = self.event.payload_meta
            label += f" [{p.get('vendor_id')}/{p.get('sat_id')} |D|={p.get('data_size')}]"
        lines = ["  " * indent + label]
        for child in self.children:
            lines.append(child.render(indent + 1))
        return "\n".join(lines)


def audit_trace(chain: Chain, global_token: ContributionToken) -> LineageNode:
    """Lineage tree: GlobalAgg root, PartialAgg internals, Commit leaves."""
    event = chain.find_event(global_token.hex)
    if event.kind != EventKind.GLOBAL_AGG:
        raise NotFoundError(
            f"token {global_token.hex} is a {event.kind.value} event, not a global aggregate"
        )
    root = LineageNode(event)
    for partial_hex in event.payload_meta["aggregates"]:
        partial = chain.find_event(partial_hex)
        node = LineageNode(partial)
        for commit_hex in partial.payload_meta["contributors"]:
            node.children.append(LineageNode(chain.find_event(commit_hex)))
        root.children.append(node)
    return root


GUARANTEE_REGISTERED = "registered-before-aggregation"
GUARANTEE_AUTHENTICATED = "authenticated-vendor"
GUARANTEE_EXACTLY_ONCE = "contributed-exactly-once"


@dataclass
class AuditReport:
    global_token: str
    guarantees: list[dict]
    artifact_checks: list[dict]

    @property
    def violations(self) -> list[dict]:
        out = []
        for g in self.guarantees:
            out.extend({"guarantee": g["name"], **v} for v in g["violations"])
        out.extend(
            {"guarantee": "artifact-hash-match", **c}
            for c in self.artifact_checks
            if not c["ok"]
        )
        return out

    @property
    def clean(self) -> bool:
        return not self.violations

    def to_map(self) -> dict:
        return {
            "global_token": self.global_token,
            "guarantees": self.guarantees,
            "artifact_checks": self.artifact_checks,
        }


def audit_verify(chain: Chain, global_token: ContributionToken, store: ArtifactStore) -> AuditReport:
    """Check the three lineage guarantees plus off-chain artifact integrity."""
    tree = audit_trace(chain, global_token)

    registered_violations: list[dict] = []
    authenticated_violations: list[dict] = []
    exactly_once_violations: list[dict] = []
    artifact_checks: list[dict] = []

    def block_of(token_hex: str) -> int:
        return chain.token_locator[token_hex][0]

    # (i) every contribution was registered (committed) no later than the
    # block that consumed it (same-block events finalize atomically), and its
    # principals appear in the registry.
    global_block = block_of(tree.event.token.hex)
    for partial_node in tree.children:
        partial_block = block_of(partial_node.event.token.hex)
        if partial_block > global_block:
            registered_violations.append(
                {"token": partial_node.event.token.hex, "detail": "partial recorded after fusion"}
            )
        for commit_node in partial_node.children:
            commit = commit_node.event
            if block_of(commit.token.hex) > partial_block:
                registered_violations.append(
                    {"token": commit.token.hex, "detail": "commit recorded after aggregation"}
                )
            meta = commit.payload_meta
            for principal in (meta.get("vendor_id"), meta.get("sat_id")):
                if not chain.registry.contains(principal):
                    registered_violations.append(
                        {"token": commit.token.hex, "detail": f"{principal} never registered"}
                    )

    # (ii) vendor signatures verify against the registered keys.
    for partial_node in tree.children:
        for commit_node in partial_node.children:
            commit = commit_node.event
            payload = commit.payload_meta
            try:
                meta = UpdateMetadata.from_map(payload)
                ciphertext_hash = Digest.from_hex(payload["ciphertext_hash"])
                signature = bytes.fromhex(payload["signature"])
                vendor_key = chain.registry.get(meta.vendor_id).public_key
                ok = verify(signing_payload(ciphertext_hash, meta), signature, vendor_key)
            except (FormatError, KeyError, ValueError) as exc:
                ok = False
                authenticated_violations.append(
                    {"token": commit.token.hex, "detail": f"unverifiable commit: {exc}"}
                )
                continue
            if not ok:
                authenticated_violations.append(
                    {"token": commit.token.hex, "detail": "vendor signature does not verify"}
                )

    # (iii) exactly once: chain-wide token uniqueness plus single consumption.
    consumed: dict[str, int] = {}
    seen_tokens: dict[str, int] = {}
    for block in chain.blocks:
        for event in block.events:
            if event.token is not None:
                seen_tokens[event.token.hex] = seen_tokens.get(event.token.hex, 0) + 1
            if event.kind == EventKind.PARTIAL_AGG:
                for c in event.payload_meta.get("contributors", []):
                    consumed[c] = consumed.get(c, 0) + 1
            elif event.kind == EventKind.GLOBAL_AGG:
                for t in event.payload_meta.get("aggregates", []):
                    consumed[t] = consumed.get(t, 0) + 1
    for token_hex, count in sorted(seen_tokens.items()):
        if count > 1:
            exactly_once_violations.append(
                {"token": token_hex, "detail": f"token finalized {count} times"}
            )
    for token_hex, count in sorted(consumed.items()):
        if count > 1:
            exactly_once_violations.append(
                {"token": token_hex, "detail": f"token consumed by {count} aggregation events"}
            )

    # Off-chain artifact integrity for every commit in the lineage and every
    # Distribute event in the lineage's rounds.
    def check_artifact(token_hex: str, expected: Digest, label: str) -> None:
        entry = {"token": token_hex, "artifact": expected.hex, "kind": label}
        if not store.has(expected):
            entry.update(ok=False, detail="artifact missing from store")
        else:
            actual = hash_bytes(store.get(expected))
            if actual == expected:
                entry.update(ok=True, detail="")
            else:
                entry.update(ok=False, detail=f"stored bytes hash to {actual.hex}")
        artifact_checks.append(entry)

    for partial_node in tree.children:
        for commit_node in partial_node.children:
            payload = commit_node.event.payload_meta
            try:
                check_artifact(
                    commit_node.event.token.hex,
                    Digest.from_hex(payload["ciphertext_hash"]),
                    "update-ciphertext",
                )
            except (KeyError, FormatError):
                artifact_checks.append(
                    {"token": commit_node.event.token.hex, "artifact": "?", "kind": "update-ciphertext",
                     "ok": False, "detail": "missing ciphertext hash"}
                )
    lineage_rounds = {tree.event.round}
    for block in chain.blocks:
        for event in block.events:
            if event.kind == EventKind.DISTRIBUTE and event.round in lineage_rounds:
                if event.payload_meta.get("global_token") == tree.event.token.hex:
                    check_artifact(
                        event.token.hex,
                        Digest.from_hex(event.payload_meta["content_hash"]),
                        "global-model",
                    )

    guarantees = [
        {"name": GUARANTEE_REGISTERED, "holds": not registered_violations,
         "violations": registered_violations},
        {"name": GUARANTEE_AUTHENTICATED, "holds": not authenticated_violations,
         "violations": authenticated_violations},
        {"name": GUARANTEE_EXACTLY_ONCE, "holds": not exactly_once_violations,
         "violations": exactly_once_violations},
    ]
    return AuditReport(global_token.hex, guarantees, artifact_checks)

"""Validator committee: quorum rules, proposal, voting, and finalization.

Each validator is an isolated state machine over its own chain copy and
mempool. The committee runner drives sequential heights through a transport:
the rotating proposer drains its mempool into a block, peers validate and
return signatures, and the block finalizes the moment the signature count
reaches the configured quorum. Fault profiles inject slow, offline,
equivocating, and bad-signer behavior for the evaluation scenarios.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

from .crypto import verify
from .errors import AuthorizationError, ConfigError
from .ledger import (
    Block,
    Chain,
    LedgerEvent,
    Mempool,
    Verdict,
    build_next_block,
    quorum_of,
    sign_block,
)
from .network import SimulatedNetwork, WireMessage


class QuorumMode(str, Enum):
    FIXED_Q = "fixed_q"
    TWO_THIRDS = "two_thirds"
    MAJORITY_F = "majority_f"


@dataclass(frozen=True)
class QuorumConfig:
    n_validators: int
    mode: QuorumMode = QuorumMode.TWO_THIRDS
    q: int | None = None
    f: int | None = None

    def __post_init__(self):
        if self.n_validators < 1:
            raise ConfigError("committee needs at least one validator")
        if self.mode == QuorumMode.FIXED_Q:
            if self.q is None or not 1 <= self.q <= self.n_validators:
                raise ConfigError(f"fixed quorum must satisfy 1 <= q <= {self.n_validators}")
        if self.mode == QuorumMode.MAJORITY_F:
            if self.f is None or not 0 <= self.f < self.n_validators:
                raise ConfigError(f"fault budget must satisfy 0 <= f < {self.n_validators}")

    def label(self) -> str:
        if self.mode == QuorumMode.FIXED_Q:
            return f"{self.q}-of-{self.n_validators}"
        if self.mode == QuorumMode.MAJORITY_F:
            return f"majority-f{self.f}-of-{self.n_validators}"
        return f"two-thirds-of-{self.n_validators}"


def quorum_threshold(cfg: QuorumConfig) -> int:
    """Signatures required to finalize under the configured rule."""
    if cfg.mode == QuorumMode.FIXED_Q:
        return cfg.q
    if cfg.mode == QuorumMode.TWO_THIRDS:
        return math.ceil(2 * cfg.n_validators / 3)
    # Smallest integer strictly greater than (n + f) / 2.
    return (cfg.n_validators + cfg.f) // 2 + 1


def select_proposer(round_index: int, validators: list[str]) -> str:
    if not validators:
        raise ConfigError("cannot select a proposer from an empty committee")
    return validators[round_index % len(validators)]


class FaultKind(str, Enum):
    SLOW = "slow"
    OFFLINE = "offline"
    EQUIVOCATOR = "equivocator"
    INVALID_SIGNER = "invalid_signer"


@dataclass(frozen=True)
class FaultProfile:
    validator_id: str
    kind: FaultKind
    delay_factor: float = 1.0

    def __post_init__(self):
        if self.kind == FaultKind.SLOW and self.delay_factor <= 1.0:
            raise ConfigError("slow validators need delay_factor > 1")


class Phase(str, Enum):
    IDLE = "Idle"
    PROPOSED = "Proposed"
    COLLECTING = "Collecting"
    FINALIZED = "Finalized"


@dataclass
class FinalizeDecision:
    finalized: bool
    valid_signatures: int
    threshold: int


def finalize(votes: dict[str, bytes], proposal: Block, cfg: QuorumConfig, registry) -> FinalizeDecision:
    """Count distinct verifying validator signatures against the quorum rule."""
    block_hash = proposal.block_hash().bytes32
    count = 0
    for vid, sig in votes.items():
        if not registry.contains(vid):
            continue
        if verify(block_hash, sig, registry.get(vid).public_key):
            count += 1
    threshold = quorum_threshold(cfg)
    return FinalizeDecision(count >= threshold, count, threshold)


class Validator:
    """One committee member: chain replica, mempool, and vote discipline."""

    def __init__(
        self,
        validator_id: str,
        public_key: bytes,
        secret_key: bytes,
        chain: Chain,
        quorum_cfg: QuorumConfig,
        fault: FaultProfile | None = None,
    ):
        self.validator_id = validator_id
        self.public_key = public_key
        self.secret_key = secret_key
        self.chain = chain
        self.quorum_cfg = quorum_cfg
        self.fault = fault
        self.mempool = Mempool()
        self.phase = Phase.IDLE
        self.current_proposal: Block | None = None
        self.votes: dict[str, bytes] = {}
        self._signed_at_height: dict[int, str] = {}

    # -- fault helpers --

    def _is(self, kind: FaultKind) -> bool:
        return self.fault is not None and self.fault.kind == kind

    def _make_signature(self, block: Block) -> bytes:
        from .crypto import sign

        sig = sign(block.block_hash().bytes32, self.secret_key)
        if self._is(FaultKind.INVALID_SIGNER):
            sig = bytes(64)  # deliberately unverifiable
        return sig

    # -- state machine operations --

    def handle_submit(self, event: LedgerEvent) -> str:
        if event.key in self.chain.known_token_keys():
            return "duplicate"
        return "accepted" if self.mempool.add(event) else "duplicate"

    def make_proposal(self, timestamp_s: float, allow_empty: bool = False) -> Block | None:
        """Drain the mempool into a linked, self-signed block proposal."""
        if self.phase not in (Phase.IDLE, Phase.FINALIZED):
            raise AuthorizationError(f"{self.validator_id} cannot propose in phase {self.phase}")
        events = self.mempool.drain_sorted()
        if not events and not allow_empty:
            return None
        block = build_next_block(self.chain, events, self.validator_id, timestamp_s)
        block.signatures[self.validator_id] = self._make_signature(block)
        self.phase = Phase.COLLECTING
        self.current_proposal = block
        self.votes = {self.validator_id: block.signatures[self.validator_id]}
        self._signed_at_height.setdefault(block.index, block.block_hash().hex)
        return block

    def handle_propose(self, block: Block) -> dict:
        """Validate a proposal; answer with a vote or a structured rejection."""
        verdict = self.chain.validate_block(block)
        if not verdict.accepted:
            return {"rejection": {"verdict": verdict.reasons, "validator_id": self.validator_id}}
        block_hash = block.block_hash().hex
        signed = self._signed_at_height.get(block.index)
        if signed is not None and signed != block_hash and not self._is(FaultKind.EQUIVOCATOR):
            return {
                "rejection": {
                    "verdict": [{"code": "equivocation", "detail": "already voted at this height"}],
                    "validator_id": self.validator_id,
                }
            }
        self._signed_at_height[block.index] = block_hash
        return {
            "vote": {
                "validator_id": self.validator_id,
                "height": block.index,
                "block_hash": block_hash,
                "signature": self._make_signature(block).hex(),
            }
        }

    def add_vote(self, height: int, block_hash: str, voter_id: str, signature: bytes) -> FinalizeDecision:
        """Proposer-side vote collection for the current proposal."""
        if (
            self.current_proposal is None
            or self.current_proposal.index != height
            or self.current_proposal.block_hash().hex != block_hash
        ):
            return FinalizeDecision(False, len(self.votes), quorum_threshold(self.quorum_cfg))
        if self.chain.registry.contains(voter_id) and verify(
            self.current_proposal.block_hash().bytes32,
            signature,
            self.chain.registry.get(voter_id).public_key,
        ):
            self.votes[voter_id] = signature
        return finalize(self.votes, self.current_proposal, self.quorum_cfg, self.chain.registry)

    def sealed_proposal(self) -> Block:
        """The current proposal carrying every collected signature."""
        block = self.current_proposal
        block.signatures = dict(self.votes)
        return block

    def handle_sync(self, block: Block) -> str:
        """Append a finalized block delivered by a peer, after own validation."""
        if block.index < self.chain.height:
            return "stale"
        verdict = self.chain.validate_block(block)
        if not verdict.accepted:
            return "rejected"
        if quorum_of(block, self.chain.registry) < quorum_threshold(self.quorum_cfg):
            return "quorum_not_met"
        self.chain._apply(block)
        self.mempool.remove_included(block.events)
        if self.current_proposal is not None and self.current_proposal.index == block.index:
            self.current_proposal = None
            self.votes = {}
        self.phase = Phase.IDLE
        return "appended"

    def finalize_local(self) -> None:
        block = self.sealed_proposal()
        self.chain._apply(block)
        self.mempool.remove_included(block.events)
        self.phase = Phase.FINALIZED
        self.current_proposal = None
        self.votes = {}


@dataclass
class BlockRecord:
    block_index: int
    proposal_time_s: float
    finalize_time_s: float | None
    latency_s: float | None
    signatures: int
    quorum_mode: str
    stalled: bool


@dataclass
class ConsensusTrace:
    records: list[BlockRecord] = field(default_factory=list)
    quorum_mode: str = ""

    @property
    def finalized_count(self) -> int:
        return sum(1 for r in self.records if not r.stalled)

    @property
    def stall_count(self) -> int:
        return sum(1 for r in self.records if r.stalled)

    def latencies(self) -> list[float]:
        return [r.latency_s for r in self.records if r.latency_s is not None]

    def mean_latency(self) -> float:
        lat = self.latencies()
        return sum(lat) / len(lat) if lat else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["block_index", "proposal_time_s", "finalize_time_s",
                 "latency_s", "signatures", "quorum_mode", "stalled"]
            )
            for r in self.records:
                writer.writerow([
                    r.block_index, r.proposal_time_s,
                    "" if r.finalize_time_s is None else r.finalize_time_s,
                    "" if r.latency_s is None else r.latency_s,
                    r.signatures, r.quorum_mode, int(r.stalled),
                ])


class SimCommittee:
    """Drives a validator committee over the simulated transport."""

    def __init__(
        self,
        validators: list[Validator],
        net: SimulatedNetwork,
        quorum_cfg: QuorumConfig,
        fault_plan: list[FaultProfile] | None = None,
        liveness_timeout_s: float | None = None,
    ):
        if len(validators) != quorum_cfg.n_validators:
            raise ConfigError("quorum config does not match committee size")
        self.validators = validators
        self.net = net
        self.quorum_cfg = quorum_cfg
        self.trace = ConsensusTrace(quorum_mode=quorum_cfg.label())
        faults = {f.validator_id: f for f in (fault_plan or [])}
        for validator in validators:
            validator.fault = faults.get(validator.validator_id)
            validator.quorum_cfg = quorum_cfg
        if liveness_timeout_s is None:
            liveness_timeout_s = max(1.0, 50.0 * net.profile.mean_latency_s)
        self.timeout_s = liveness_timeout_s
        self._height_cursor = 0
        self._pending_record: BlockRecord | None = None
        # Equivocating proposers collect votes per conflicting variant and try
        # to finalize every variant that gathers a quorum.
        self._equiv_state: dict[str, tuple[Block, dict[str, bytes]]] = {}
        for validator in validators:
            if not validator._is(FaultKind.OFFLINE):
                net.register(validator.validator_id, self._receiver(validator))

    def _receiver(self, validator: Validator):
        def on_message(msg: WireMessage) -> None:
            multiplier = (
                validator.fault.delay_factor if validator._is(FaultKind.SLOW) else 1.0
            )
            if msg.kind == "Propose":
                block = Block.from_map(msg.body["block"])
                result = validator.handle_propose(block)
                if "vote" in result:
                    self.net.send(
                        validator.validator_id,
                        msg.sender_id,
                        WireMessage("Vote", validator.validator_id, block.index, result["vote"]),
                        delay_multiplier=multiplier,
                    )
            elif msg.kind == "Vote":
                self._on_vote(validator, msg.body)
            elif msg.kind == "Sync":
                validator.handle_sync(Block.from_map(msg.body["block"]))
            elif msg.kind == "Submit":
                validator.handle_submit(LedgerEvent.from_map(msg.body["event"]))

        return on_message

    def _on_vote(self, validator: Validator, vote: dict) -> None:
        signature = bytes.fromhex(vote["signature"])
        if validator._is(FaultKind.EQUIVOCATOR) and vote["block_hash"] in self._equiv_state:
            block, votes = self._equiv_state[vote["block_hash"]]
            if validator.chain.registry.contains(vote["validator_id"]) and verify(
                block.block_hash().bytes32, signature,
                validator.chain.registry.get(vote["validator_id"]).public_key,
            ):
                votes[vote["validator_id"]] = signature
            decision = finalize(votes, block, self.quorum_cfg, validator.chain.registry)
            if decision.finalized:
                self._broadcast_sync(validator, block, votes)
            return
        decision = validator.add_vote(
            vote["height"], vote["block_hash"], vote["validator_id"], signature
        )
        if decision.finalized and validator.phase == Phase.COLLECTING:
            self._on_finalized(validator)

    def _broadcast_sync(self, proposer: Validator, block: Block, votes: dict[str, bytes]) -> None:
        sealed = Block(
            block.index, block.prev_hash, block.timestamp_s,
            block.proposer_id, block.events, block.round_root, dict(votes),
        )
        body = {"block": sealed.to_map()}
        for peer in self.validators:
            if peer is not proposer:
                self.net.send(
                    proposer.validator_id, peer.validator_id,
                    WireMessage("Sync", proposer.validator_id, sealed.index, body),
                )

    def _on_finalized(self, proposer: Validator) -> None:
        record = self._pending_record
        if record is not None and not record.stalled and record.finalize_time_s is None:
            record.finalize_time_s = self.net.now
            record.latency_s = self.net.now - record.proposal_time_s
            record.signatures = len(proposer.votes)
        sealed = proposer.sealed_proposal()
        self._broadcast_sync(proposer, sealed, sealed.signatures)
        proposer.finalize_local()

    def submit(self, events: list[LedgerEvent]) -> None:
        for validator in self.validators:
            if not validator._is(FaultKind.OFFLINE):
                for event in events:
                    validator.handle_submit(event)

    def _live_proposer(self, height_index: int) -> Validator:
        # Round-robin rotation; the harness never schedules a validator it has
        # itself taken offline (scheduling convenience, not leader failover).
        ids = [v.validator_id for v in self.validators]
        for offset in range(len(ids)):
            candidate = select_proposer(height_index + offset, ids)
            validator = self.validators[ids.index(candidate)]
            if not validator._is(FaultKind.OFFLINE):
                return validator
        raise ConfigError("all validators are offline")

    def run_height(
        self,
        events: list[LedgerEvent],
        timestamp_s: float | None = None,
        allow_empty: bool = False,
    ) -> BlockRecord | None:
        """Submit a batch and drive one proposal to finalization or stall.

        Returns None when there was nothing to propose (empty mempool and
        heartbeat blocks disabled).
        """
        self.submit(events)
        proposer = self._live_proposer(self._height_cursor)
        self._height_cursor += 1
        t_prop = self.net.now if timestamp_s is None else max(self.net.now, timestamp_s)
        self.net.advance_to(t_prop)

        record = BlockRecord(
            block_index=proposer.chain.height,
            proposal_time_s=t_prop,
            finalize_time_s=None,
            latency_s=None,
            signatures=0,
            quorum_mode=self.quorum_cfg.label(),
            stalled=False,
        )
        self._pending_record = record

        proposer.phase = Phase.IDLE  # abandon any proposal stalled at an earlier height
        block = proposer.make_proposal(t_prop, allow_empty=allow_empty)
        if block is None:
            self._pending_record = None
            return None

        variants = [block]
        self._equiv_state = {}
        if proposer._is(FaultKind.EQUIVOCATOR):
            conflicting = self._equivocating_variant(proposer, block, t_prop)
            variants.append(conflicting)
            for variant in variants:
                self._equiv_state[variant.block_hash().hex] = (variant, dict(variant.signatures))

        peers = [v for v in self.validators if v is not proposer]
        for i, peer in enumerate(peers):
            chosen = variants[i % len(variants)]
            self.net.send(
                proposer.validator_id, peer.validator_id,
                WireMessage("Propose", proposer.validator_id, chosen.index,
                            {"block": chosen.to_map()}),
            )
        # Degenerate single-signature quorums finalize on the self-vote.
        decision = finalize(proposer.votes, block, self.quorum_cfg, proposer.chain.registry)
        if decision.finalized and not proposer._is(FaultKind.EQUIVOCATOR):
            self._on_finalized(proposer)

        def check_stall():
            if record.finalize_time_s is None:
                record.stalled = True
                record.signatures = len(proposer.votes)

        self.net.schedule(t_prop + self.timeout_s, check_stall)
        self.net.run_until_idle()
        self._pending_record = None
        self.trace.records.append(record)
        return record

    def _equivocating_variant(self, proposer: Validator, block: Block, t_prop: float) -> Block:
        variant = Block(
            index=block.index,
            prev_hash=block.prev_hash,
            timestamp_s=t_prop + 1e-6,
            proposer_id=block.proposer_id,
            events=block.events,
            round_root=block.round_root,
        )
        from .crypto import sign

        variant.signatures[proposer.validator_id] = sign(
            variant.block_hash().bytes32, proposer.secret_key
        )
        return variant

    def run_workload(self, workload: list[list[LedgerEvent]]) -> ConsensusTrace:
        for batch in workload:
            self.run_height(batch)
        return self.trace


def run_committee(
    validators: list[Validator],
    fault_plan: list[FaultProfile],
    workload: list[list[LedgerEvent]],
    cfg: QuorumConfig,
    net: SimulatedNetwork,
    liveness_timeout_s: float | None = None,
) -> tuple[ConsensusTrace, list[Chain]]:
    """Run a batch workload through the committee; return trace and all chains."""
    committee = SimCommittee(validators, net, cfg, fault_plan, liveness_timeout_s)
    trace = committee.run_workload(workload)
    return trace, [v.chain for v in validators]

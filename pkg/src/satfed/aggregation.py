"""Age- and reputation-aware weighting, per-platform aggregation, and global fusion.

A satellite's weight is proportional to data size x reputation x exp(-lambda * age),
normalized over the platform's visible set. Platform aggregates are then fused
with weights proportional to the participating data mass behind each platform
(data size x freshness decay, without reputation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crypto import ContributionToken, TokenKind, compute_token
from .errors import (
    DegenerateInputError,
    ProvenanceError,
    RegistryError,
    ShapeError,
    StalenessError,
)
from .model import ModelVector, QuantizerConfig, quantize
from .sealing import MaskEscrow, SealedUpdate

REPUTATION_FLOOR = 1e-3
REPUTATION_GAIN = 1.05
REPUTATION_PENALTY = 0.5


@dataclass
class ReputationTable:
    """Reliability score in (0, 1] per registered satellite."""

    scores: dict[tuple[str, str], float] = field(default_factory=dict)

    def register(self, vendor_id: str, sat_id: str, score: float = 1.0) -> None:
        self.scores[(vendor_id, sat_id)] = score

    def get(self, vendor_id: str, sat_id: str) -> float:
        try:
            return self.scores[(vendor_id, sat_id)]
        except KeyError:
            raise RegistryError(f"satellite not in reputation table: {vendor_id}/{sat_id}") from None

    def copy(self) -> "ReputationTable":
        return ReputationTable(dict(self.scores))


@dataclass
class AgeRecord:
    """Staleness in rounds (current round minus fetch round) per satellite."""

    ages: dict[tuple[str, str], int] = field(default_factory=dict)

    def set(self, vendor_id: str, sat_id: str, age: int) -> None:
        if age < 0:
            raise ShapeError("age cannot be negative")
        self.ages[(vendor_id, sat_id)] = age

    def get(self, vendor_id: str, sat_id: str) -> int:
        try:
            return self.ages[(vendor_id, sat_id)]
        except KeyError:
            raise RegistryError(f"no age recorded for {vendor_id}/{sat_id}") from None


@dataclass(frozen=True)
class WeightConfig:
    lambda_decay: float = 0.1
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)

    def __post_init__(self):
        if not math.isfinite(self.lambda_decay) or self.lambda_decay < 0:
            raise ShapeError("lambda_decay must be finite and non-negative")


@dataclass
class HapAggregate:
    hap_id: str
    round: int
    model: ModelVector
    contributors: list[ContributionToken]
    participating_mass: float


@dataclass(frozen=True)
class ValidationOutcome:
    vendor_id: str
    sat_id: str
    accepted: bool
    reason: str = ""


def decay(age: int, lambda_decay: float) -> float:
    """Freshness discount exp(-lambda * age), in (0, 1]."""
    if age < 0 or lambda_decay < 0:
        raise ShapeError("age and lambda must be non-negative")
    return math.exp(-lambda_decay * age)


def update_token(sealed: SealedUpdate) -> ContributionToken:
    m = sealed.metadata
    return compute_token(
        m.vendor_id, m.sat_id, m.round, m.timestamp_s,
        sealed.ciphertext_hash, TokenKind.LOCAL_UPDATE,
    )


def satellite_weights(
    updates: list,
    rep: ReputationTable,
    ages: AgeRecord,
    cfg: WeightConfig,
) -> list[float]:
    """Normalized per-satellite weights over one platform's visible set.

    `updates` is a list of UpdateMetadata. Weights are proportional to
    data_size * reputation * decay(age) and sum to one.
    """
    if not updates:
        raise DegenerateInputError("cannot weight an empty update set")
    masses = []
    for meta in updates:
        r = rep.get(meta.vendor_id, meta.sat_id)
        a = ages.get(meta.vendor_id, meta.sat_id)
        masses.append(meta.data_size * r * decay(a, cfg.lambda_decay))
    total = sum(masses)
    if total <= 0.0:
        raise DegenerateInputError("zero total mass: all contributions decayed away")
    return [m / total for m in masses]


def hap_aggregate(
    sealed: list[SealedUpdate],
    alphas: list[float],
    unsealer: MaskEscrow,
    cfg: WeightConfig,
    hap_id: str = "",
    round_index: int | None = None,
    committed_tokens: set[str] | None = None,
) -> HapAggregate:
    """Weighted aggregate of unsealed updates at one platform.

    Updates and weights are re-ordered by token so the summation order (and
    hence the float result) is independent of input permutation. When
    `committed_tokens` is given, every input must already be committed
    on-chain for this round.
    """
    if len(sealed) != len(alphas):
        raise ShapeError("one weight per sealed update required")
    if not sealed:
        raise DegenerateInputError("cannot aggregate an empty update set")
    rnd = round_index if round_index is not None else max(u.metadata.round for u in sealed)

    entries = sorted(
        ((update_token(u), u, a) for u, a in zip(sealed, alphas)),
        key=lambda e: e[0].bytes32,
    )
    if committed_tokens is not None:
        for token, update, _ in entries:
            if token.hex not in committed_tokens:
                raise ProvenanceError(
                    f"update {token.hex} from {update.metadata.sat_id} was never committed"
                )

    dim = None
    acc = None
    mass = 0.0
    contributors = []
    for token, update, alpha in entries:
        plain = quantize(unsealer.unseal(update), cfg.quantizer)
        if dim is None:
            dim = plain.dim
            acc = np.zeros(dim, dtype=np.float64)
        elif plain.dim != dim:
            raise ShapeError(f"update {token.hex} has dim {plain.dim}, expected {dim}")
        acc += alpha * plain.values.astype(np.float64)
        age = rnd - update.metadata.fetch_round
        mass += update.metadata.data_size * decay(age, cfg.lambda_decay)
        contributors.append(token)

    return HapAggregate(
        hap_id=hap_id,
        round=rnd,
        model=ModelVector(acc.astype(np.float32)),
        contributors=contributors,
        participating_mass=mass,
    )


def hap_weights(aggregates: list[HapAggregate]) -> list[float]:
    """Inter-platform fusion weights proportional to participating data mass."""
    if not aggregates:
        raise DegenerateInputError("cannot weight an empty aggregate set")
    for agg in aggregates:
        if agg.participating_mass <= 0:
            raise DegenerateInputError(f"aggregate {agg.hap_id} has non-positive mass")
    total = sum(a.participating_mass for a in aggregates)
    return [a.participating_mass / total for a in aggregates]


def global_fuse(aggregates: list[HapAggregate], betas: list[float]) -> ModelVector:
    """Fused global model: beta-weighted sum in ascending hap_id order."""
    if len(aggregates) != len(betas):
        raise ShapeError("one weight per aggregate required")
    if not aggregates:
        raise DegenerateInputError("cannot fuse an empty aggregate set")
    rounds = {a.round for a in aggregates}
    if len(rounds) != 1:
        raise StalenessError(f"aggregates span rounds {sorted(rounds)}")
    dims = {a.model.dim for a in aggregates}
    if len(dims) != 1:
        raise ShapeError(f"aggregates span dims {sorted(dims)}")

    ordered = sorted(zip(aggregates, betas), key=lambda e: e[0].hap_id)
    acc = np.zeros(dims.pop(), dtype=np.float64)
    for agg, beta in ordered:
        acc += beta * agg.model.values.astype(np.float64)
    return ModelVector(acc.astype(np.float32))


def update_reputation(rep: ReputationTable, round_events: list[ValidationOutcome]) -> ReputationTable:
    """Multiplicative reputation update: small reward, halving penalty."""
    out = rep.copy()
    for event in round_events:
        key = (event.vendor_id, event.sat_id)
        if key not in out.scores:
            raise RegistryError(f"outcome for unregistered satellite {key}")
        score = out.scores[key]
        if event.accepted:
            out.scores[key] = min(1.0, score * REPUTATION_GAIN)
        else:
            out.scores[key] = max(REPUTATION_FLOOR, score * REPUTATION_PENALTY)
    return out

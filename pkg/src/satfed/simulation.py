"""Round pipeline: distribution, collection, commit, aggregation, and fusion.

Each round occupies one slack window on the simulated clock. Satellites that
get a contact during the window fetch the current global model, train, seal,
and upload to the platform whose pass has the most time left. Uploads that
fit the link capacity are committed on-chain in a commit block at window
close; each platform then aggregates its committed updates, the aggregates
fuse into the next global model, and a second block finalizes the
PartialAgg / GlobalAgg / Distribute events. Uploads that complete after the
window close carry into the next round with their age grown by one.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .aggregation import (
    AgeRecord,
    ReputationTable,
    ValidationOutcome,
    WeightConfig,
    hap_aggregate,
    hap_weights,
    global_fuse,
    satellite_weights,
    update_reputation,
    update_token,
)
from .consensus import FaultKind, SimCommittee, Validator
from .crypto import (
    Digest,
    PrincipalRole,
    TokenKind,
    compute_digest,
    compute_token,
    generate_keypair,
)
from .datasets import derive_seed, evaluate, make_holdout, partition_dataset
from .errors import ConfigError
from .ledger import (
    ArtifactStore,
    Chain,
    LedgerEvent,
    build_genesis,
    emit_commit,
    emit_distribute,
    emit_global_agg,
    emit_key_registration,
    emit_partial_agg,
)
from .model import ModelVector, QuantizerConfig, TrainConfig, local_train, model_dim
from .network import SimulatedNetwork
from .orbit import ContactWindow, ObserverSpec, SatelliteSpec, capacity_bytes, compute_contact_windows
from .scenario import ScenarioConfig
from .sealing import (
    MaskEscrow,
    SealedUpdate,
    SealingKey,
    UpdateMetadata,
    seal_update,
    verify_sealed,
)


@functools.lru_cache(maxsize=200_000)
def _cached_windows(
    sat: SatelliteSpec, observer: ObserverSpec, t0: float, t1: float,
    step: float, theta_min: float, bandwidth: float,
) -> tuple[ContactWindow, ...]:
    return tuple(compute_contact_windows(sat, observer, t0, t1, step, theta_min, bandwidth))


@dataclass
class PendingUpload:
    sealed: SealedUpdate
    hap_id: str
    completion_s: float
    window: ContactWindow


@dataclass
class RoundLog:
    round: int
    sim_minutes: float
    accuracy: float
    loss: float
    committed: int
    rejected: int
    capacity_rejections: int
    empty: bool
    aborted: bool


@dataclass
class SimulationReport:
    mode: str
    rounds: list[RoundLog]
    global_models: list[ModelVector]
    ledger_stats: dict
    out_dir: str | None

    def minutes_to_accuracy(self, threshold: float) -> float | None:
        for log in self.rounds:
            if log.accuracy >= threshold:
                return log.sim_minutes
        return None

    def final_accuracy(self) -> float:
        return self.rounds[-1].accuracy if self.rounds else 0.0


class Simulation:
    """One scenario run: builds the federation, drives rounds, writes reports."""

    def __init__(self, cfg: ScenarioConfig, out_dir: str | None = None,
                 transport: str = "sim"):
        if transport not in ("sim", "service"):
            raise ConfigError(f"unknown transport {transport!r}")
        self.transport = transport
        self.cfg = cfg
        self.out_dir = out_dir
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            store_dir = os.path.join(out_dir, "artifacts")
        else:
            store_dir = tempfile.mkdtemp(prefix="satfed-artifacts-")
        self.store = ArtifactStore(store_dir)

        participating = cfg.participating_vendors()
        self.vendor_keys: dict[str, SealingKey] = {}
        self.satellites: list[SatelliteSpec] = []
        self.sat_by_key: dict[tuple[str, str], SatelliteSpec] = {}
        self.haps: list[ObserverSpec] = []
        self.hap_owner: dict[str, str] = {}
        self.gs_ids: list[str] = []
        registrations = []

        # Register every vendor and satellite (idle ones included) so the same
        # genesis serves multi- and single-vendor runs of one scenario family.
        for vendor in cfg.vendors:
            key = SealingKey.create(
                vendor.vendor_id,
                derive_seed(cfg.seed, "vendor-key", vendor.vendor_id).to_bytes(8, "little"),
            )
            self.vendor_keys[vendor.vendor_id] = key
            registrations.append(
                emit_key_registration(vendor.vendor_id, PrincipalRole.VENDOR, key.public_key)
            )
            for sat in vendor.constellation():
                registrations.append(
                    emit_key_registration(
                        sat.sat_id, PrincipalRole.SATELLITE, key.public_key,
                        owner_vendor=vendor.vendor_id,
                    )
                )

        participating_ids = {v.vendor_id for v in participating}
        self.validator_keys: dict[str, tuple[bytes, bytes]] = {}
        for vendor in participating:
            for hap in vendor.haps:
                pub, sec = generate_keypair(
                    derive_seed(cfg.seed, "validator-key", hap.observer_id).to_bytes(8, "little")
                )
                self.validator_keys[hap.observer_id] = (pub, sec)
                self.hap_owner[hap.observer_id] = vendor.vendor_id
                self.haps.append(hap)
                registrations.append(
                    emit_key_registration(
                        hap.observer_id, PrincipalRole.VALIDATOR, pub,
                        owner_vendor=vendor.vendor_id,
                    )
                )
            self.gs_ids.extend(g.observer_id for g in vendor.gs)

        # Interleave satellites by in-plane position across vendors so the
        # label-skew round-robin pins each vendor to a narrow class slice
        # (vendors have complementary coverage, the premise under test).
        per_vendor = [v.constellation() for v in cfg.vendors]
        max_len = max(len(c) for c in per_vendor)
        for i in range(max_len):
            for constellation in per_vendor:
                if i < len(constellation):
                    spec = constellation[i]
                    self.satellites.append(spec)
                    self.sat_by_key[(spec.vendor_id, spec.sat_id)] = spec
        self.all_sat_keys = [(s.vendor_id, s.sat_id) for s in self.satellites]
        self.active_sat_keys = [
            k for k in self.all_sat_keys if k[0] in participating_ids
        ]

        self.genesis = build_genesis(registrations)
        self.quorum_cfg = cfg.quorum_config(len(self.validator_keys))
        self.validators = [
            Validator(vid, pub, sec, Chain(self.genesis), self.quorum_cfg)
            for vid, (pub, sec) in sorted(self.validator_keys.items())
        ]
        if self.transport == "sim":
            self.net = SimulatedNetwork(cfg.network)
            self.committee = SimCommittee(
                self.validators, self.net, self.quorum_cfg, fault_plan=cfg.validator_faults
            )
        else:
            from .service import ServiceCommittee

            faults = {f.validator_id: f for f in cfg.validator_faults}
            for validator in self.validators:
                validator.fault = faults.get(validator.validator_id)
            self.net = None
            self.committee = ServiceCommittee(self.validators, self.quorum_cfg)
        self.chain = self.validators[0].chain

        self.escrow = MaskEscrow()
        for vendor_id, key in self.vendor_keys.items():
            self.escrow.register_vendor(vendor_id, key.secret_seed)

        spec = cfg.partition_spec()
        self.shards = partition_dataset(spec, self.all_sat_keys)
        self.holdout = make_holdout(spec)
        self.dim = model_dim(cfg.feature_dim, cfg.n_classes)
        self.weight_cfg = WeightConfig(
            cfg.weight_cfg_lambda, QuantizerConfig(cfg.quantizer_levels)
        )
        self.reputation = ReputationTable()
        for vendor_id, sat_id in self.all_sat_keys:
            self.reputation.register(vendor_id, sat_id, 1.0)

        self.sat_faults = {
            (f.vendor_id, f.sat_id): f.kind for f in cfg.satellite_faults
        }
        self.global_model = ModelVector.zeros(self.dim)
        self.pending: list[PendingUpload] = []
        self.weight_audit_rows: list[tuple] = []
        self.fusion_rows: list[tuple] = []
        self.capacity_log: list[dict] = []
        self.round_models: list[ModelVector] = []

    # -- visibility ---------------------------------------------------------

    def windows_for(self, sat: SatelliteSpec, hap: ObserverSpec) -> tuple[ContactWindow, ...]:
        horizon = self.cfg.rounds * self.cfg.slack_time_s
        return _cached_windows(
            sat, hap, 0.0, horizon, self.cfg.window_step_s,
            self.cfg.theta_min_deg, self.cfg.bandwidth_bps,
        )

    def all_windows(self) -> list[ContactWindow]:
        out = []
        for vendor_id, sat_id in self.active_sat_keys:
            sat = self.sat_by_key[(vendor_id, sat_id)]
            for hap in self.haps:
                out.extend(self.windows_for(sat, hap))
        return sorted(out, key=lambda w: (w.sat_id, w.observer_id, w.t_start_s))

    def _pick_pass(self, sat: SatelliteSpec, win_start: float, win_end: float):
        """Best (window, upload_start) inside the slack window: longest remaining pass."""
        best = None
        for hap in self.haps:
            for window in self.windows_for(sat, hap):
                if window.t_end_s <= win_start or window.t_start_s >= win_end:
                    continue
                upload_start = max(window.t_start_s, win_start)
                remaining = window.t_end_s - upload_start
                if remaining <= 0:
                    continue
                key = (-remaining, window.observer_id)
                if best is None or key < best[0]:
                    best = (key, window, upload_start)
        if best is None:
            return None
        return best[1], best[2]

    # -- round pipeline -----------------------------------------------------

    def _train_and_seal(self, vendor_id: str, sat_id: str, round_index: int,
                        upload_start: float) -> SealedUpdate:
        shard = self.shards[(vendor_id, sat_id)]
        cfg = self.cfg.train
        report = local_train(
            self.global_model, shard,
            TrainConfig(
                cfg.learning_rate, cfg.epochs, cfg.batch_size,
                derive_seed(self.cfg.seed, "train", vendor_id, sat_id, str(round_index)),
            ),
        )
        meta = UpdateMetadata(
            vendor_id, sat_id, round_index, shard.size, round_index, upload_start
        )
        return seal_update(
            report.updated_model, meta, self.vendor_keys[vendor_id], self.cfg.sealing_scheme
        )

    def _apply_fault(self, sealed: SealedUpdate, key: tuple[str, str]) -> list[SealedUpdate]:
        kind = self.sat_faults.get(key)
        if kind is None:
            return [sealed]
        if kind == "tampered_payload":
            body = bytearray(sealed.ciphertext)
            body[len(body) // 2] ^= 0x01
            return [SealedUpdate(bytes(body), sealed.metadata, sealed.signature, sealed.scheme)]
        if kind == "forged_signature":
            return [SealedUpdate(sealed.ciphertext, sealed.metadata, bytes(64), sealed.scheme)]
        if kind == "duplicate_token":
            return [sealed, sealed]  # replayed verbatim
        return [sealed]

    def run_round(self, round_index: int) -> RoundLog:
        cfg = self.cfg
        win_start = round_index * cfg.slack_time_s
        win_end = (round_index + 1) * cfg.slack_time_s

        arrivals: list[PendingUpload] = []
        carried, self.pending = self.pending, []
        arrivals.extend(carried)
        rejected_outcomes: list[ValidationOutcome] = []
        capacity_rejections = 0

        for vendor_id, sat_id in self.active_sat_keys:
            sat = self.sat_by_key[(vendor_id, sat_id)]
            pick = self._pick_pass(sat, win_start, win_end)
            if pick is None:
                continue
            window, upload_start = pick
            sealed = self._train_and_seal(vendor_id, sat_id, round_index, upload_start)
            payload = sealed.payload_bytes
            if payload > capacity_bytes(window):
                capacity_rejections += 1
                self.capacity_log.append({
                    "round": round_index, "sat_id": sat_id, "hap_id": window.observer_id,
                    "payload_bytes": payload, "capacity_bytes": capacity_bytes(window),
                })
                continue
            tx_time = payload * 8.0 / window.bandwidth_bps
            completion = upload_start + tx_time
            if completion > window.t_end_s:
                continue  # pass too short to finish the transfer
            for variant in self._apply_fault(sealed, (vendor_id, sat_id)):
                arrivals.append(PendingUpload(variant, window.observer_id, completion, window))

        # Split arrivals into this window and late carries; when a satellite
        # delivered both a stale carried upload and a fresh one, only the
        # freshest fetch proceeds (same-age duplicates flow on to ingest
        # dedup, where replays are rejected and penalized).
        in_window: list[PendingUpload] = []
        for upload in sorted(arrivals, key=lambda u: (u.sealed.metadata.vendor_id,
                                                      u.sealed.metadata.sat_id,
                                                      u.completion_s)):
            if upload.completion_s > win_end:
                if round_index + 1 < cfg.rounds:
                    self.pending.append(upload)
            else:
                in_window.append(upload)
        best_fetch: dict[tuple[str, str], int] = {}
        for upload in in_window:
            meta = upload.sealed.metadata
            key = (meta.vendor_id, meta.sat_id)
            best_fetch[key] = max(best_fetch.get(key, -1), meta.fetch_round)
        ready = [
            u for u in in_window
            if u.sealed.metadata.fetch_round
            == best_fetch[(u.sealed.metadata.vendor_id, u.sealed.metadata.sat_id)]
        ]

        # Platform ingest: verify signatures, deduplicate tokens, emit commits.
        commit_events: list[LedgerEvent] = []
        collected: dict[str, list[SealedUpdate]] = {}
        seen_tokens = set(self.chain.known_token_keys())
        for upload in ready:
            sealed = upload.sealed
            meta = sealed.metadata
            vendor_key = self.vendor_keys[meta.vendor_id]
            if not verify_sealed(sealed, vendor_key.public_key):
                rejected_outcomes.append(
                    ValidationOutcome(meta.vendor_id, meta.sat_id, False, "bad signature")
                )
                continue
            token = update_token(sealed)
            if token.hex in seen_tokens:
                rejected_outcomes.append(
                    ValidationOutcome(meta.vendor_id, meta.sat_id, False, "duplicate token")
                )
                continue
            seen_tokens.add(token.hex)
            self.store.put(sealed.ciphertext)
            digest = compute_digest(sealed.ciphertext, sealed.signature, meta.to_map())
            commit_events.append(
                emit_commit(
                    meta, digest, token, upload.hap_id,
                    sealed.ciphertext_hash, sealed.signature,
                    event_round=round_index, scheme=sealed.scheme.value,
                )
            )
            collected.setdefault(upload.hap_id, []).append(sealed)

        sim_minutes = win_end / 60.0
        if not commit_events:
            self.reputation = update_reputation(self.reputation, rejected_outcomes)
            accuracy, loss = evaluate(self.global_model, self.holdout)
            self.round_models.append(self.global_model)
            return RoundLog(round_index, sim_minutes, accuracy, loss,
                            0, len(rejected_outcomes), capacity_rejections,
                            empty=True, aborted=False)

        record = self._run_block(commit_events, win_end)
        if record is None or record.stalled:
            self.reputation = update_reputation(self.reputation, rejected_outcomes)
            accuracy, loss = evaluate(self.global_model, self.holdout)
            self.round_models.append(self.global_model)
            return RoundLog(round_index, sim_minutes, accuracy, loss,
                            0, len(rejected_outcomes), capacity_rejections,
                            empty=False, aborted=True)

        committed_tokens = {e.token.hex for e in commit_events}

        # Stage 4: per-platform weighted aggregation over committed updates.
        aggregates = []
        partial_events = []
        accepted_outcomes = []
        ages = AgeRecord()
        for sealed_list in collected.values():
            for sealed in sealed_list:
                meta = sealed.metadata
                ages.set(meta.vendor_id, meta.sat_id, round_index - meta.fetch_round)
        for hap_id in sorted(collected):
            sealed_list = collected[hap_id]
            metas = [s.metadata for s in sealed_list]
            alphas = satellite_weights(metas, self.reputation, ages, self.weight_cfg)
            # Keep contributor order and weights aligned by token.
            order = sorted(range(len(sealed_list)),
                           key=lambda i: update_token(sealed_list[i]).bytes32)
            agg = hap_aggregate(
                sealed_list, alphas, self.escrow, self.weight_cfg,
                hap_id=hap_id, round_index=round_index, committed_tokens=committed_tokens,
            )
            agg_hash = self.store.put(agg.model.to_bytes())
            partial_token = compute_token(
                self.hap_owner[hap_id], hap_id, round_index, win_end,
                agg_hash, TokenKind.PARTIAL_AGGREGATE,
            )
            partial_events.append(
                emit_partial_agg(
                    hap_id, round_index, agg.contributors, partial_token, agg_hash,
                    [alphas[i] for i in order], agg.participating_mass,
                    known_tokens=committed_tokens,
                )
            )
            aggregates.append((partial_token, agg))
            for i in order:
                meta = sealed_list[i].metadata
                self.weight_audit_rows.append((
                    round_index, hap_id, meta.vendor_id, meta.sat_id, meta.data_size,
                    self.reputation.get(meta.vendor_id, meta.sat_id),
                    round_index - meta.fetch_round, alphas[i],
                ))
            for sealed in sealed_list:
                accepted_outcomes.append(
                    ValidationOutcome(sealed.metadata.vendor_id, sealed.metadata.sat_id, True)
                )

        # Stage 5: fuse across platforms and anchor the result.
        agg_objects = [a for (_, a) in aggregates]
        betas = hap_weights(agg_objects)
        fused = global_fuse(agg_objects, betas)
        model_hash = self.store.put(fused.to_bytes())
        emitter = sorted(collected)[0]
        global_token = compute_token(
            self.hap_owner[emitter], emitter, round_index, win_end,
            model_hash, TokenKind.GLOBAL_MODEL,
        )
        partial_tokens = [t for (t, _) in aggregates]
        global_event = emit_global_agg(
            emitter, round_index, partial_tokens, betas, global_token, model_hash,
            known_tokens={t.hex for t in partial_tokens},
        )
        distribute = emit_distribute(
            emitter, round_index, global_token,
            f"artifacts/{model_hash.hex}.model", model_hash, win_end,
            recipients=sorted(self.gs_ids),
        )
        for hap_id, beta, agg in zip(sorted(collected), betas, agg_objects):
            self.fusion_rows.append((round_index, hap_id, agg.participating_mass, beta))

        agg_record = self._run_block(partial_events + [global_event, distribute], win_end)
        if agg_record is None or agg_record.stalled:
            self.reputation = update_reputation(self.reputation, rejected_outcomes)
            accuracy, loss = evaluate(self.global_model, self.holdout)
            self.round_models.append(self.global_model)
            return RoundLog(round_index, sim_minutes, accuracy, loss,
                            len(commit_events), len(rejected_outcomes),
                            capacity_rejections, empty=False, aborted=True)

        self.global_model = fused
        self.reputation = update_reputation(
            self.reputation, accepted_outcomes + rejected_outcomes
        )
        accuracy, loss = evaluate(self.global_model, self.holdout)
        self.round_models.append(self.global_model)
        return RoundLog(round_index, sim_minutes, accuracy, loss,
                        len(commit_events), len(rejected_outcomes),
                        capacity_rejections, empty=False, aborted=False)

    def _run_block(self, events: list[LedgerEvent], timestamp_s: float):
        if self.transport == "sim":
            return self.committee.run_height(events, timestamp_s=timestamp_s)
        return self.committee.run_height(events)

    # -- entry point ----------------------------------------------------------

    def run(self) -> SimulationReport:
        try:
            logs = [self.run_round(t) for t in range(self.cfg.rounds)]
        finally:
            if self.transport == "service":
                self.committee.close()
        stats = self._ledger_stats(logs)
        report = SimulationReport(
            mode=self.cfg.mode,
            rounds=logs,
            global_models=list(self.round_models),
            ledger_stats=stats,
            out_dir=self.out_dir,
        )
        if self.out_dir:
            self._write_outputs(report)
        return report

    def _ledger_stats(self, logs: list[RoundLog]) -> dict:
        by_kind: dict[str, int] = {}
        for block in self.chain.blocks:
            for event in block.events:
                by_kind[event.kind.value] = by_kind.get(event.kind.value, 0) + 1
        return {
            "mode": self.cfg.mode,
            "blocks": self.chain.height,
            "head_hash": self.chain.head_hash().hex,
            "events_by_kind": dict(sorted(by_kind.items())),
            "rounds": len(logs),
            "empty_rounds": sum(1 for l in logs if l.empty),
            "aborted_rounds": sum(1 for l in logs if l.aborted),
            "committed_updates": sum(l.committed for l in logs),
            "rejected_updates": sum(l.rejected for l in logs),
            "capacity_rejections": sum(l.capacity_rejections for l in logs),
            "consensus_stalls": self.committee.trace.stall_count,
        }

    def _write_outputs(self, report: SimulationReport) -> None:
        out = self.out_dir
        with open(os.path.join(out, "convergence.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "sim_minutes", "mode", "accuracy", "loss"])
            for log in report.rounds:
                writer.writerow([log.round, log.sim_minutes, self.cfg.mode,
                                 repr(log.accuracy), repr(log.loss)])
        with open(os.path.join(out, "consensus_latency.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["block_index", "quorum_mode", "latency_s"])
            for rec in self.committee.trace.records:
                writer.writerow([rec.block_index, rec.quorum_mode,
                                 "" if rec.latency_s is None else repr(rec.latency_s)])
        self.committee.trace.to_csv(os.path.join(out, "consensus_trace.csv"))
        with open(os.path.join(out, "weight_audit.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "hap_id", "vendor_id", "sat_id",
                             "data_size", "reputation", "age", "alpha"])
            for row in self.weight_audit_rows:
                writer.writerow([*row[:5], repr(row[5]), row[6], repr(row[7])])
        with open(os.path.join(out, "fusion.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "hap_id", "mass", "beta"])
            for rnd, hap_id, mass, beta in self.fusion_rows:
                writer.writerow([rnd, hap_id, repr(mass), repr(beta)])
        with open(os.path.join(out, "ledger_stats.json"), "w") as fh:
            json.dump(report.ledger_stats, fh, indent=2, sort_keys=True)
        self.chain.save(os.path.join(out, "ledger.jsonl"))
        from .orbit import windows_to_csv

        windows_to_csv(self.all_windows(), os.path.join(out, "windows.csv"))


def run_simulation(
    cfg: ScenarioConfig, out_dir: str | None = None, transport: str = "sim"
) -> SimulationReport:
    if cfg.rounds < 1:
        raise ConfigError("rounds must be at least 1")
    return Simulation(cfg, out_dir, transport=transport).run()

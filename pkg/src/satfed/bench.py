"""Committee construction and synthetic workloads for consensus benchmarks."""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .consensus import FaultProfile, QuorumConfig, Validator
from .crypto import PrincipalRole, generate_keypair
from .ledger import Chain, LedgerEvent, build_genesis, emit_key_registration
from .model import ModelVector
from .network import NetworkProfile, SimulatedNetwork
from .sealing import SealScheme, SealingKey, UpdateMetadata, seal_update
from .service import BenchmarkReport, measure_benchmark_service, measure_benchmark_sim

BENCH_VENDOR = "bench-vendor"
BENCH_SAT = "bench-sat"


def build_bench_genesis(n_validators: int):
    """Genesis with a synthetic vendor, one satellite, and the validator set."""
    vendor_key = SealingKey.create(BENCH_VENDOR, b"bench-vendor-seed")
    registrations = [
        emit_key_registration(BENCH_VENDOR, PrincipalRole.VENDOR, vendor_key.public_key),
        emit_key_registration(
            BENCH_SAT, PrincipalRole.SATELLITE, vendor_key.public_key, owner_vendor=BENCH_VENDOR
        ),
    ]
    validator_keys = {}
    for i in range(n_validators):
        vid = f"validator-{i}"
        pub, sec = generate_keypair(f"bench-validator:{i}".encode())
        validator_keys[vid] = (pub, sec)
        registrations.append(
            emit_key_registration(vid, PrincipalRole.VALIDATOR, pub, owner_vendor=BENCH_VENDOR)
        )
    return build_genesis(registrations), vendor_key, validator_keys


def build_committee(n_validators: int, quorum_cfg: QuorumConfig):
    """Fresh validators over identical genesis chains, plus the vendor key."""
    genesis, vendor_key, validator_keys = build_bench_genesis(n_validators)
    validators = [
        Validator(vid, pub, sec, Chain(genesis), quorum_cfg)
        for vid, (pub, sec) in sorted(validator_keys.items())
    ]
    return validators, vendor_key


def bench_workload(
    n_blocks: int,
    tx_batch: int,
    vendor_key: SealingKey,
    start_round: int = 1,
) -> list[list[LedgerEvent]]:
    """Signed single-vendor commit events, tx_batch per block, one round per block."""
    from .aggregation import update_token
    from .crypto import compute_digest
    from .ledger import emit_commit

    rng = np.random.default_rng(7)
    model = ModelVector(rng.normal(size=2).astype(np.float32))
    workload = []
    for b in range(n_blocks):
        rnd = start_round + b
        batch = []
        for t in range(tx_batch):
            meta = UpdateMetadata(
                BENCH_VENDOR, BENCH_SAT, rnd, data_size=1,
                fetch_round=rnd, timestamp_s=float(b) + t * 1e-6,
            )
            sealed = seal_update(model, meta, vendor_key, SealScheme.PLAINTEXT)
            batch.append(
                emit_commit(
                    meta,
                    compute_digest(sealed.ciphertext, sealed.signature, meta.to_map()),
                    update_token(sealed),
                    "validator-0",
                    sealed.ciphertext_hash,
                    sealed.signature,
                )
            )
        workload.append(batch)
    return workload


def run_benchmark(
    quorum_cfg: QuorumConfig,
    block_count: int,
    tx_batch: int = 1,
    transport: str = "service",
    net_profile: NetworkProfile | None = None,
    fault_plan: list[FaultProfile] | None = None,
) -> tuple[BenchmarkReport, list[Validator]]:
    """One quorum mode over either transport; returns the report and committee."""
    validators, vendor_key = build_committee(quorum_cfg.n_validators, quorum_cfg)
    workload = bench_workload(block_count, tx_batch, vendor_key)
    if transport == "service":
        report = measure_benchmark_service(validators, quorum_cfg, workload)
    elif transport == "sim":
        net = SimulatedNetwork(net_profile or NetworkProfile(0.02, 0.005, 0.0, seed=11))
        report = measure_benchmark_sim(validators, quorum_cfg, workload, net, fault_plan)
    else:
        raise ValueError(f"unknown transport {transport!r}")
    return report, validators


def run_quorum_sweep(
    quorum_cfgs: list[QuorumConfig],
    block_count: int,
    tx_batch: int,
    transport: str,
    out_dir: str,
    net_profile: NetworkProfile | None = None,
    save_ledgers: bool = False,
) -> list[BenchmarkReport]:
    """Benchmark each quorum mode; write latency CSVs, traces, and throughput JSON."""
    os.makedirs(out_dir, exist_ok=True)
    reports = []
    latency_rows = []
    for cfg in quorum_cfgs:
        report, validators = run_benchmark(
            cfg, block_count, tx_batch, transport, net_profile
        )
        reports.append(report)
        for record in report.trace.records:
            latency_rows.append(
                (record.block_index, report.quorum_mode,
                 "" if record.latency_s is None else record.latency_s)
            )
        report.trace.to_csv(os.path.join(out_dir, f"consensus_trace_{report.quorum_mode}.csv"))
        if save_ledgers:
            for validator in validators:
                validator.chain.save(
                    os.path.join(out_dir, f"ledger_{report.quorum_mode}_{validator.validator_id}.jsonl")
                )
    with open(os.path.join(out_dir, "consensus_latency.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block_index", "quorum_mode", "latency_s"])
        writer.writerows(latency_rows)
    with open(os.path.join(out_dir, "throughput.json"), "w") as fh:
        json.dump([r.throughput_map() for r in reports], fh, indent=2)
    return reports

"""HTTP wire protocol for the validator committee, plus the latency benchmark.

Each validator exposes REST endpoints over HTTP/1.1 with canonical JSON
bodies: POST /submit (mempool event), POST /propose (block proposal, answered
with a vote or rejection), POST /vote (finalized signature-set delivery),
GET /chain?from=i (block range for sync), and GET /head. Writes are
idempotent by body hash, so at-least-once delivery and replayed messages are
safe. The benchmark driver runs the same sequential-height protocol as the
simulated committee, measuring wall-clock finalization latency on loopback.
"""

from __future__ import annotations

import http.client
import json
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .consensus import (
    BlockRecord,
    ConsensusTrace,
    FaultKind,
    Phase,
    QuorumConfig,
    Validator,
    finalize,
    select_proposer,
)
from .crypto import canonical_json, hash_bytes
from .errors import ConfigError, FormatError
from .ledger import Block, LedgerEvent

_IDEMPOTENCY_CACHE_SIZE = 4096


class ValidatorService:
    """One validator behind an HTTP server; all writes serialize on a lock."""

    def __init__(self, validator: Validator, host: str = "127.0.0.1", port: int = 0):
        self.validator = validator
        self.lock = threading.Lock()
        self._seen_bodies: OrderedDict[str, dict] = OrderedDict()
        handler = _make_handler(self)
        self.server = ThreadingHTTPServer((host, port), handler)
        self.server.daemon_threads = True
        self.host, self.port = self.server.server_address
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()

    # -- request handlers (called with the route payload, return (status, body)) --

    def handle_post(self, path: str, raw: bytes) -> tuple[int, dict]:
        body_key = hash_bytes(raw).hex
        with self.lock:
            if body_key in self._seen_bodies:
                cached = dict(self._seen_bodies[body_key])
                cached["duplicate"] = True
                return 200, cached
            try:
                payload = json.loads(raw)
            except json.JSONDecodeError as exc:
                return 400, {"error": f"invalid JSON body: {exc}"}
            try:
                if path == "/submit":
                    status, body = self._post_submit(payload)
                elif path == "/propose":
                    status, body = self._post_propose(payload)
                elif path == "/vote":
                    status, body = self._post_vote(payload)
                else:
                    return 404, {"error": f"unknown endpoint {path}"}
            except FormatError as exc:
                return 400, {"error": str(exc)}
            except Exception as exc:  # adversarial bodies must not kill the server
                return 400, {"error": f"{type(exc).__name__}: {exc}"}
            if status == 200:
                self._seen_bodies[body_key] = body
                while len(self._seen_bodies) > _IDEMPOTENCY_CACHE_SIZE:
                    self._seen_bodies.popitem(last=False)
            return status, body

    def _post_submit(self, payload: dict) -> tuple[int, dict]:
        event = LedgerEvent.from_map(payload["event"])
        return 200, {"status": self.validator.handle_submit(event)}

    def _post_propose(self, payload: dict) -> tuple[int, dict]:
        block = Block.from_map(payload["block"])
        return 200, self.validator.handle_propose(block)

    def _post_vote(self, payload: dict) -> tuple[int, dict]:
        block = Block.from_map(payload["block"])
        return 200, {"status": self.validator.handle_sync(block)}

    def handle_get(self, path: str, query: dict) -> tuple[int, dict]:
        with self.lock:
            chain = self.validator.chain
            if path == "/head":
                return 200, {"height": chain.height, "head_hash": chain.head_hash().hex}
            if path == "/chain":
                start = int(query.get("from", ["0"])[0])
                if start < 0 or start > chain.height:
                    return 400, {"error": f"unknown height {start}", "height": chain.height}
                return 200, {"blocks": [b.to_map() for b in chain.blocks[start:]]}
            return 404, {"error": f"unknown endpoint {path}"}


def _make_handler(service: ValidatorService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # benchmark noise
            pass

        def _reply(self, status: int, body: dict) -> None:
            raw = canonical_json(body)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            status, body = service.handle_post(urlparse(self.path).path, raw)
            self._reply(status, body)

        def do_GET(self):
            parsed = urlparse(self.path)
            status, body = service.handle_get(parsed.path, parse_qs(parsed.query))
            self._reply(status, body)

    return Handler


class ServiceClient:
    """Thread-local persistent connections to the validator endpoints."""

    def __init__(self):
        self._local = threading.local()

    def _connection(self, address: str) -> http.client.HTTPConnection:
        pool = getattr(self._local, "pool", None)
        if pool is None:
            pool = self._local.pool = {}
        conn = pool.get(address)
        if conn is None:
            host, port = address.rsplit(":", 1)
            conn = pool[address] = http.client.HTTPConnection(host, int(port), timeout=30)
        return conn

    def request(self, address: str, method: str, path: str, body: dict | None = None) -> dict:
        conn = self._connection(address)
        raw = canonical_json(body) if body is not None else None
        try:
            conn.request(method, path, body=raw, headers={"Content-Type": "application/json"})
            resp = conn.getresponse()
            data = resp.read()
        except (http.client.HTTPException, OSError):
            conn.close()
            conn.request(method, path, body=raw, headers={"Content-Type": "application/json"})
            resp = conn.getresponse()
            data = resp.read()
        return json.loads(data)

    def close(self) -> None:
        pool = getattr(self._local, "pool", None)
        if pool:
            for conn in pool.values():
                conn.close()
            pool.clear()


class ServiceCommittee:
    """Sequential-height committee driver over the HTTP transport."""

    def __init__(self, validators: list[Validator], quorum_cfg: QuorumConfig):
        if len(validators) != quorum_cfg.n_validators:
            raise ConfigError("quorum config does not match committee size")
        self.quorum_cfg = quorum_cfg
        self.services = [ValidatorService(v) for v in validators]
        self.client = ServiceClient()
        self.trace = ConsensusTrace(quorum_mode=quorum_cfg.label())
        self._height_cursor = 0
        self._pool = ThreadPoolExecutor(max_workers=max(4, len(validators)))
        for service in self.services:
            if not service.validator._is(FaultKind.OFFLINE):
                service.start()

    def close(self) -> None:
        self._pool.shutdown(wait=True)
        for service in self.services:
            if not service.validator._is(FaultKind.OFFLINE):
                service.stop()
        self.client.close()

    def _proposer_index(self) -> int:
        ids = [s.validator.validator_id for s in self.services]
        for offset in range(len(ids)):
            vid = select_proposer(self._height_cursor + offset, ids)
            idx = ids.index(vid)
            if not self.services[idx].validator._is(FaultKind.OFFLINE):
                return idx
        raise ConfigError("all validators are offline")

    def submit(self, events: list[LedgerEvent], to_index: int) -> None:
        address = self.services[to_index].address
        for event in events:
            self.client.request(address, "POST", "/submit", {"event": event.to_map()})

    def run_height(self, events: list[LedgerEvent], timeout_s: float = 30.0) -> BlockRecord:
        """One proposal round: propose to peers, collect votes, finalize, sync."""
        proposer_idx = self._proposer_index()
        self._height_cursor += 1
        proposer_service = self.services[proposer_idx]
        proposer = proposer_service.validator
        if events:
            self.submit(events, proposer_idx)

        t_wall = time.time()
        t0 = time.perf_counter()
        with proposer_service.lock:
            proposer.phase = Phase.IDLE
            block = proposer.make_proposal(t_wall, allow_empty=True)
        record = BlockRecord(
            block_index=block.index,
            proposal_time_s=t_wall,
            finalize_time_s=None,
            latency_s=None,
            signatures=1,
            quorum_mode=self.quorum_cfg.label(),
            stalled=False,
        )

        peers = [s for s in self.services if s is not proposer_service]
        proposal_body = {"block": block.to_map()}

        def ask(peer: ValidatorService) -> dict:
            if peer.validator._is(FaultKind.OFFLINE):
                return {}
            try:
                return self.client.request(peer.address, "POST", "/propose", proposal_body)
            except (OSError, json.JSONDecodeError):
                return {}

        futures = [self._pool.submit(ask, peer) for peer in peers]
        decision = finalize(proposer.votes, block, self.quorum_cfg, proposer.chain.registry)
        finalized = decision.finalized
        deadline = time.perf_counter() + timeout_s
        if not finalized:
            for future in as_completed(futures, timeout=timeout_s):
                result = future.result()
                vote = result.get("vote")
                if vote:
                    decision = proposer.add_vote(
                        vote["height"], vote["block_hash"], vote["validator_id"],
                        bytes.fromhex(vote["signature"]),
                    )
                    if decision.finalized:
                        finalized = True
                        break
                if time.perf_counter() > deadline:
                    break

        if not finalized:
            record.stalled = True
            record.signatures = len(proposer.votes)
            self.trace.records.append(record)
            return record

        t1 = time.perf_counter()
        record.finalize_time_s = t_wall + (t1 - t0)
        record.latency_s = t1 - t0
        record.signatures = len(proposer.votes)

        with proposer_service.lock:
            sealed = proposer.sealed_proposal()
            sealed_body = {"block": sealed.to_map()}
            proposer.finalize_local()
        sync_futures = [
            self._pool.submit(self._deliver_finalized, peer, sealed_body)
            for peer in peers
        ]
        for future in sync_futures:
            future.result()
        self.trace.records.append(record)
        return record

    def _deliver_finalized(self, peer: ValidatorService, body: dict) -> None:
        if peer.validator._is(FaultKind.OFFLINE):
            return
        try:
            self.client.request(peer.address, "POST", "/vote", body)
        except (OSError, json.JSONDecodeError):
            pass

    def head_heights(self) -> dict[str, int]:
        out = {}
        for service in self.services:
            if service.validator._is(FaultKind.OFFLINE):
                out[service.validator.validator_id] = service.validator.chain.height
            else:
                head = self.client.request(service.address, "GET", "/head")
                out[service.validator.validator_id] = head["height"]
        return out


# --- benchmark --------------------------------------------------------------


@dataclass
class BenchmarkReport:
    quorum_mode: str
    blocks: int
    finalized: int
    stalled: int
    mean_latency_s: float
    variance_s2: float
    tx_total: int
    duration_s: float
    tx_per_s: float
    trace: ConsensusTrace

    def throughput_map(self) -> dict:
        return {
            "mode": self.quorum_mode,
            "blocks": self.blocks,
            "tx_total": self.tx_total,
            "duration_s": self.duration_s,
            "tx_per_s": self.tx_per_s,
        }


def _variance(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    mean = sum(values) / len(values)
    return sum((v - mean) ** 2 for v in values) / (len(values) - 1)


def measure_benchmark_service(
    validators: list[Validator],
    quorum_cfg: QuorumConfig,
    workload: list[list[LedgerEvent]],
) -> BenchmarkReport:
    committee = ServiceCommittee(validators, quorum_cfg)
    try:
        start = time.perf_counter()
        for batch in workload:
            committee.run_height(batch)
        duration = time.perf_counter() - start
    finally:
        committee.close()
    trace = committee.trace
    tx_total = sum(len(b) for b in workload)
    latencies = trace.latencies()
    return BenchmarkReport(
        quorum_mode=quorum_cfg.label(),
        blocks=len(workload),
        finalized=trace.finalized_count,
        stalled=trace.stall_count,
        mean_latency_s=trace.mean_latency(),
        variance_s2=_variance(latencies),
        tx_total=tx_total,
        duration_s=duration,
        tx_per_s=(tx_total / duration) if duration > 0 else float("nan"),
        trace=trace,
    )


def measure_benchmark_sim(
    validators: list[Validator],
    quorum_cfg: QuorumConfig,
    workload: list[list[LedgerEvent]],
    net,
    fault_plan=None,
) -> BenchmarkReport:
    from .consensus import SimCommittee

    committee = SimCommittee(validators, net, quorum_cfg, fault_plan=fault_plan)
    start = time.perf_counter()
    trace = committee.run_workload(workload)
    duration = time.perf_counter() - start
    tx_total = sum(len(b) for b in workload)
    latencies = trace.latencies()
    return BenchmarkReport(
        quorum_mode=quorum_cfg.label(),
        blocks=len(workload),
        finalized=trace.finalized_count,
        stalled=trace.stall_count,
        mean_latency_s=trace.mean_latency(),
        variance_s2=_variance(latencies),
        tx_total=tx_total,
        duration_s=duration,
        tx_per_s=(tx_total / duration) if duration > 0 else float("nan"),
        trace=trace,
    )

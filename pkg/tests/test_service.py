import json

import pytest

from satfed.bench import bench_workload, build_committee, run_benchmark
from satfed.consensus import QuorumConfig, QuorumMode
from satfed.ledger import Block
from satfed.service import ServiceClient, ServiceCommittee, ValidatorService


@pytest.fixture
def committee():
    quorum = QuorumConfig(5, QuorumMode.FIXED_Q, q=3)
    validators, vendor_key = build_committee(5, quorum)
    committee = ServiceCommittee(validators, quorum)
    yield committee, validators, vendor_key
    committee.close()


class TestEndpoints:
    def test_submit_propose_vote_roundtrip(self, committee):
        committee, validators, vendor_key = committee
        workload = bench_workload(1, 2, vendor_key)
        record = committee.run_height(workload[0])
        assert not record.stalled
        heights = committee.head_heights()
        assert set(heights.values()) == {2}

    def test_submit_replay_is_duplicate(self, committee):
        committee, validators, vendor_key = committee
        event = bench_workload(1, 1, vendor_key)[0][0]
        address = committee.services[1].address
        client = committee.client
        first = client.request(address, "POST", "/submit", {"event": event.to_map()})
        assert first["status"] == "accepted"
        replay = client.request(address, "POST", "/submit", {"event": event.to_map()})
        assert replay.get("duplicate") or replay["status"] == "duplicate"

    def test_chain_sync_endpoint(self, committee):
        committee, validators, vendor_key = committee
        for batch in bench_workload(3, 1, vendor_key):
            committee.run_height(batch)
        address = committee.services[2].address
        resp = committee.client.request(address, "GET", "/chain?from=0")
        blocks = [Block.from_map(m) for m in resp["blocks"]]
        assert len(blocks) == 4
        for prev, cur in zip(blocks, blocks[1:]):
            assert cur.prev_hash == prev.block_hash()

    def test_head_endpoint(self, committee):
        committee, validators, vendor_key = committee
        committee.run_height(bench_workload(1, 1, vendor_key)[0])
        resp = committee.client.request(committee.services[0].address, "GET", "/head")
        assert resp["height"] == 2
        assert resp["head_hash"] == validators[0].chain.head_hash().hex

    def test_malformed_body_400(self, committee):
        committee, validators, _ = committee
        import http.client

        host, port = committee.services[0].address.rsplit(":", 1)
        conn = http.client.HTTPConnection(host, int(port), timeout=10)
        conn.request("POST", "/propose", body=b"{not json",
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        body = json.loads(resp.read())
        assert resp.status == 400
        assert "error" in body
        conn.close()

    def test_adversarial_block_body_400_not_crash(self, committee):
        committee, validators, _ = committee
        resp = committee.client.request(
            committee.services[0].address, "POST", "/propose",
            {"block": {"index": "zero", "events": None}},
        )
        assert "error" in resp
        # Server still answers afterwards.
        head = committee.client.request(committee.services[0].address, "GET", "/head")
        assert head["height"] == 1

    def test_unknown_chain_range(self, committee):
        committee, validators, _ = committee
        resp = committee.client.request(committee.services[0].address, "GET", "/chain?from=99")
        assert "error" in resp


class TestServiceBenchmark:
    def test_hundred_blocks_identical_chains(self, tmp_path):
        quorum = QuorumConfig(5, QuorumMode.FIXED_Q, q=3)
        report, validators = run_benchmark(quorum, block_count=100, tx_batch=1,
                                           transport="service")
        assert report.finalized == 100
        assert report.stalled == 0
        assert report.mean_latency_s < 1.0
        heads = {v.chain.head_hash().hex for v in validators}
        assert len(heads) == 1
        paths = []
        for v in validators:
            path = tmp_path / f"{v.validator_id}.jsonl"
            v.chain.save(path)
            paths.append(path.read_bytes())
        assert len({p for p in paths}) == 1  # byte-identical ledger files

    def test_transport_equivalence_modulo_timestamps(self):
        # Same workload and quorum through both transports: identical event
        # content and order, identical proposers; timestamps are clock-domain.
        quorum = QuorumConfig(5, QuorumMode.FIXED_Q, q=3)
        sim_report, sim_validators = run_benchmark(
            quorum, block_count=10, tx_batch=2, transport="sim"
        )
        svc_report, svc_validators = run_benchmark(
            quorum, block_count=10, tx_batch=2, transport="service"
        )
        sim_chain = sim_validators[0].chain
        svc_chain = svc_validators[0].chain
        assert sim_chain.height == svc_chain.height

        def skeleton(chain):
            return [
                (
                    b.index, b.proposer_id,
                    [(e.kind.value, e.round, e.token.hex if e.token else None)
                     for e in b.events],
                )
                for b in chain.blocks
            ]

        assert skeleton(sim_chain) == skeleton(svc_chain)

import math

import pytest

from satfed.errors import ConfigError
from satfed.network import NetworkProfile, SimulatedNetwork, WireMessage


def _msg(i=0, sender="a"):
    return WireMessage("Submit", sender, 0, {"n": i})


class TestProfile:
    def test_validation(self):
        with pytest.raises(ConfigError):
            NetworkProfile(mean_latency_s=-1)
        with pytest.raises(ConfigError):
            NetworkProfile(mean_latency_s=0.1, jitter_s=0.2)
        with pytest.raises(ConfigError):
            NetworkProfile(drop_probability=1.0)


class TestDelivery:
    def test_zero_profile_instant_fifo(self):
        net = SimulatedNetwork(NetworkProfile(0, 0, 0, seed=1))
        got = []
        net.register("b", lambda m: got.append(m.body["n"]))
        for i in range(5):
            net.send("a", "b", _msg(i))
        net.run_until_idle()
        assert got == [0, 1, 2, 3, 4]
        assert net.now == 0.0

    def test_fifo_with_jitter(self):
        net = SimulatedNetwork(NetworkProfile(0.05, 0.04, 0.0, seed=3))
        got = []
        net.register("b", lambda m: got.append(m.body["n"]))
        for i in range(200):
            net.send("a", "b", _msg(i))
        net.run_until_idle()
        assert got == list(range(200))

    def test_drop_rate_within_3_sigma(self):
        p = 0.3
        n = 10_000
        net = SimulatedNetwork(NetworkProfile(0.01, 0.0, p, seed=5))
        delivered = []
        net.register("b", lambda m: delivered.append(1))
        sent = sum(1 for i in range(n) if net.send("a", "b", _msg(i)))
        net.run_until_idle()
        dropped = n - sent
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(dropped - n * p) < 3 * sigma
        assert len(delivered) == sent

    def test_unregistered_destination_absorbs(self):
        net = SimulatedNetwork(NetworkProfile(0, 0, 0, seed=1))
        assert net.send("a", "ghost", _msg()) is False

    def test_deterministic_given_seed(self):
        def trace(seed):
            net = SimulatedNetwork(NetworkProfile(0.05, 0.02, 0.1, seed=seed))
            deliveries = []
            net.register("b", lambda m: deliveries.append((round(net.now, 9), m.body["n"])))
            for i in range(100):
                net.send("a", "b", _msg(i))
            net.run_until_idle()
            return deliveries

        assert trace(42) == trace(42)
        assert trace(42) != trace(43)

    def test_slow_multiplier_delays(self):
        net = SimulatedNetwork(NetworkProfile(0.1, 0.0, 0.0, seed=1))
        times = {}
        net.register("b", lambda m: times.setdefault(m.body["n"], net.now))
        net.send("a", "b", _msg(0))
        net.run_until_idle()
        net2 = SimulatedNetwork(NetworkProfile(0.1, 0.0, 0.0, seed=1))
        times2 = {}
        net2.register("b", lambda m: times2.setdefault(m.body["n"], net2.now))
        net2.send("a", "b", _msg(0), delay_multiplier=3.0)
        net2.run_until_idle()
        assert times2[0] == pytest.approx(3 * times[0])

    def test_advance_to_only_forward(self):
        net = SimulatedNetwork(NetworkProfile(0, 0, 0, seed=1))
        net.advance_to(10.0)
        assert net.now == 10.0
        net.advance_to(5.0)
        assert net.now == 10.0


def test_body_hash_matches_canonical_bytes():
    from satfed.crypto import canonical_json, hash_bytes

    msg = WireMessage("Vote", "a", 3, {"x": 1, "a": 2})
    assert msg.body_hash == hash_bytes(canonical_json({"x": 1, "a": 2}))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satfed.aggregation import (
    AgeRecord,
    HapAggregate,
    ReputationTable,
    ValidationOutcome,
    WeightConfig,
    decay,
    global_fuse,
    hap_aggregate,
    hap_weights,
    satellite_weights,
    update_reputation,
    update_token,
)
from satfed.errors import (
    DegenerateInputError,
    ProvenanceError,
    RegistryError,
    ShapeError,
    StalenessError,
)
from satfed.model import ModelVector
from satfed.sealing import MaskEscrow, SealScheme, SealingKey, UpdateMetadata, seal_update


def _sealed(model, vendor="v1", sat="s1", rnd=1, fetch=1, size=100, key=None, ts=0.0):
    key = key or SealingKey.create(vendor, f"seed-{vendor}".encode())
    meta = UpdateMetadata(vendor, sat, rnd, size, fetch, ts)
    return seal_update(model, meta, key, SealScheme.PLAINTEXT), key


def _escrow(*keys):
    escrow = MaskEscrow()
    for k in keys:
        escrow.register_vendor(k.vendor_id, k.secret_seed)
    return escrow


def _table(entries):
    rep = ReputationTable()
    ages = AgeRecord()
    for vendor, sat, r, a in entries:
        rep.register(vendor, sat, r)
        ages.set(vendor, sat, a)
    return rep, ages


class TestDecay:
    def test_zero_age(self):
        assert decay(0, 5.0) == 1.0

    def test_zero_lambda(self):
        assert decay(12, 0.0) == 1.0

    def test_half_life(self):
        assert decay(1, math.log(2)) == pytest.approx(0.5)


class TestSatelliteWeights:
    def _metas(self, spec):
        return [
            UpdateMetadata(v, s, rnd, size, fetch, 0.0)
            for (v, s, rnd, fetch, size) in spec
        ]

    def test_symmetric_pair(self):
        metas = self._metas([("v", "a", 1, 1, 100), ("v", "b", 1, 1, 100)])
        rep, ages = _table([("v", "a", 1.0, 0), ("v", "b", 1.0, 0)])
        assert satellite_weights(metas, rep, ages, WeightConfig(0.5)) == [0.5, 0.5]

    def test_reduces_to_data_proportional(self):
        metas = self._metas([("v", "a", 1, 1, 100), ("v", "b", 1, 1, 300)])
        rep, ages = _table([("v", "a", 1.0, 3), ("v", "b", 1.0, 0)])
        weights = satellite_weights(metas, rep, ages, WeightConfig(0.0))
        assert weights == pytest.approx([0.25, 0.75])

    def test_age_discount_balances_masses(self):
        # |D| = {100, 200}, ages {0, 1}, lambda = ln 2 -> equal masses.
        metas = self._metas([("v", "a", 1, 1, 100), ("v", "b", 1, 0, 200)])
        rep, ages = _table([("v", "a", 1.0, 0), ("v", "b", 1.0, 1)])
        weights = satellite_weights(metas, rep, ages, WeightConfig(math.log(2)))
        assert weights == pytest.approx([0.5, 0.5])

    def test_empty_rejected(self):
        rep, ages = _table([])
        with pytest.raises(DegenerateInputError):
            satellite_weights([], rep, ages, WeightConfig())

    def test_unknown_satellite_rejected(self):
        metas = self._metas([("v", "mystery", 1, 1, 10)])
        rep, ages = _table([])
        with pytest.raises(RegistryError):
            satellite_weights(metas, rep, ages, WeightConfig())

    @given(
        sizes=st.lists(st.integers(min_value=1, max_value=10**6), min_size=1, max_size=20),
        lam=st.floats(min_value=0.0, max_value=5.0),
        seed=st.integers(min_value=0, max_value=10**6),
    )
    @settings(max_examples=200, deadline=None)
    def test_weights_normalize(self, sizes, lam, seed):
        rng = np.random.default_rng(seed)
        entries = [
            ("v", f"s{i}", float(rng.uniform(0.01, 1.0)), int(rng.integers(0, 6)))
            for i in range(len(sizes))
        ]
        rep, ages = _table(entries)
        metas = [
            UpdateMetadata("v", f"s{i}", 1, sizes[i], 0, 0.0) for i in range(len(sizes))
        ]
        weights = satellite_weights(metas, rep, ages, WeightConfig(lam))
        assert abs(sum(weights) - 1.0) < 1e-9
        assert all(w >= 0 for w in weights)

    def test_scale_covariance(self):
        rep, ages = _table([("v", "a", 0.7, 1), ("v", "b", 0.9, 2)])
        base = self._metas([("v", "a", 1, 0, 50), ("v", "b", 1, 0, 70)])
        scaled = self._metas([("v", "a", 1, 0, 50 * 13), ("v", "b", 1, 0, 70 * 13)])
        cfg = WeightConfig(0.3)
        assert satellite_weights(base, rep, ages, cfg) == pytest.approx(
            satellite_weights(scaled, rep, ages, cfg)
        )

    def test_staleness_strictly_decreases_weight(self):
        cfg = WeightConfig(0.4)
        rep, young = _table([("v", "a", 1.0, 0), ("v", "b", 1.0, 0)])
        _, old = _table([("v", "a", 1.0, 3), ("v", "b", 1.0, 0)])
        metas = self._metas([("v", "a", 1, 1, 100), ("v", "b", 1, 1, 100)])
        w_young = satellite_weights(metas, rep, young, cfg)
        w_old = satellite_weights(metas, rep, old, cfg)
        assert w_old[0] < w_young[0]


class TestHapAggregate:
    def test_single_update_identity(self):
        model = ModelVector(np.array([1.0, -2.0, 0.5], dtype=np.float32))
        sealed, key = _sealed(model)
        agg = hap_aggregate([sealed], [1.0], _escrow(key), WeightConfig(), hap_id="h1")
        assert np.array_equal(agg.model.values, model.values)
        assert agg.contributors == [update_token(sealed)]

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(21)
        models = [ModelVector(rng.normal(size=10).astype(np.float32)) for _ in range(3)]
        key = SealingKey.create("v1", b"seed-v1")
        sealed = [
            _sealed(m, sat=f"s{i}", key=key, ts=float(i))[0] for i, m in enumerate(models)
        ]
        alphas = [0.2, 0.5, 0.3]
        agg = hap_aggregate(sealed, alphas, _escrow(key), WeightConfig(), hap_id="h1")

        # Scalar-loop oracle over the same token ordering.
        order = sorted(range(3), key=lambda i: update_token(sealed[i]).bytes32)
        expected = [0.0] * 10
        for i in order:
            for j in range(10):
                expected[j] += alphas[i] * float(models[i].values[j])
        assert np.allclose(agg.model.values, expected, atol=1e-6)

    def test_cancellation(self):
        rng = np.random.default_rng(23)
        theta = ModelVector(rng.normal(size=6).astype(np.float32))
        minus = ModelVector(-theta.values)
        key = SealingKey.create("v1", b"seed-v1")
        s1, _ = _sealed(theta, sat="a", key=key)
        s2, _ = _sealed(minus, sat="b", key=key)
        agg = hap_aggregate([s1, s2], [0.5, 0.5], _escrow(key), WeightConfig())
        assert np.allclose(agg.model.values, 0.0, atol=1e-7)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(29)
        key = SealingKey.create("v1", b"seed-v1")
        sealed = [
            _sealed(ModelVector(rng.normal(size=8).astype(np.float32)), sat=f"s{i}", key=key)[0]
            for i in range(4)
        ]
        alphas = [0.1, 0.2, 0.3, 0.4]
        fwd = hap_aggregate(sealed, alphas, _escrow(key), WeightConfig())
        rev = hap_aggregate(sealed[::-1], alphas[::-1], _escrow(key), WeightConfig())
        assert np.array_equal(fwd.model.values, rev.model.values)
        assert fwd.contributors == rev.contributors

    def test_uncommitted_update_rejected(self):
        model = ModelVector(np.ones(3, dtype=np.float32))
        sealed, key = _sealed(model)
        with pytest.raises(ProvenanceError):
            hap_aggregate(
                [sealed], [1.0], _escrow(key), WeightConfig(), committed_tokens=set()
            )

    def test_participating_mass_uses_fetch_round(self):
        model = ModelVector(np.ones(3, dtype=np.float32))
        sealed, key = _sealed(model, rnd=4, fetch=2, size=100)
        agg = hap_aggregate(
            [sealed], [1.0], _escrow(key), WeightConfig(math.log(2)), round_index=4
        )
        assert agg.participating_mass == pytest.approx(25.0)  # 100 * 2^-2


class TestHapWeightsAndFusion:
    def _agg(self, hap_id, mass, values, rnd=1):
        return HapAggregate(hap_id, rnd, ModelVector(np.asarray(values, dtype=np.float32)), [], mass)

    def test_mass_proportional(self):
        aggs = [self._agg("h1", 300, [1.0]), self._agg("h2", 100, [2.0])]
        assert hap_weights(aggs) == pytest.approx([0.75, 0.25])

    def test_single_hap(self):
        assert hap_weights([self._agg("h1", 42, [0.0])]) == [1.0]

    def test_uniform_for_equal_masses(self):
        aggs = [self._agg(f"h{i}", 7.5, [0.0]) for i in range(4)]
        assert hap_weights(aggs) == pytest.approx([0.25] * 4)

    def test_empty_rejected(self):
        with pytest.raises(DegenerateInputError):
            hap_weights([])

    def test_fuse_single(self):
        agg = self._agg("h1", 10, [3.0, -1.0])
        fused = global_fuse([agg], [1.0])
        assert np.array_equal(fused.values, agg.model.values)

    def test_fuse_identical_models_fixed_point(self):
        values = [0.7, -0.2, 1.5]
        aggs = [self._agg("h1", 10, values), self._agg("h2", 90, values)]
        fused = global_fuse(aggs, [0.1, 0.9])
        assert np.allclose(fused.values, values, atol=1e-7)

    def test_fuse_matches_scalar_oracle(self):
        rng = np.random.default_rng(31)
        models = [rng.normal(size=7) for _ in range(3)]
        aggs = [self._agg(f"h{i}", 1, m) for i, m in enumerate(models)]
        betas = [0.5, 0.25, 0.25]
        fused = global_fuse(aggs, betas)
        expected = [
            sum(betas[i] * float(np.float32(models[i][j])) for i in range(3))
            for j in range(7)
        ]
        assert np.allclose(fused.values, expected, atol=1e-6)

    def test_round_mismatch_rejected(self):
        aggs = [self._agg("h1", 1, [0.0], rnd=1), self._agg("h2", 1, [0.0], rnd=2)]
        with pytest.raises(StalenessError):
            global_fuse(aggs, [0.5, 0.5])

    def test_dim_mismatch_rejected(self):
        aggs = [self._agg("h1", 1, [0.0]), self._agg("h2", 1, [0.0, 1.0])]
        with pytest.raises(ShapeError):
            global_fuse(aggs, [0.5, 0.5])

    @given(
        masses=st.lists(st.floats(min_value=1e-3, max_value=1e6), min_size=1, max_size=12)
    )
    @settings(max_examples=200, deadline=None)
    def test_beta_normalization(self, masses):
        aggs = [self._agg(f"h{i}", m, [0.0]) for i, m in enumerate(masses)]
        assert abs(sum(hap_weights(aggs)) - 1.0) < 1e-9


class TestFedAvgReduction:
    def test_two_level_equals_flat_mean(self):
        # lambda = 0, r = 1: fusing per-platform aggregates must equal the flat
        # data-size-weighted mean, against a brute-force oracle over all updates.
        rng = np.random.default_rng(37)
        key = SealingKey.create("v1", b"seed-v1")
        escrow = _escrow(key)
        cfg = WeightConfig(0.0)
        dim = 12

        groups, all_updates = [], []
        for h in range(3):
            group = []
            for i in range(rng.integers(2, 7)):
                model = ModelVector(rng.normal(size=dim).astype(np.float32))
                size = int(rng.integers(10, 500))
                sealed, _ = _sealed(model, sat=f"h{h}s{i}", key=key, size=size)
                group.append((sealed, size, model))
            groups.append(group)
            all_updates.extend(group)

        rep, ages = _table(
            [("v1", s.metadata.sat_id, 1.0, 0) for (s, _, _) in all_updates]
        )
        aggs = []
        for h, group in enumerate(groups):
            metas = [s.metadata for (s, _, _) in group]
            alphas = satellite_weights(metas, rep, ages, cfg)
            aggs.append(
                hap_aggregate([s for (s, _, _) in group], alphas, escrow, cfg, hap_id=f"h{h}")
            )
        fused = global_fuse(aggs, hap_weights(aggs))

        total = sum(size for (_, size, _) in all_updates)
        flat = np.zeros(dim)
        for _, size, model in all_updates:
            flat += (size / total) * model.values.astype(np.float64)
        assert np.allclose(fused.values, flat, rtol=1e-6, atol=1e-7)


class TestReputation:
    def _rep(self):
        rep = ReputationTable()
        rep.register("v", "a", 1.0)
        rep.register("v", "b", 0.8)
        return rep

    def test_no_outcomes_identity(self):
        rep = self._rep()
        assert update_reputation(rep, []).scores == rep.scores

    def test_accept_caps_at_one(self):
        rep = update_reputation(self._rep(), [ValidationOutcome("v", "a", True)])
        assert rep.get("v", "a") == 1.0

    def test_rejection_halves(self):
        rep = update_reputation(self._rep(), [ValidationOutcome("v", "b", False, "bad sig")])
        assert rep.get("v", "b") == pytest.approx(0.4)

    def test_floor(self):
        rep = ReputationTable()
        rep.register("v", "a", 0.0015)
        rep = update_reputation(rep, [ValidationOutcome("v", "a", False)])
        assert rep.get("v", "a") == pytest.approx(1e-3)

    def test_unknown_satellite(self):
        with pytest.raises(RegistryError):
            update_reputation(self._rep(), [ValidationOutcome("v", "zz", True)])

    def test_original_table_unchanged(self):
        rep = self._rep()
        update_reputation(rep, [ValidationOutcome("v", "b", False)])
        assert rep.get("v", "b") == 0.8

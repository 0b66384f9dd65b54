"""Scenario configuration: schema validation, overrides, and derived objects.

A scenario is one canonical JSON document. Validation errors name the path of
the offending field. Overrides are dotted paths applied before validation, so
benchmark sweeps stay scriptable without config-file proliferation.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .consensus import FaultKind, FaultProfile, QuorumConfig, QuorumMode
from .datasets import PartitionSpec, PartitionStyle
from .errors import ConfigError
from .model import TrainConfig
from .network import NetworkProfile
from .orbit import ObserverKind, ObserverSpec, SatelliteSpec, generate_constellation
from .sealing import SealScheme


@dataclass
class VendorConfig:
    vendor_id: str
    planes: int
    sats_per_plane: int
    altitude_km: float
    inclination_deg: float
    haps: list[ObserverSpec]
    gs: list[ObserverSpec] = field(default_factory=list)

    def constellation(self) -> list[SatelliteSpec]:
        return generate_constellation(
            self.vendor_id, self.planes, self.sats_per_plane,
            self.altitude_km, self.inclination_deg,
        )


@dataclass
class SatelliteFault:
    vendor_id: str
    sat_id: str
    kind: str  # tampered_payload | forged_signature | duplicate_token


_SAT_FAULT_KINDS = {"tampered_payload", "forged_signature", "duplicate_token"}


@dataclass
class ScenarioConfig:
    seed: int
    rounds: int
    slack_time_s: float
    mode: str  # "multi_vendor" or "single_vendor:<vendor_id>"
    quorum_mode: QuorumMode
    quorum_q: int | None
    quorum_f: int | None
    weight_cfg_lambda: float
    quantizer_levels: int | None
    train: TrainConfig
    partition_style: PartitionStyle
    n_classes: int
    classes_per_satellite: int
    samples_per_satellite: int
    feature_dim: int
    cluster_spread: float
    sealing_scheme: SealScheme
    bandwidth_bps: float
    theta_min_deg: float
    window_step_s: float
    network: NetworkProfile
    vendors: list[VendorConfig]
    validator_faults: list[FaultProfile]
    satellite_faults: list[SatelliteFault]
    target_accuracy: float

    @property
    def single_vendor(self) -> str | None:
        if self.mode.startswith("single_vendor:"):
            return self.mode.split(":", 1)[1]
        return None

    def participating_vendors(self) -> list[VendorConfig]:
        chosen = self.single_vendor
        if chosen is None:
            return list(self.vendors)
        matches = [v for v in self.vendors if v.vendor_id == chosen]
        if not matches:
            raise ConfigError(f"mode: unknown vendor {chosen!r}")
        return matches

    def quorum_config(self, n_validators: int) -> QuorumConfig:
        return QuorumConfig(n_validators, self.quorum_mode, q=self.quorum_q, f=self.quorum_f)

    def partition_spec(self) -> PartitionSpec:
        from .datasets import derive_seed

        return PartitionSpec(
            style=self.partition_style,
            n_classes=self.n_classes,
            samples_per_satellite=self.samples_per_satellite,
            feature_dim=self.feature_dim,
            seed=derive_seed(self.seed, "partition"),
            classes_per_satellite=self.classes_per_satellite,
            cluster_spread=self.cluster_spread,
        )


def _need(obj: dict, key: str, path: str, kind=None):
    if key not in obj:
        raise ConfigError(f"{path}.{key}: required field missing")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        names = kind.__name__ if not isinstance(kind, tuple) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}.{key}: expected {names}, got {type(value).__name__}")
    return value


def _observer(obj: dict, path: str, kind: ObserverKind) -> ObserverSpec:
    try:
        return ObserverSpec(
            observer_id=_need(obj, "observer_id", path, str),
            kind=kind,
            latitude_deg=float(_need(obj, "latitude_deg", path, (int, float))),
            longitude_deg=float(_need(obj, "longitude_deg", path, (int, float))),
            altitude_km=float(obj.get("altitude_km", 20.0 if kind == ObserverKind.HAP else 0.0)),
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_scenario(raw: dict) -> ScenarioConfig:
    """Validate a scenario document; raises ConfigError naming the bad field."""
    path = "config"
    seed = int(_need(raw, "seed", path, int))
    rounds = int(_need(raw, "rounds", path, int))
    if rounds < 1:
        raise ConfigError("config.rounds: must be at least 1")
    slack = float(_need(raw, "slack_time_s", path, (int, float)))
    if slack <= 0:
        raise ConfigError("config.slack_time_s: must be positive")

    mode = raw.get("mode", "multi_vendor")
    if mode != "multi_vendor" and not mode.startswith("single_vendor:"):
        raise ConfigError(
            "config.mode: expected 'multi_vendor' or 'single_vendor:<vendor_id>'"
        )

    quorum = raw.get("quorum", {"mode": "two_thirds"})
    try:
        quorum_mode = QuorumMode(_need(quorum, "mode", "config.quorum", str))
    except ValueError as exc:
        raise ConfigError(f"config.quorum.mode: {exc}") from exc
    quorum_q = quorum.get("q")
    quorum_f = quorum.get("f")

    weights = raw.get("weights", {})
    lambda_decay = float(weights.get("lambda_decay", 0.1))
    if lambda_decay < 0:
        raise ConfigError("config.weights.lambda_decay: must be non-negative")
    quantizer_levels = weights.get("quantizer_levels")

    training = raw.get("training", {})
    try:
        train = TrainConfig(
            learning_rate=float(training.get("learning_rate", 0.5)),
            epochs=int(training.get("epochs", 2)),
            batch_size=int(training.get("batch_size", 20)),
            rng_seed=0,  # per-satellite seeds are derived at training time
        )
    except Exception as exc:
        raise ConfigError(f"config.training: {exc}") from exc

    part = raw.get("partition", {})
    try:
        partition_style = PartitionStyle(part.get("style", "iid"))
    except ValueError as exc:
        raise ConfigError(f"config.partition.style: {exc}") from exc

    link = raw.get("link", {})
    bandwidth = float(link.get("bandwidth_bps", 10e6))
    if bandwidth <= 0:
        raise ConfigError("config.link.bandwidth_bps: must be positive")

    net = raw.get("network", {})
    try:
        profile = NetworkProfile(
            mean_latency_s=float(net.get("mean_latency_s", 0.02)),
            jitter_s=float(net.get("jitter_s", 0.005)),
            drop_probability=float(net.get("drop_probability", 0.0)),
            seed=int(net.get("seed", seed)),
        )
    except ConfigError as exc:
        raise ConfigError(f"config.network: {exc}") from exc

    vendors_raw = _need(raw, "vendors", path, list)
    if not vendors_raw:
        raise ConfigError("config.vendors: at least one vendor required")
    vendors = []
    for i, v in enumerate(vendors_raw):
        vpath = f"config.vendors[{i}]"
        cons = _need(v, "constellation", vpath, dict)
        try:
            vendor = VendorConfig(
                vendor_id=_need(v, "vendor_id", vpath, str),
                planes=int(_need(cons, "planes", f"{vpath}.constellation", int)),
                sats_per_plane=int(_need(cons, "sats_per_plane", f"{vpath}.constellation", int)),
                altitude_km=float(_need(cons, "altitude_km", f"{vpath}.constellation", (int, float))),
                inclination_deg=float(
                    _need(cons, "inclination_deg", f"{vpath}.constellation", (int, float))
                ),
                haps=[
                    _observer(h, f"{vpath}.haps[{j}]", ObserverKind.HAP)
                    for j, h in enumerate(_need(v, "haps", vpath, list))
                ],
                gs=[
                    _observer(g, f"{vpath}.gs[{j}]", ObserverKind.GS)
                    for j, g in enumerate(v.get("gs", []))
                ],
            )
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"{vpath}: {exc}") from exc
        if vendor.planes < 1 or vendor.sats_per_plane < 1:
            raise ConfigError(f"{vpath}.constellation: planes and sats_per_plane must be >= 1")
        if not vendor.haps:
            raise ConfigError(f"{vpath}.haps: each vendor needs at least one platform")
        vendors.append(vendor)

    vendor_ids = [v.vendor_id for v in vendors]
    if len(set(vendor_ids)) != len(vendor_ids):
        raise ConfigError("config.vendors: duplicate vendor_id")

    faults_raw = raw.get("fault_plan", {})
    validator_faults = []
    for i, f in enumerate(faults_raw.get("validators", [])):
        fpath = f"config.fault_plan.validators[{i}]"
        try:
            validator_faults.append(
                FaultProfile(
                    validator_id=_need(f, "validator_id", fpath, str),
                    kind=FaultKind(_need(f, "kind", fpath, str)),
                    delay_factor=float(f.get("delay_factor", 2.0)),
                )
            )
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{fpath}: {exc}") from exc
    satellite_faults = []
    for i, f in enumerate(faults_raw.get("satellites", [])):
        fpath = f"config.fault_plan.satellites[{i}]"
        kind = _need(f, "kind", fpath, str)
        if kind not in _SAT_FAULT_KINDS:
            raise ConfigError(f"{fpath}.kind: unknown fault {kind!r}")
        satellite_faults.append(
            SatelliteFault(
                vendor_id=_need(f, "vendor_id", fpath, str),
                sat_id=_need(f, "sat_id", fpath, str),
                kind=kind,
            )
        )

    try:
        sealing = SealScheme(raw.get("sealing_scheme", "additive_mask"))
    except ValueError as exc:
        raise ConfigError(f"config.sealing_scheme: {exc}") from exc

    cfg = ScenarioConfig(
        seed=seed,
        rounds=rounds,
        slack_time_s=slack,
        mode=mode,
        quorum_mode=quorum_mode,
        quorum_q=None if quorum_q is None else int(quorum_q),
        quorum_f=None if quorum_f is None else int(quorum_f),
        weight_cfg_lambda=lambda_decay,
        quantizer_levels=None if quantizer_levels is None else int(quantizer_levels),
        train=train,
        partition_style=partition_style,
        n_classes=int(part.get("n_classes", 6)),
        classes_per_satellite=int(part.get("classes_per_satellite", 2)),
        samples_per_satellite=int(part.get("samples_per_satellite", 80)),
        feature_dim=int(part.get("feature_dim", 8)),
        cluster_spread=float(part.get("cluster_spread", 0.8)),
        sealing_scheme=sealing,
        bandwidth_bps=bandwidth,
        theta_min_deg=float(link.get("theta_min_deg", 10.0)),
        window_step_s=float(link.get("window_step_s", 10.0)),
        network=profile,
        vendors=vendors,
        validator_faults=validator_faults,
        satellite_faults=satellite_faults,
        target_accuracy=float(raw.get("target_accuracy", 0.85)),
    )
    if cfg.single_vendor is not None and cfg.single_vendor not in vendor_ids:
        raise ConfigError(f"config.mode: unknown vendor {cfg.single_vendor!r}")
    if cfg.mode == "multi_vendor" and len(vendors) < 2:
        raise ConfigError("config.mode: multi_vendor requires at least two vendors")
    # Validate the partition and quorum eagerly so bad fields fail fast.
    cfg.partition_spec()
    n_validators = sum(len(v.haps) for v in cfg.participating_vendors())
    try:
        cfg.quorum_config(n_validators)
    except ConfigError as exc:
        raise ConfigError(f"config.quorum: {exc}") from exc
    return cfg


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.path=value` overrides; values parse as JSON, else strings."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return out


def load_scenario(path, overrides: list[str] | None = None) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if overrides:
        raw = apply_overrides(raw, overrides)
    return parse_scenario(raw)

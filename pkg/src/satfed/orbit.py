"""Circular two-body constellations, visibility, and contact windows.

Spherical Earth, no perturbations: satellites fly circular orbits defined by
altitude, inclination, RAAN, and in-plane phase; observers sit fixed in the
rotating Earth frame. Visibility is a pure elevation threshold. Windows are
found with a coarse scan refined by bisection at the boundaries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError

MU_EARTH_KM3_S2 = 398600.4418
EARTH_RADIUS_KM = 6371.0
EARTH_ROTATION_RAD_S = 7.2921159e-5

BOUNDARY_TOLERANCE_S = 0.1


@dataclass(frozen=True)
class SatelliteSpec:
    sat_id: str
    vendor_id: str
    altitude_km: float
    inclination_deg: float
    raan_deg: float
    phase_deg: float
    epoch_s: float = 0.0

    def __post_init__(self):
        if self.altitude_km <= 0:
            raise ConfigError(f"{self.sat_id}: altitude must be positive")
        if not 0 <= self.inclination_deg <= 180:
            raise ConfigError(f"{self.sat_id}: inclination must be in [0, 180]")
        if not 0 <= self.raan_deg < 360 or not 0 <= self.phase_deg < 360:
            raise ConfigError(f"{self.sat_id}: RAAN and phase must be in [0, 360)")

    @property
    def semi_major_axis_km(self) -> float:
        return EARTH_RADIUS_KM + self.altitude_km

    @property
    def mean_motion_rad_s(self) -> float:
        return math.sqrt(MU_EARTH_KM3_S2 / self.semi_major_axis_km**3)

    @property
    def period_s(self) -> float:
        return 2 * math.pi / self.mean_motion_rad_s


class ObserverKind(str, Enum):
    HAP = "HAP"
    GS = "GS"


@dataclass(frozen=True)
class ObserverSpec:
    observer_id: str
    kind: ObserverKind
    latitude_deg: float
    longitude_deg: float
    altitude_km: float

    def __post_init__(self):
        if abs(self.latitude_deg) > 90:
            raise ConfigError(f"{self.observer_id}: |latitude| must be <= 90")
        if not -180 <= self.longitude_deg < 180:
            raise ConfigError(f"{self.observer_id}: longitude must be in [-180, 180)")
        if self.altitude_km < 0:
            raise ConfigError(f"{self.observer_id}: altitude must be non-negative")

    def position_ecef_km(self) -> np.ndarray:
        lat = math.radians(self.latitude_deg)
        lon = math.radians(self.longitude_deg)
        r = EARTH_RADIUS_KM + self.altitude_km
        return np.array(
            [r * math.cos(lat) * math.cos(lon), r * math.cos(lat) * math.sin(lon), r * math.sin(lat)]
        )


@dataclass(frozen=True)
class OrbitalState:
    position_eci_km: np.ndarray
    time_s: float


@dataclass(frozen=True)
class ContactWindow:
    sat_id: str
    observer_id: str
    t_start_s: float
    t_end_s: float
    duration_s: float
    bandwidth_bps: float

    def __post_init__(self):
        if self.t_end_s <= self.t_start_s:
            raise ConfigError("window must have positive extent")
        if self.bandwidth_bps <= 0:
            raise ConfigError("window bandwidth must be positive")


def generate_constellation(
    vendor_id: str,
    planes: int,
    sats_per_plane: int,
    altitude_km: float,
    inclination_deg: float,
    epoch_s: float = 0.0,
) -> list[SatelliteSpec]:
    """Walker-style shell: planes evenly spaced in RAAN, uniform in-plane phasing."""
    if planes < 1 or sats_per_plane < 1:
        raise ConfigError("planes and sats_per_plane must be at least 1")
    specs = []
    for p in range(planes):
        for s in range(sats_per_plane):
            specs.append(
                SatelliteSpec(
                    sat_id=f"{vendor_id}-p{p}s{s}",
                    vendor_id=vendor_id,
                    altitude_km=altitude_km,
                    inclination_deg=inclination_deg,
                    raan_deg=360.0 * p / planes,
                    phase_deg=360.0 * s / sats_per_plane,
                    epoch_s=epoch_s,
                )
            )
    return specs


def positions_eci_km(sat: SatelliteSpec, times_s: np.ndarray) -> np.ndarray:
    """ECI positions (n, 3) of a circular orbit at the given times."""
    times_s = np.asarray(times_s, dtype=np.float64)
    u = np.radians(sat.phase_deg) + sat.mean_motion_rad_s * (times_s - sat.epoch_s)
    raan = math.radians(sat.raan_deg)
    inc = math.radians(sat.inclination_deg)
    a = sat.semi_major_axis_km
    cos_u, sin_u = np.cos(u), np.sin(u)
    x = a * (math.cos(raan) * cos_u - math.sin(raan) * sin_u * math.cos(inc))
    y = a * (math.sin(raan) * cos_u + math.cos(raan) * sin_u * math.cos(inc))
    z = a * (sin_u * math.sin(inc))
    return np.stack([x, y, z], axis=-1)


def propagate(sat: SatelliteSpec, t_s: float) -> OrbitalState:
    if t_s < sat.epoch_s:
        raise ConfigError("cannot propagate before the epoch")
    return OrbitalState(positions_eci_km(sat, np.array([t_s]))[0], t_s)


def eci_to_ecef(position_eci_km: np.ndarray, t_s) -> np.ndarray:
    """Rotate ECI coordinates into the Earth-fixed frame at time t."""
    theta = EARTH_ROTATION_RAD_S * np.asarray(t_s, dtype=np.float64)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    p = np.asarray(position_eci_km, dtype=np.float64)
    x = cos_t * p[..., 0] + sin_t * p[..., 1]
    y = -sin_t * p[..., 0] + cos_t * p[..., 1]
    return np.stack([x, y, p[..., 2]], axis=-1)


def _elevation_from_ecef(sat_ecef: np.ndarray, observer: ObserverSpec) -> np.ndarray:
    obs = observer.position_ecef_km()
    up = obs / np.linalg.norm(obs)
    diff = sat_ecef - obs
    dist = np.linalg.norm(diff, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_el = np.where(dist > 0, diff @ up / np.where(dist > 0, dist, 1.0), 1.0)
    return np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))


def elevation_series_deg(sat: SatelliteSpec, observer: ObserverSpec, times_s: np.ndarray) -> np.ndarray:
    """Elevation angles over a time grid; the vectorized core of the scan."""
    times_s = np.asarray(times_s, dtype=np.float64)
    eci = positions_eci_km(sat, times_s)
    return _elevation_from_ecef(eci_to_ecef(eci, times_s), observer)


def elevation_deg(state: OrbitalState, observer: ObserverSpec) -> float:
    """Elevation of a satellite above the observer's local horizon, in degrees."""
    sat_ecef = eci_to_ecef(state.position_eci_km, state.time_s)
    return float(_elevation_from_ecef(sat_ecef[np.newaxis, :], observer)[0])


def _elevation_at(sat, observer, t: float) -> float:
    return float(elevation_series_deg(sat, observer, np.array([t]))[0])


def _bisect_crossing(sat, observer, lo: float, hi: float, theta_min: float, rising: bool) -> float:
    # Invariant for rising: below at lo, at-or-above at hi (reversed when setting).
    while hi - lo > BOUNDARY_TOLERANCE_S:
        mid = 0.5 * (lo + hi)
        above = _elevation_at(sat, observer, mid) >= theta_min
        if above == rising:
            hi = mid
        else:
            lo = mid
    return hi if rising else lo


def compute_contact_windows(
    sat: SatelliteSpec,
    observer: ObserverSpec,
    t0_s: float,
    t1_s: float,
    step_s: float = 10.0,
    theta_min_deg: float = 10.0,
    bandwidth_bps: float = 10e6,
) -> list[ContactWindow]:
    """Maximal disjoint intervals with elevation >= theta_min, sorted by start.

    Boundaries between coarse samples are refined by bisection to 0.1 s; the
    refined endpoint is always on the visible side of the crossing.
    """
    if t1_s <= t0_s:
        raise ConfigError("t1 must exceed t0")
    if step_s <= 0:
        raise ConfigError("step must be positive")

    n = int(math.floor((t1_s - t0_s) / step_s)) + 1
    times = t0_s + step_s * np.arange(n)
    if times[-1] < t1_s:
        times = np.append(times, t1_s)
    above = elevation_series_deg(sat, observer, times) >= theta_min_deg

    windows: list[ContactWindow] = []
    start: float | None = None
    for i, t in enumerate(times):
        if above[i] and start is None:
            start = t if i == 0 else _bisect_crossing(
                sat, observer, times[i - 1], t, theta_min_deg, rising=True
            )
        elif not above[i] and start is not None:
            end = _bisect_crossing(sat, observer, times[i - 1], t, theta_min_deg, rising=False)
            if end > start:
                windows.append(
                    ContactWindow(sat.sat_id, observer.observer_id, start, end, end - start, bandwidth_bps)
                )
            start = None
    if start is not None and times[-1] > start:
        windows.append(
            ContactWindow(
                sat.sat_id, observer.observer_id, start, float(times[-1]),
                float(times[-1]) - start, bandwidth_bps,
            )
        )
    return windows


def capacity_bytes(window: ContactWindow) -> int:
    """Bytes deliverable in one pass: floor(bandwidth * duration / 8)."""
    return int(math.floor(window.bandwidth_bps * window.duration_s / 8.0))


def windows_to_csv(windows: list[ContactWindow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sat_id", "observer_id", "t_start_s", "t_end_s", "duration_s", "bandwidth_bps"])
        for w in windows:
            writer.writerow([w.sat_id, w.observer_id, w.t_start_s, w.t_end_s, w.duration_s, w.bandwidth_bps])

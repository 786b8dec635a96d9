"""Air-to-ground channel between a fixed-altitude drone and ground base stations.

Scalar helpers take a station index and a ground point; the ``*_matrix``
helpers evaluate many points against every station at once and are what the
arc-metric precomputation uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class CommParams:
    """Channel parameters. Defaults are the dense-urban set."""

    alpha1: float = 12.08
    alpha2: float = 0.11
    alpha3: float = 2.5
    mu_los: float = 1.6
    mu_nlos: float = 23.0
    noise_power_dbm: float = -173.0
    carrier_freq_hz: float = 2.0e9
    light_speed_mps: float = SPEED_OF_LIGHT
    drone_altitude_m: float = 100.0
    se_threshold: float = 2.0

    def __post_init__(self):
        if not (self.alpha2 > 0 and self.alpha3 > 0):
            raise ValueError("alpha2 and alpha3 must be positive")
        if not self.drone_altitude_m > 0:
            raise ValueError("drone_altitude_m must be positive")
        if not self.carrier_freq_hz > 0:
            raise ValueError("carrier_freq_hz must be positive")
        if self.se_threshold < 0:
            raise ValueError("se_threshold must be non-negative")
        if self.mu_nlos < self.mu_los:
            raise ValueError("mu_nlos must not be smaller than mu_los")


@dataclass(frozen=True)
class BaseStation:
    id: int
    position: tuple[float, float]
    tx_power_dbm: float = 46.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (*self.position, self.tx_power_dbm)):
            raise ValueError(f"station {self.id} has non-finite data")


@dataclass(frozen=True)
class CommNetwork:
    stations: tuple[BaseStation, ...]
    params: CommParams = field(default_factory=CommParams)

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        if not self.stations:
            raise ValueError("a network needs at least one station")
        if [s.id for s in self.stations] != list(range(len(self.stations))):
            raise ValueError("station ids must be contiguous from 0 in order")

    @classmethod
    def from_positions(cls, positions, params=None, tx_power_dbm=46.0):
        stations = [
            BaseStation(i, (float(x), float(y)), tx_power_dbm)
            for i, (x, y) in enumerate(positions)
        ]
        return cls(tuple(stations), params or CommParams())

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.stations], dtype=float)

    @property
    def tx_power_dbm(self) -> np.ndarray:
        return np.array([s.tx_power_dbm for s in self.stations], dtype=float)

    def __len__(self):
        return len(self.stations)


def _station(network: CommNetwork, cn: int) -> BaseStation:
    if not 0 <= cn < len(network.stations):
        raise IndexError(f"no station with index {cn}")
    return network.stations[cn]


def _horizontal(network, cn, ground_point):
    st = _station(network, cn)
    return math.hypot(ground_point[0] - st.position[0], ground_point[1] - st.position[1])


def elevation_deg(horizontal_m, altitude_m):
    """Elevation angle in degrees; 90 exactly when the drone is overhead."""
    h = np.asarray(horizontal_m, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        theta = np.degrees(np.arctan(altitude_m / h))
    return np.where(h == 0.0, 90.0, theta)


def los_probability_at(horizontal_m, params: CommParams):
    theta = elevation_deg(horizontal_m, params.drone_altitude_m)
    return 1.0 / (1.0 + params.alpha1 * np.exp(-params.alpha2 * (theta - params.alpha1)))


def pathloss_at(horizontal_m, params: CommParams):
    """Mean pathloss in dB for an array of horizontal distances."""
    h = np.asarray(horizontal_m, dtype=float)
    slant = np.sqrt(h * h + params.drone_altitude_m**2)
    fspl = 10.0 * params.alpha3 * np.log10(
        4.0 * np.pi * params.carrier_freq_hz / params.light_speed_mps * slant
    )
    p_los = los_probability_at(h, params)
    return fspl + params.mu_los * p_los + params.mu_nlos * (1.0 - p_los)


def los_probability(network: CommNetwork, cn: int, ground_point) -> float:
    return float(los_probability_at(_horizontal(network, cn, ground_point), network.params))


def nlos_probability(network: CommNetwork, cn: int, ground_point) -> float:
    return 1.0 - los_probability(network, cn, ground_point)


def mean_pathloss(network: CommNetwork, cn: int, ground_point) -> float:
    return float(pathloss_at(_horizontal(network, cn, ground_point), network.params))


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def distance_matrix(network: CommNetwork, points) -> np.ndarray:
    """Horizontal distances, shape ``(n_points, n_stations)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    diff = pts[:, None, :] - network.positions[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def received_power_matrix(network: CommNetwork, points) -> np.ndarray:
    """Mean received power in mW from every station, shape ``(n_points, n_stations)``."""
    dist = distance_matrix(network, points)
    loss_db = pathloss_at(dist, network.params)
    return dbm_to_mw(network.tx_power_dbm[None, :] - loss_db)


def serving_matrix(network: CommNetwork, points, rel_tol=1e-12) -> np.ndarray:
    """Closest station per point; near-equal distances resolve to the lower index."""
    d2 = distance_matrix(network, points) ** 2
    dmin = d2.min(axis=1, keepdims=True)
    tied = d2 <= dmin + rel_tol * np.maximum(dmin, 1.0)
    return np.argmax(tied, axis=1)


def sinr_matrix(network: CommNetwork, points, serving=None) -> np.ndarray:
    """SINR (linear) at each point when receiving from ``serving`` (default: closest)."""
    power = received_power_matrix(network, points)
    if serving is None:
        serving = serving_matrix(network, points)
    serving = np.broadcast_to(np.asarray(serving), (power.shape[0],))
    rows = np.arange(power.shape[0])
    signal = power[rows, serving]
    mask = np.ones_like(power, dtype=bool)
    mask[rows, serving] = False
    interference = np.where(mask, power, 0.0).sum(axis=1)
    noise = float(dbm_to_mw(network.params.noise_power_dbm))
    return signal / (noise + interference)


def sinr(network: CommNetwork, cn: int, ground_point) -> float:
    _station(network, cn)
    return float(sinr_matrix(network, [ground_point], serving=cn)[0])


def se_from_sinr(rho):
    return np.log2(1.0 + np.asarray(rho, dtype=float))


def spectral_efficiency(network: CommNetwork, cn: int, ground_point) -> float:
    return float(se_from_sinr(sinr(network, cn, ground_point)))


def serving_cn(network: CommNetwork, ground_point) -> int:
    return int(serving_matrix(network, [ground_point])[0])

"""Per-arc communication and travel metrics on straight, discretized flights."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .comm_model import CommNetwork, se_from_sinr, serving_matrix, sinr_matrix

DEFAULT_SEGMENTS = 100


@dataclass(frozen=True)
class ArcMetrics:
    distance_m: float = 0.0
    travel_time_s: float = 0.0
    battery_cost: float = 0.0
    handovers: int = 0
    outage_prob: float = 0.0
    outage_duration_s: float = 0.0


def sample_path(v1, v2, r: int) -> np.ndarray:
    """``r + 1`` equally spaced points from ``v1`` to ``v2`` inclusive."""
    if r < 1:
        raise ValueError(f"segment count must be >= 1, got {r}")
    a = np.asarray(v1, dtype=float)
    b = np.asarray(v2, dtype=float)
    t = np.arange(r + 1, dtype=float) / r
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    pts[-1] = b
    return pts


def _arc_comm(network: CommNetwork, v1, v2, r):
    pts = sample_path(v1, v2, r)
    serving = serving_matrix(network, pts)
    handovers = int(np.count_nonzero(serving[1:] != serving[:-1]))
    se = se_from_sinr(sinr_matrix(network, pts, serving))
    outage = int(np.count_nonzero(se < network.params.se_threshold)) / (r + 1)
    return handovers, outage


def handover_count(network: CommNetwork, v1, v2, r: int) -> int:
    return _arc_comm(network, v1, v2, r)[0]


def outage_probability(network: CommNetwork, v1, v2, r: int) -> float:
    return _arc_comm(network, v1, v2, r)[1]


def outage_duration(outage_prob: float, travel_time_s: float) -> float:
    return outage_prob * travel_time_s


class MetricMatrix:
    """Dense all-pairs arc metrics over the flyable nodes.

    Arrays are indexed ``[i, j]`` by node label and are read-only after
    construction.
    """

    FIELDS = ("distance_m", "travel_time_s", "battery_cost", "handovers",
              "outage_prob", "outage_duration_s")

    def __init__(self, distance_m, travel_time_s, battery_cost, handovers,
                 outage_prob, outage_duration_s, r_segments: int):
        self.distance_m = np.asarray(distance_m, dtype=float)
        self.travel_time_s = np.asarray(travel_time_s, dtype=float)
        self.battery_cost = np.asarray(battery_cost, dtype=float)
        self.handovers = np.asarray(handovers, dtype=np.int64)
        self.outage_prob = np.asarray(outage_prob, dtype=float)
        self.outage_duration_s = np.asarray(outage_duration_s, dtype=float)
        self.r_segments = int(r_segments)
        for name in self.FIELDS:
            getattr(self, name).setflags(write=False)

    @property
    def n(self) -> int:
        return self.distance_m.shape[0]

    def __len__(self):
        return self.n * self.n

    def __getitem__(self, arc) -> ArcMetrics:
        i, j = arc
        return ArcMetrics(
            float(self.distance_m[i, j]),
            float(self.travel_time_s[i, j]),
            float(self.battery_cost[i, j]),
            int(self.handovers[i, j]),
            float(self.outage_prob[i, j]),
            float(self.outage_duration_s[i, j]),
        )

    def __eq__(self, other):
        if not isinstance(other, MetricMatrix):
            return NotImplemented
        return self.r_segments == other.r_segments and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS
        )

    def subset(self, labels) -> "MetricMatrix":
        idx = np.asarray(labels, dtype=int)
        sub = np.ix_(idx, idx)
        return MetricMatrix(*(getattr(self, f)[sub] for f in self.FIELDS),
                            r_segments=self.r_segments)

    def with_battery_range(self, battery_range_m: float) -> "MetricMatrix":
        arrays = {f: getattr(self, f) for f in self.FIELDS}
        arrays["battery_cost"] = self.distance_m / battery_range_m
        return MetricMatrix(**arrays, r_segments=self.r_segments)

    def save(self, path):
        np.savez(path, r_segments=self.r_segments,
                 **{f: getattr(self, f) for f in self.FIELDS})

    @classmethod
    def load(cls, path) -> "MetricMatrix":
        with np.load(path) as data:
            return cls(*(data[f] for f in cls.FIELDS), r_segments=int(data["r_segments"]))


def build_metric_matrix(positions, network: CommNetwork, r: int = DEFAULT_SEGMENTS,
                        speed_mps: float = 15.0, battery_range_m: float = 15_000.0,
                        chunk_points: int = 200_000) -> MetricMatrix:
    """All-pairs metrics for the given node positions.

    Arcs costing more than a full battery are kept; the feasibility checker
    is what rejects them.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    if n < 2:
        raise ValueError("need at least two flyable nodes")
    if speed_mps <= 0 or battery_range_m <= 0:
        raise ValueError("speed and battery range must be positive")
    if r < 1:
        raise ValueError(f"segment count must be >= 1, got {r}")

    dist = np.hypot(pos[:, None, 0] - pos[None, :, 0], pos[:, None, 1] - pos[None, :, 1])
    # mirror so the matrix is exactly symmetric
    dist = np.triu(dist, 1) + np.triu(dist, 1).T
    travel = dist / speed_mps
    battery = dist / battery_range_m
    handovers = np.zeros((n, n), dtype=np.int64)
    outage = np.zeros((n, n), dtype=float)

    # the reversed arc visits the same sample points, so compute i < j and mirror
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    t = np.arange(r + 1, dtype=float) / r
    per_chunk = max(1, chunk_points // (r + 1))
    threshold = network.params.se_threshold
    for start in range(0, len(pairs), per_chunk):
        block = pairs[start:start + per_chunk]
        a = pos[[p[0] for p in block]]
        b = pos[[p[1] for p in block]]
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        pts[:, -1, :] = b
        flat = pts.reshape(-1, 2)
        serving = serving_matrix(network, flat)
        se = se_from_sinr(sinr_matrix(network, flat, serving))
        serving = serving.reshape(len(block), r + 1)
        in_outage = (se < threshold).reshape(len(block), r + 1)
        changes = np.count_nonzero(serving[:, 1:] != serving[:, :-1], axis=1)
        probs = np.count_nonzero(in_outage, axis=1) / (r + 1)
        for (i, j), h, p in zip(block, changes, probs):
            handovers[i, j] = handovers[j, i] = h
            outage[i, j] = outage[j, i] = p

    coincident = dist == 0.0
    handovers[coincident] = 0
    outage[coincident] = 0.0
    return MetricMatrix(dist, travel, battery, handovers, outage, outage * travel, r)


def cache_key(instance_text: str, r: int) -> str:
    digest = hashlib.sha256(instance_text.encode("utf-8")).hexdigest()[:16]
    return f"{digest}-R{r}"


def cached_metric_matrix(instance, cache_dir=None) -> MetricMatrix:
    """Build the instance's matrix, reusing ``<cache_dir>/metrics-<hash>-R<r>.npz``."""
    from .instance import instance_to_json

    if cache_dir is None:
        return instance.metric_matrix()
    key = cache_key(instance_to_json(instance), instance.metric_config.r_segments)
    path = Path(cache_dir) / f"metrics-{key}.npz"
    if path.exists():
        return MetricMatrix.load(path)
    matrix = instance.metric_matrix()
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix.save(path)
    return matrix

"""Problem instances: data model, seeded benchmark generator, waypoints, JSON files."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import QhullError, Voronoi

from .arc_metrics import DEFAULT_SEGMENTS, MetricMatrix, build_metric_matrix
from .comm_model import BaseStation, CommNetwork, CommParams

FORMAT_VERSION = 1
KINDS = ("depot", "customer", "charging_station", "waypoint")
BATTERY_MODES = ("reset", "carry")
WAYPOINT_TOL = 1e-6


class InstanceFormatError(ValueError):
    """Malformed instance or generator-config file."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    position: tuple[float, float]


@dataclass(frozen=True)
class Customer:
    node: int
    window_start_s: float
    window_end_s: float
    service_time_s: float


@dataclass(frozen=True)
class Drone:
    id: int
    start_depot: int
    end_depot: int


@dataclass(frozen=True)
class OperationTimes:
    depot_s: float = 120.0
    customer_s: float = 60.0
    charging_station_s: float = 180.0
    waypoint_s: float = 0.0


@dataclass(frozen=True)
class MetricConfig:
    r_segments: int = DEFAULT_SEGMENTS
    speed_mps: float = 15.0
    battery_range_m: float = 15_000.0


@dataclass(frozen=True)
class Instance:
    region_m: tuple[float, float]
    horizon_s: float
    comm: CommNetwork
    nodes: tuple[Node, ...]
    customers: tuple[Customer, ...]
    drones: tuple[Drone, ...]
    op_times: OperationTimes = field(default_factory=OperationTimes)
    h_max: float = math.inf
    o_max: float = math.inf
    metric_config: MetricConfig = field(default_factory=MetricConfig)
    battery_mode: str = "reset"
    name: str = ""

    def __post_init__(self):
        for attr in ("nodes", "customers", "drones"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        object.__setattr__(self, "region_m", tuple(float(v) for v in self.region_m))
        if [n.id for n in self.nodes] != list(range(len(self.nodes))):
            raise ValueError("node ids must be contiguous from 0")
        ranks = [KINDS.index(n.kind) for n in self.nodes]
        if ranks != sorted(ranks):
            raise ValueError("nodes must be ordered depots, customers, charging stations, waypoints")
        if self.battery_mode not in BATTERY_MODES:
            raise ValueError(f"battery_mode must be one of {BATTERY_MODES}")
        for c in self.customers:
            if self.nodes[c.node].kind != "customer":
                raise ValueError(f"customer entry points at non-customer node {c.node}")
            if not 0 <= c.window_start_s <= c.window_end_s <= self.horizon_s:
                raise ValueError(f"customer {c.node} has an invalid time window")
        if sorted(c.node for c in self.customers) != self.customer_ids:
            raise ValueError("every customer node needs exactly one customer entry")
        depots = set(self.depot_ids)
        for d in self.drones:
            if d.start_depot not in depots or d.end_depot not in depots:
                raise ValueError(f"drone {d.id} references a missing depot")
        if self.customers and not self.drones:
            raise ValueError("customers exist but no drone does")

    # index helpers

    def ids_of(self, kind: str) -> list[int]:
        return [n.id for n in self.nodes if n.kind == kind]

    @property
    def depot_ids(self):
        return self.ids_of("depot")

    @property
    def customer_ids(self):
        return self.ids_of("customer")

    @property
    def n_flyable(self) -> int:
        return len(self.nodes)

    @property
    def n_customers(self) -> int:
        return len(self.customers)

    @property
    def n_drones(self) -> int:
        return len(self.drones)

    @property
    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes], dtype=float)

    def kind(self, node_id: int) -> str:
        return self.nodes[node_id].kind

    @cached_property
    def _customer_by_node(self):
        return {c.node: c for c in self.customers}

    def customer(self, node_id: int) -> Customer:
        return self._customer_by_node[node_id]

    def operation_time(self, node_id: int) -> float:
        kind = self.nodes[node_id].kind
        if kind == "customer":
            return self.customer(node_id).service_time_s
        return {
            "depot": self.op_times.depot_s,
            "charging_station": self.op_times.charging_station_s,
            "waypoint": self.op_times.waypoint_s,
        }[kind]

    def metric_matrix(self) -> MetricMatrix:
        cfg = self.metric_config
        return build_metric_matrix(self.positions, self.comm, cfg.r_segments,
                                   cfg.speed_mps, cfg.battery_range_m)

    def with_thresholds(self, h_max=math.inf, o_max=math.inf) -> "Instance":
        return replace(self, h_max=h_max, o_max=o_max)

    def subset(self, labels) -> "Instance":
        """Restrict to the given flyable nodes, relabelled in canonical order.

        All customers and every depot a drone uses must be kept.
        """
        keep = sorted(set(int(i) for i in labels))
        if not set(self.customer_ids) <= set(keep):
            raise ValueError("a subset must keep every customer")
        mapping = {old: new for new, old in enumerate(keep)}
        for d in self.drones:
            if d.start_depot not in mapping or d.end_depot not in mapping:
                raise ValueError(f"subset drops a depot used by drone {d.id}")
        nodes = tuple(Node(mapping[i], self.nodes[i].kind, self.nodes[i].position) for i in keep)
        customers = tuple(replace(c, node=mapping[c.node]) for c in self.customers)
        drones = tuple(Drone(d.id, mapping[d.start_depot], mapping[d.end_depot]) for d in self.drones)
        return replace(self, nodes=nodes, customers=customers, drones=drones)


# waypoints

def _inside(p, region, tol=WAYPOINT_TOL):
    return -tol <= p[0] <= region[0] + tol and -tol <= p[1] <= region[1] + tol


def _box_crossings(a, b, region, tol=WAYPOINT_TOL):
    """Points where segment ``a``-``b`` meets the region boundary."""
    out = []
    for axis, value in ((0, 0.0), (0, region[0]), (1, 0.0), (1, region[1])):
        da, db = a[axis] - value, b[axis] - value
        if da == db or da * db > 0:
            continue
        t = da / (da - db)
        p = a + t * (b - a)
        p[axis] = value
        other = 1 - axis
        if -tol <= p[other] <= region[other] + tol:
            out.append(p)
    return out


def _voronoi_edges(sites, span):
    """Voronoi edges as finite segments; unbounded ones are cut at distance ``span``."""
    if len(sites) == 2 or np.linalg.matrix_rank(sites[1:] - sites[0], tol=1e-9) < 2:
        # collinear sites: parallel bisectors between neighbours along the line
        direction = sites[-1] - sites[0]
        direction /= np.linalg.norm(direction)
        order = np.argsort(sites @ direction)
        normal = np.array([-direction[1], direction[0]])
        edges = []
        for i, j in zip(order[:-1], order[1:]):
            mid = (sites[i] + sites[j]) / 2
            edges.append((mid - span * normal, mid + span * normal))
        return [], edges

    vor = Voronoi(sites)
    edges = []
    for (p, q), ridge in zip(vor.ridge_points, vor.ridge_vertices):
        if -1 not in ridge:
            edges.append((vor.vertices[ridge[0]], vor.vertices[ridge[1]]))
            continue
        v = vor.vertices[[r for r in ridge if r >= 0][0]]
        tangent = sites[q] - sites[p]
        normal = np.array([-tangent[1], tangent[0]]) / np.linalg.norm(tangent)
        for direction in (normal, -normal):
            probe = v + span * direction
            d = np.hypot(*(sites - probe).T)
            if d[p] <= d.min() + 1e-9 * span:
                edges.append((v, probe))
                break
    return list(vor.vertices), edges


def generate_waypoints(network: CommNetwork, region) -> list[tuple[float, float]]:
    """Voronoi vertices inside ``region`` plus Voronoi-edge crossings of its boundary.

    Returned sorted by (x, y) so labels do not depend on Qhull's ordering.
    """
    region = (float(region[0]), float(region[1]))
    sites = np.unique(network.positions, axis=0)
    if len(sites) < 2:
        return []
    span = 10.0 * (math.hypot(*region) + np.abs(sites).max() + 1.0)
    try:
        vertices, edges = _voronoi_edges(sites, span)
    except QhullError:
        return []

    found = [np.asarray(v, dtype=float) for v in vertices if _inside(v, region)]
    for a, b in edges:
        found.extend(_box_crossings(np.asarray(a, float), np.asarray(b, float), region))

    unique: list[np.ndarray] = []
    for p in found:
        p = np.clip(p, [0.0, 0.0], region)
        if all(np.hypot(*(p - u)) > WAYPOINT_TOL for u in unique):
            unique.append(p)
    unique.sort(key=lambda p: (round(p[0], 6), round(p[1], 6)))
    return [(float(p[0]), float(p[1])) for p in unique]


# generator

@dataclass(frozen=True)
class GeneratorConfig:
    setting: str = "UUL"
    n_customers: int = 5
    seed: int = 0
    hotpoint_count: int | None = None
    perturbation_m: float = 300.0
    region_m: tuple[float, float] = (5000.0, 5000.0)
    horizon_s: float = 28_800.0
    hex_radius_m: float = 1000.0
    depot_spacing_m: float = 2000.0
    cs_spacing_m: float = 1000.0
    cluster_std_m: float = 250.0
    customers_per_drone: int = 25
    tx_power_dbm: float = 46.0
    comm_params: CommParams = field(default_factory=CommParams)
    op_times: OperationTimes = field(default_factory=OperationTimes)
    metric_config: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        code = self.setting
        if (len(code) != 3 or code[0] not in "UP" or code[1] not in "UP"
                or code[2] not in "LT"):
            raise ValueError(f"invalid setting code {code!r}; expected one of {', '.join(valid_settings())}")
        if self.n_customers < 1:
            raise ValueError("n_customers must be >= 1")
        object.__setattr__(self, "region_m", tuple(float(v) for v in self.region_m))

    @property
    def hotpoints(self) -> int:
        if self.hotpoint_count is not None:
            return self.hotpoint_count
        return max(2, self.n_customers // 10)


def valid_settings() -> list[str]:
    return [a + b + c for a in "UP" for b in "UP" for c in "LT"]


def hex_centers(region, radius) -> np.ndarray:
    """Hexagon centres (pointy-top rows) covering ``region`` inflated by one radius."""
    width, height = region
    dx = math.sqrt(3.0) * radius
    dy = 1.5 * radius
    centers = []
    for row in range(math.floor(-radius / dy), math.ceil((height + radius) / dy) + 1):
        y = row * dy
        if not -radius <= y <= height + radius:
            continue
        offset = dx / 2 if row % 2 else 0.0
        for col in range(math.floor((-radius - offset) / dx), math.ceil((width + radius) / dx) + 1):
            x = col * dx + offset
            if -radius <= x <= width + radius:
                centers.append((x, y))
    return np.array(centers, dtype=float)


def generate_comm_network(config: GeneratorConfig, rng=None) -> CommNetwork:
    centers = hex_centers(config.region_m, config.hex_radius_m)
    if config.setting[0] == "P":
        rng = np.random.default_rng(config.seed) if rng is None else rng
        radius = config.perturbation_m * np.sqrt(rng.uniform(size=len(centers)))
        angle = rng.uniform(0.0, 2 * math.pi, size=len(centers))
        centers = centers + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        r = config.hex_radius_m
        centers = np.clip(centers, [-r, -r], [config.region_m[0] + r, config.region_m[1] + r])
    return CommNetwork.from_positions(centers, config.comm_params, config.tx_power_dbm)


def _lattice(extent, spacing):
    return [k * spacing for k in range(int(math.floor(extent / spacing + 1e-9)) + 1)]


def place_facilities(config: GeneratorConfig):
    """Depot and charging-station positions on square lattices anchored at the origin."""
    w, h = config.region_m
    depots = [(x, y) for y in _lattice(h, config.depot_spacing_m) for x in _lattice(w, config.depot_spacing_m)]
    taken = set(depots)
    stations = [(x, y) for y in _lattice(h, config.cs_spacing_m) for x in _lattice(w, config.cs_spacing_m)
                if (x, y) not in taken]
    return depots, stations


def generate_customers(config: GeneratorConfig, rng=None) -> np.ndarray:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    w, h = config.region_m
    n = config.n_customers
    if config.setting[1] == "U":
        return np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n)])
    k = config.hotpoints
    hot = np.column_stack([rng.uniform(0, w, k), rng.uniform(0, h, k)])
    cuts = np.sort(rng.integers(0, n + 1, size=k - 1))
    counts = np.diff(np.concatenate([[0], cuts, [n]]))
    centers = np.repeat(hot, counts, axis=0)
    pts = centers + rng.normal(0.0, config.cluster_std_m, size=(n, 2)) if config.cluster_std_m > 0 else centers
    return np.clip(pts, [0.0, 0.0], [w, h])


def generate_time_windows(config: GeneratorConfig, customers, depots, speed, rng=None):
    """``(start, end)`` per customer, clamped so a direct depot round trip fits."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    depots = np.asarray(depots, dtype=float)
    widths = (2, 8) if config.setting[2] == "L" else (1, 4)
    windows = []
    for i, c in enumerate(np.asarray(customers, dtype=float)):
        times = np.hypot(*(depots - c).T) / speed
        earliest = float(times.min())
        latest = config.horizon_s - float(times.max())
        if earliest > latest:
            raise ValueError(f"customer {i} cannot be reached and returned within the horizon")
        center = rng.uniform(earliest, latest)
        width = 3600.0 * int(rng.integers(widths[0], widths[1] + 1))
        windows.append((max(earliest, center - width / 2), min(latest, center + width / 2)))
    return windows


def drone_count(n_customers: int, per_drone: int = 25) -> int:
    return max(1, math.ceil(n_customers / per_drone))


def assign_drones(config: GeneratorConfig, depot_ids, rng=None) -> list[Drone]:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    depot_ids = list(depot_ids)
    n_u = drone_count(config.n_customers, config.customers_per_drone)

    def draw():
        if n_u >= len(depot_ids):
            picks = np.concatenate([rng.permutation(depot_ids),
                                    rng.choice(depot_ids, n_u - len(depot_ids))])
            return rng.permutation(picks)
        return rng.choice(depot_ids, n_u)

    starts, ends = draw(), draw()
    return [Drone(u, int(s), int(e)) for u, (s, e) in enumerate(zip(starts, ends))]


def assemble_instance(region, horizon_s, comm, depots, customers, windows, stations,
                      drones_by_index, op_times=OperationTimes(), metric_config=MetricConfig(),
                      waypoints=None, name="", **kwargs) -> Instance:
    """Label nodes in canonical order and build the instance.

    ``drones_by_index`` holds ``(start, end)`` as indices into ``depots``.
    """
    if waypoints is None:
        waypoints = generate_waypoints(comm, region)
    nodes = []
    for kind, pts in (("depot", depots), ("customer", customers),
                      ("charging_station", stations), ("waypoint", waypoints)):
        for p in pts:
            nodes.append(Node(len(nodes), kind, (float(p[0]), float(p[1]))))
    first_customer = len(depots)
    custs = [Customer(first_customer + i, float(a), float(b), op_times.customer_s)
             for i, (a, b) in enumerate(windows)]
    drones = [Drone(u, int(s), int(e)) for u, (s, e) in enumerate(drones_by_index)]
    return Instance(tuple(region), float(horizon_s), comm, tuple(nodes), tuple(custs), tuple(drones),
                    op_times, metric_config=metric_config, name=name, **kwargs)


def generate_instance(config: GeneratorConfig) -> Instance:
    """Benchmark instance as a pure function of ``config`` (seed included).

    Random streams are spawned from the seed in a fixed order: network,
    customers, time windows, drones.
    """
    net_rng, cust_rng, tw_rng, drone_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    )
    comm = generate_comm_network(config, net_rng)
    depots, stations = place_facilities(config)
    customers = generate_customers(config, cust_rng)
    windows = generate_time_windows(config, customers, depots, config.metric_config.speed_mps, tw_rng)
    drones = assign_drones(config, range(len(depots)), drone_rng)
    name = f"{config.setting}-n{config.n_customers}-s{config.seed}"
    return assemble_instance(config.region_m, config.horizon_s, comm, depots, customers, windows,
                             stations, [(d.start_depot, d.end_depot) for d in drones],
                             config.op_times, config.metric_config, name=name)


def generate_tiny_instance(seed: int, n_customers: int = 2, n_drones: int = 1,
                           max_nodes: int = 10, setting: str = "UUL") -> Instance:
    """Small instance for exhaustive search: a 2x2 km zone trimmed to ``max_nodes`` labels.

    All four depots and every customer are kept; the remaining labels are
    charging stations and waypoints drawn at random.
    """
    config = GeneratorConfig(setting=setting, n_customers=n_customers, seed=seed,
                             region_m=(2000.0, 2000.0), hex_radius_m=600.0,
                             perturbation_m=150.0, cluster_std_m=150.0, hotpoint_count=1)
    base = generate_instance(config)
    rng = np.random.default_rng([seed, 7919])
    depots = base.depot_ids
    drones = [Drone(u, int(rng.choice(depots)), int(rng.choice(depots))) for u in range(n_drones)]
    base = replace(base, drones=tuple(drones), name=f"tiny-{setting}-n{n_customers}-u{n_drones}-s{seed}")
    extras = [n.id for n in base.nodes if n.kind in ("charging_station", "waypoint")]
    room = max(0, max_nodes - len(depots) - n_customers)
    chosen = rng.choice(extras, size=min(room, len(extras)), replace=False) if room else []
    return base.subset(depots + base.customer_ids + [int(i) for i in chosen])


ILLUSTRATIVE_STATIONS = [(t, t) for t in (100.0, 300.0, 500.0, 700.0, 900.0)] + \
    [(t, 1000.0 - t) for t in (100.0, 300.0, 700.0, 900.0)]


def illustrative_instance(n_drones: int = 1, params: CommParams | None = None,
                          metric_config: MetricConfig | None = None) -> Instance:
    """The 1 km x 1 km two-customer example; time windows span the whole day."""
    params = params or CommParams(se_threshold=2.0)
    comm = CommNetwork.from_positions(ILLUSTRATIVE_STATIONS, params)
    region = (1000.0, 1000.0)
    depots = [(0, 0), (1000, 0), (1000, 1000), (0, 1000)]
    customers = [(500, 150), (500, 900)]
    stations = [(300, 300), (700, 300), (700, 700), (300, 700)]
    horizon = 28_800.0
    windows = [(0.0, horizon)] * len(customers)
    return assemble_instance(region, horizon, comm, depots, customers, windows, stations,
                             [(0, 1)] * n_drones, metric_config=metric_config or MetricConfig(),
                             name="illustrative")


# JSON files

def _num(v):
    return None if v == math.inf else v


def _inf(v):
    return math.inf if v is None else float(v)


def instance_to_dict(inst: Instance) -> dict:
    return {
        "version": FORMAT_VERSION,
        "name": inst.name,
        "region": list(inst.region_m),
        "horizon_s": inst.horizon_s,
        "comm": {
            "params": asdict(inst.comm.params),
            "stations": [{"id": s.id, "x": s.position[0], "y": s.position[1],
                          "tx_power_dbm": s.tx_power_dbm} for s in inst.comm.stations],
        },
        "nodes": [{"id": n.id, "kind": n.kind, "x": n.position[0], "y": n.position[1]}
                  for n in inst.nodes],
        "customers": [asdict(c) for c in inst.customers],
        "drones": [asdict(d) for d in inst.drones],
        "thresholds": {"h_max": _num(inst.h_max), "o_max": _num(inst.o_max)},
        "op_times": asdict(inst.op_times),
        "metric_config": asdict(inst.metric_config),
        "battery_mode": inst.battery_mode,
    }


def instance_to_json(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1, allow_nan=False) + "\n"


class _Fields:
    """Dictionary access that names the missing field on failure."""

    def __init__(self, data, where):
        if not isinstance(data, dict):
            raise InstanceFormatError(f"{where}: expected an object")
        self.data, self.where = data, where

    def __getitem__(self, key):
        if key not in self.data:
            raise InstanceFormatError(f"{self.where}: missing required field {key!r}")
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def sub(self, key):
        return _Fields(self[key], f"{self.where}.{key}")


def instance_from_dict(data: dict) -> Instance:
    root = _Fields(data, "instance")
    if root["version"] != FORMAT_VERSION:
        raise InstanceFormatError(f"unsupported instance version {root['version']!r}")
    try:
        comm = root.sub("comm")
        params = CommParams(**comm["params"])
        stations = []
        for k, s in enumerate(comm["stations"]):
            f = _Fields(s, f"instance.comm.stations[{k}]")
            stations.append(BaseStation(int(f["id"]), (float(f["x"]), float(f["y"])), float(f["tx_power_dbm"])))
        nodes = []
        for k, n in enumerate(root["nodes"]):
            f = _Fields(n, f"instance.nodes[{k}]")
            if f["kind"] not in KINDS:
                raise InstanceFormatError(f"instance.nodes[{k}]: unknown kind {f['kind']!r}")
            nodes.append(Node(int(f["id"]), f["kind"], (float(f["x"]), float(f["y"]))))
        customers = []
        for k, c in enumerate(root["customers"]):
            f = _Fields(c, f"instance.customers[{k}]")
            customers.append(Customer(int(f["node"]), float(f["window_start_s"]),
                                      float(f["window_end_s"]), float(f["service_time_s"])))
        drones = []
        for k, d in enumerate(root["drones"]):
            f = _Fields(d, f"instance.drones[{k}]")
            drones.append(Drone(int(f["id"]), int(f["start_depot"]), int(f["end_depot"])))
        thresholds = root.sub("thresholds")
        mc = root.sub("metric_config")
        metric_config = MetricConfig(int(mc["r_segments"]), float(mc["speed_mps"]), float(mc["battery_range_m"]))
        op = root.get("op_times")
        op_times = OperationTimes(**op) if op is not None else OperationTimes()
        return Instance(
            region_m=tuple(float(v) for v in root["region"]),
            horizon_s=float(root["horizon_s"]),
            comm=CommNetwork(tuple(stations), params),
            nodes=tuple(nodes), customers=tuple(customers), drones=tuple(drones),
            op_times=op_times,
            h_max=_inf(thresholds["h_max"]), o_max=_inf(thresholds["o_max"]),
            metric_config=metric_config,
            battery_mode=root.get("battery_mode", "reset"),
            name=root.get("name", ""),
        )
    except InstanceFormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise InstanceFormatError(f"invalid instance: {exc}") from exc


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(instance_to_json(inst))


def _read_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_instance(path) -> Instance:
    return instance_from_dict(_read_json(path))


def load_generator_config(path) -> GeneratorConfig:
    data = _Fields(_read_json(path), "generator")
    try:
        kwargs = {k: v for k, v in data.data.items()
                  if k in ("setting", "n_customers", "seed", "hotpoint_count", "perturbation_m")}
        data["setting"]
        data["n_customers"]
        return GeneratorConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InstanceFormatError):
            raise
        raise InstanceFormatError(f"invalid generator config: {exc}") from exc

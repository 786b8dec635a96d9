"""Delivery plans: trip evaluation, schedule simulation and the feasibility checker."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .arc_metrics import MetricMatrix
from .instance import Instance

VIOLATION_CLASSES = (
    "customer_visit",   # every customer served exactly once
    "qos",              # per-trip handover / outage thresholds
    "trip_structure",   # depot ends, at most one customer, no interior depots
    "depot_chaining",   # start/end depots of the day and between trips
    "time_window",
    "battery",
    "horizon",
)
THRESHOLD_RTOL = 1e-9


class TripStructureError(ValueError):
    pass


@dataclass(frozen=True)
class Trip:
    nodes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))

    @property
    def start(self) -> int:
        return self.nodes[0]

    @property
    def end(self) -> int:
        return self.nodes[-1]

    @property
    def interior(self) -> tuple[int, ...]:
        return self.nodes[1:-1]

    def arcs(self):
        return list(zip(self.nodes[:-1], self.nodes[1:]))


@dataclass(frozen=True)
class Plan:
    trips_by_drone: tuple[tuple[Trip, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "trips_by_drone", tuple(
            tuple(t if isinstance(t, Trip) else Trip(t) for t in trips)
            for trips in self.trips_by_drone))

    @classmethod
    def empty(cls, n_drones: int) -> "Plan":
        return cls(tuple(() for _ in range(n_drones)))

    @classmethod
    def from_lists(cls, lists) -> "Plan":
        return cls(tuple(tuple(Trip(t) for t in trips) for trips in lists))

    def to_lists(self):
        return [[list(t.nodes) for t in trips] for trips in self.trips_by_drone]

    def all_trips(self):
        for u, trips in enumerate(self.trips_by_drone):
            for k, trip in enumerate(trips):
                yield u, k, trip

    @property
    def n_trips(self) -> int:
        return sum(len(t) for t in self.trips_by_drone)


@dataclass(frozen=True)
class Visit:
    node: int
    arrival_s: float
    service_start_s: float
    departure_s: float
    battery_on_arrival: float


@dataclass(frozen=True)
class TripSchedule:
    drone: int
    index: int
    leave_s: float
    visits: tuple[Visit, ...]

    @property
    def end_s(self) -> float:
        return self.visits[-1].arrival_s


@dataclass(frozen=True)
class Schedule:
    trips: tuple[TripSchedule, ...]

    def for_drone(self, u):
        return [t for t in self.trips if t.drone == u]


@dataclass(frozen=True)
class Violation:
    constraint_class: str
    magnitude: float
    location: str
    detail: str = ""


@dataclass(frozen=True)
class TripMetrics:
    drone: int
    index: int
    nodes: tuple[int, ...]
    handovers: int
    outage_s: float
    distance_m: float


@dataclass
class EvalResult:
    total_distance_m: float
    trips: list[TripMetrics] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def max_handovers(self) -> int:
        return max((t.handovers for t in self.trips), default=0)

    @property
    def max_outage_s(self) -> float:
        return max((t.outage_s for t in self.trips), default=0.0)

    def classes(self) -> set[str]:
        return {v.constraint_class for v in self.violations}

    def magnitude(self, cls: str) -> float:
        return sum(v.magnitude for v in self.violations if v.constraint_class == cls)

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "objective_m": self.total_distance_m,
            "max_handovers": self.max_handovers,
            "max_outage_s": self.max_outage_s,
            "trips": [{"drone": t.drone, "trip": t.index, "nodes": list(t.nodes),
                       "handovers": t.handovers, "outage_s": t.outage_s,
                       "distance_m": t.distance_m} for t in self.trips],
            "violations": [{"class": v.constraint_class, "detail": v.detail,
                            "magnitude": v.magnitude, "location": v.location}
                           for v in self.violations],
        }


def trip_structure_problems(trip: Trip, instance: Instance) -> list[tuple[str, float]]:
    """``(description, magnitude)`` for each broken trip invariant."""
    n = instance.n_flyable
    if len(trip.nodes) < 2:
        return [("trip needs at least two nodes", 1.0)]
    if any(not 0 <= v < n for v in trip.nodes):
        return [("unknown node id", 1.0)]
    problems = []
    if instance.kind(trip.start) != "depot":
        problems.append(("trip does not start at a depot", 1.0))
    if instance.kind(trip.end) != "depot":
        problems.append(("trip does not end at a depot", 1.0))
    inner_depots = sum(instance.kind(v) == "depot" for v in trip.interior)
    if inner_depots:
        problems.append(("depot inside a trip", float(inner_depots)))
    customers = sum(instance.kind(v) == "customer" for v in trip.nodes)
    if customers > 1:
        problems.append(("more than one customer on a trip", float(customers - 1)))
    if any(a == b for a, b in trip.arcs()):
        problems.append(("arc from a node to itself", 1.0))
    return problems


def _trip_sums(trip: Trip, m: MetricMatrix):
    h = o = d = 0.0
    for i, j in trip.arcs():
        h += m.handovers[i, j]
        o += m.outage_duration_s[i, j]
        d += m.distance_m[i, j]
    return int(h), float(o), float(d)


def evaluate_trip(trip: Trip, metric_matrix: MetricMatrix, instance: Instance | None = None):
    """``(H, O, M)``: summed handovers, expected outage seconds and distance."""
    if instance is not None:
        problems = trip_structure_problems(trip, instance)
        if problems:
            raise TripStructureError("; ".join(p for p, _ in problems))
    elif len(trip.nodes) < 2:
        raise TripStructureError("trip needs at least two nodes")
    return _trip_sums(trip, metric_matrix)


def objective(plan: Plan, metric_matrix: MetricMatrix) -> float:
    return float(sum(_trip_sums(t, metric_matrix)[2] for _, _, t in plan.all_trips()))


def simulate_schedule(plan: Plan, instance: Instance, metric_matrix: MetricMatrix) -> Schedule:
    """Earliest-start timing and battery levels; infeasibilities are left for the checker.

    Waiting before a customer's window opens is free. Battery resets to full
    when leaving a charging station, and when leaving a depot unless the
    instance uses ``battery_mode="carry"``.
    """
    m = metric_matrix
    carry = instance.battery_mode == "carry"
    out = []
    for u, trips in enumerate(plan.trips_by_drone):
        clock = 0.0
        battery = 1.0
        for k, trip in enumerate(trips):
            if any(not 0 <= v < instance.n_flyable for v in trip.nodes) or len(trip.nodes) < 2:
                continue
            leave = clock
            visits = []
            first = trip.nodes[0]
            level = battery if carry else 1.0
            repositioning = len(trip.nodes) == 2 and all(
                instance.kind(v) == "depot" for v in trip.nodes)
            depart = leave if repositioning else leave + instance.operation_time(first)
            visits.append(Visit(first, leave, leave, depart, level))
            prev = first
            for pos, node in enumerate(trip.nodes[1:], start=1):
                arrival = depart + m.travel_time_s[prev, node]
                kind_prev = instance.kind(prev)
                if kind_prev == "charging_station" or (kind_prev == "depot" and not carry):
                    level = 1.0
                level = level - m.battery_cost[prev, node]
                if pos == len(trip.nodes) - 1:
                    visits.append(Visit(node, arrival, arrival, arrival, level))
                    break
                kind = instance.kind(node)
                start = arrival
                if kind == "customer":
                    start = max(arrival, instance.customer(node).window_start_s)
                depart = start + instance.operation_time(node)
                visits.append(Visit(node, arrival, start, depart, level))
                prev = node
            ts = TripSchedule(u, k, leave, tuple(visits))
            out.append(ts)
            clock = ts.end_s
            battery = level
    return Schedule(tuple(out))


def _over(value, limit):
    return value > limit + THRESHOLD_RTOL * max(1.0, abs(limit))


def check_feasibility(plan: Plan, instance: Instance, metric_matrix: MetricMatrix) -> EvalResult:
    """Evaluate ``plan`` and list every violated constraint with its magnitude."""
    m = metric_matrix
    result = EvalResult(0.0)
    add = result.violations.append

    if len(plan.trips_by_drone) != instance.n_drones:
        add(Violation("trip_structure", float(abs(len(plan.trips_by_drone) - instance.n_drones)),
                      "plan", f"plan has {len(plan.trips_by_drone)} drones, instance has {instance.n_drones}"))

    visits = {c: 0 for c in instance.customer_ids}
    for u, k, trip in plan.all_trips():
        loc = f"drone {u} trip {k}"
        problems = trip_structure_problems(trip, instance)
        for text, mag in problems:
            add(Violation("trip_structure", mag, loc, text))
        if any(not 0 <= v < instance.n_flyable for v in trip.nodes):
            continue
        h, o, d = _trip_sums(trip, m)
        result.trips.append(TripMetrics(u, k, trip.nodes, h, o, d))
        result.total_distance_m += d
        if _over(h, instance.h_max):
            add(Violation("qos", float(h - instance.h_max), loc, "handover"))
        if _over(o, instance.o_max):
            add(Violation("qos", float(o - instance.o_max), loc, "outage"))
        for v in trip.nodes:
            if v in visits:
                visits[v] += 1

    for c, count in visits.items():
        if count == 0:
            add(Violation("customer_visit", 1.0, f"customer {c}", "unserved"))
        elif count > 1:
            add(Violation("customer_visit", float(count - 1), f"customer {c}", "visited more than once"))

    for u, trips in enumerate(plan.trips_by_drone[:instance.n_drones]):
        drone = instance.drones[u]
        loc = f"drone {u}"
        if not trips:
            if drone.start_depot != drone.end_depot:
                add(Violation("depot_chaining", 1.0, loc, "no trips but start and end depots differ"))
            continue
        if trips[0].nodes[0] != drone.start_depot:
            add(Violation("depot_chaining", 1.0, loc, "first trip does not leave the start depot"))
        if trips[-1].nodes[-1] != drone.end_depot:
            add(Violation("depot_chaining", 1.0, loc, "last trip does not reach the end depot"))
        for k in range(len(trips) - 1):
            if trips[k].nodes[-1] != trips[k + 1].nodes[0]:
                add(Violation("depot_chaining", 1.0, f"{loc} trip {k + 1}",
                              "trip does not start where the previous one ended"))

    schedule = simulate_schedule(plan, instance, m)
    last_arrival = {}
    for ts in schedule.trips:
        loc = f"drone {ts.drone} trip {ts.index}"
        for visit in ts.visits[1:]:
            if visit.battery_on_arrival < 0:
                add(Violation("battery", -visit.battery_on_arrival, f"{loc} node {visit.node}", "depleted"))
        for visit in ts.visits[1:-1]:
            if instance.kind(visit.node) == "customer":
                late = visit.service_start_s - instance.customer(visit.node).window_end_s
                if late > 0:
                    add(Violation("time_window", late, f"{loc} customer {visit.node}", "late"))
        last_arrival[ts.drone] = ts.end_s
    for u, t in sorted(last_arrival.items()):
        if t > instance.horizon_s:
            add(Violation("horizon", t - instance.horizon_s, f"drone {u}", "returns after the horizon"))
    return result


# files

def plan_to_json(plan: Plan) -> str:
    data = {"version": 1,
            "drones": [{"drone": u, "trips": trips} for u, trips in enumerate(plan.to_lists())]}
    return json.dumps(data, indent=1) + "\n"


def plan_from_dict(data) -> Plan:
    try:
        drones = sorted(data["drones"], key=lambda d: d["drone"])
        return Plan.from_lists([d["trips"] for d in drones])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed plan: missing or invalid field {exc}") from exc


def save_plan(plan: Plan, path) -> None:
    Path(path).write_text(plan_to_json(plan))


def load_plan(path) -> Plan:
    return plan_from_dict(json.loads(Path(path).read_text()))

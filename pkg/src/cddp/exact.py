"""Ground truth for small instances: exhaustive search and MIP export.

``enumerate_optimal`` searches every plan within :class:`EnumerationBounds`.
Trips are enumerated once per (start depot, customer, end depot) and only
the Pareto-optimal ones are kept; a trip that is no longer, no slower, no
worse on handovers/outage and no hungrier on battery than another can always
replace it, so the search remains exact under the bounds.
"""

from __future__ import annotations

import itertools
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arc_metrics import MetricMatrix
from .instance import Instance
from .solution import (THRESHOLD_RTOL, EvalResult, Plan, Trip, check_feasibility,
                       simulate_schedule)

OBJECTIVE_KINDS = ("total_distance", "minmax_handover", "minmax_outage")


class SearchTooLarge(RuntimeError):
    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class ModelTooLarge(RuntimeError):
    pass


class MappingError(ValueError):
    """External solution does not describe a plan of this instance."""


@dataclass(frozen=True)
class EnumerationBounds:
    max_interior_nodes_per_trip: int = 3
    max_trips_per_drone: int | None = None   # None: n_customers + 1
    node_whitelist: tuple[int, ...] | None = None
    budget: int = 5_000_000

    def __post_init__(self):
        if self.max_interior_nodes_per_trip < 1:
            raise ValueError("max_interior_nodes_per_trip must be >= 1")

    def trips_for(self, instance: Instance) -> int:
        if self.max_trips_per_drone is not None:
            return self.max_trips_per_drone
        return instance.n_customers + 1


@dataclass
class ExactResult:
    plan: Plan | None
    value: float
    evaluation: EvalResult | None
    objective_kind: str
    nodes_expanded: int = 0
    trip_options: int = 0

    @property
    def feasible(self) -> bool:
        return self.plan is not None


@dataclass
class _Option:
    nodes: tuple[int, ...]
    dist: float
    h: int
    o: float
    pre: float          # leave -> arrival at the customer (or whole trip)
    post: float         # customer departure -> arrival at end depot
    need: float         # battery needed on leaving (carry mode)
    post_cost: float    # consumption after the last swap
    swapped: bool

    def end_battery(self, start):
        return 1.0 - self.post_cost if self.swapped else start - self.post_cost


def _within(value, limit):
    return value <= limit + THRESHOLD_RTOL * max(1.0, abs(limit))


def _estimate(n_inner, n_depots, max_inner):
    seqs = sum(math.perm(n_inner, k) for k in range(min(max_inner, n_inner) + 1))
    return seqs * n_depots * n_depots


def _build_option(nodes, instance, m, customer, carry):
    d = h = o = 0.0
    t = 0.0 if len(nodes) == 2 else instance.operation_time(nodes[0])
    pre = None
    cost = 0.0
    need = None
    level_cost = 0.0  # since last reset
    swapped = False
    ok = True
    for idx, (i, j) in enumerate(zip(nodes[:-1], nodes[1:])):
        kind_i = instance.kind(i)
        if kind_i == "charging_station" or (kind_i == "depot" and not carry):
            if kind_i == "charging_station":
                if need is None:
                    need = level_cost
                swapped = True
            level_cost = 0.0
        d += m.distance_m[i, j]
        h += m.handovers[i, j]
        o += m.outage_duration_s[i, j]
        t += m.travel_time_s[i, j]
        level_cost += m.battery_cost[i, j]
        if level_cost > 1.0 and (swapped or not carry):
            ok = False
        if j == customer:
            pre = t
            t = 0.0
        elif idx + 1 < len(nodes) - 1:
            t += instance.operation_time(j)
        cost = level_cost
    if not ok:
        return None
    if customer is not None:
        post = t
    else:
        pre, post = t, 0.0
    if need is None:
        need = cost
    return _Option(tuple(nodes), float(d), int(h), float(o), pre, post, need, cost, swapped)


def _dominates(a: _Option, b: _Option, carry: bool) -> bool:
    if not (a.dist <= b.dist and a.h <= b.h and a.o <= b.o and a.pre <= b.pre and a.post <= b.post):
        return False
    if not carry:
        return True
    if a.need > b.need:
        return False
    return all(a.end_battery(x) >= b.end_battery(x) for x in (max(b.need, 0.0), 1.0))


def _pareto(options, carry):
    options.sort(key=lambda op: (op.dist, op.h, op.o, op.pre, op.post, op.nodes))
    kept: list[_Option] = []
    for op in options:
        if not any(_dominates(k, op, carry) for k in kept):
            kept.append(op)
    return kept


def _trip_options(instance, m, bounds, allowed):
    """Pareto trip options keyed by ``(start depot, customer or None, end depot)``."""
    carry = instance.battery_mode == "carry"
    depots = [v for v in allowed if instance.kind(v) == "depot"]
    customers = [v for v in allowed if instance.kind(v) == "customer"]
    others = [v for v in allowed if instance.kind(v) in ("charging_station", "waypoint")]
    max_inner = bounds.max_interior_nodes_per_trip
    estimate = _estimate(len(customers) + len(others), len(depots), max_inner)
    if estimate > bounds.budget:
        raise SearchTooLarge(f"search too large: about {estimate} candidate trips "
                             f"exceed the budget of {bounds.budget}", estimate)

    interiors = {None: [()]}
    for c in [None] + customers:
        seqs = [] if c is not None else [()]
        for k in range(1, max_inner + 1):
            for combo in itertools.permutations(others, k - (c is not None)):
                if c is None:
                    seqs.append(combo)
                else:
                    for pos in range(k):
                        seqs.append(combo[:pos] + (c,) + combo[pos:])
        interiors[c] = seqs

    table = {}
    count = 0
    for s in depots:
        for c in [None] + customers:
            for e in depots:
                group = []
                for inner in interiors[c]:
                    # a customer-less loop back to the same depot only helps
                    # when it recharges a battery that depots do not reset
                    if s == e and c is None and (not inner or not carry):
                        continue
                    nodes = (s, *inner, e)
                    count += 1
                    op = _build_option(nodes, instance, m, c, carry)
                    if op is None or not _within(op.h, instance.h_max) or not _within(op.o, instance.o_max):
                        continue
                    group.append(op)
                if group:
                    table[(s, c, e)] = _pareto(group, carry)
    return table, count


def enumerate_optimal(instance: Instance, bounds: EnumerationBounds = EnumerationBounds(),
                      objective_kind: str = "total_distance",
                      metric_matrix: MetricMatrix | None = None) -> ExactResult:
    """Provably optimal plan within ``bounds``, or an infeasible verdict.

    Min-max objectives break ties by total distance. Raises
    :class:`SearchTooLarge` when the candidate-trip estimate or the number of
    expanded search nodes exceeds ``bounds.budget``.
    """
    if objective_kind not in OBJECTIVE_KINDS:
        raise ValueError(f"unknown objective {objective_kind!r}")
    m = metric_matrix if metric_matrix is not None else instance.metric_matrix()
    allowed = list(range(instance.n_flyable)) if bounds.node_whitelist is None \
        else sorted(set(bounds.node_whitelist))
    for c in instance.customer_ids:
        if c not in allowed:
            raise ValueError("the node whitelist must contain every customer")
    for d in instance.drones:
        if d.start_depot not in allowed or d.end_depot not in allowed:
            raise ValueError("the node whitelist must contain every drone depot")

    table, n_candidates = _trip_options(instance, m, bounds, allowed)
    carry = instance.battery_mode == "carry"
    depots = [v for v in allowed if instance.kind(v) == "depot"]
    customers = instance.customer_ids
    cust_bit = {c: 1 << i for i, c in enumerate(customers)}
    all_served = (1 << len(customers)) - 1
    windows = {c: (instance.customer(c).window_start_s, instance.customer(c).window_end_s,
                   instance.customer(c).service_time_s) for c in customers}
    max_trips = bounds.trips_for(instance)

    def metric(op):
        if objective_kind == "minmax_handover":
            return op.h
        if objective_kind == "minmax_outage":
            return op.o
        return 0.0

    # cheapest way to serve each customer, for the lower bound
    cheapest = {c: min((op.dist for (s, cc, e), ops in table.items() if cc == c for op in ops),
                       default=math.inf) for c in customers}
    least_metric = {c: min((metric(op) for (s, cc, e), ops in table.items() if cc == c for op in ops),
                           default=math.inf) for c in customers}

    order_key = (lambda op: (metric(op), op.dist)) if objective_kind != "total_distance" \
        else (lambda op: op.dist)
    moves = {}
    for s in depots:
        lst = []
        for (s2, c, e), ops in table.items():
            if s2 == s:
                lst.extend((c, e, op) for op in ops)
        lst.sort(key=lambda t: (order_key(t[2]), t[0] is not None, t[1], t[2].nodes))
        moves[s] = lst

    best = {"key": (math.inf, math.inf), "plan": None}
    expanded = 0

    def bound_key(served, acc_metric, acc_dist):
        rest = [c for c in customers if not served & cust_bit[c]]
        lb_dist = acc_dist + sum(cheapest[c] for c in rest)
        if objective_kind == "total_distance":
            return (lb_dist, lb_dist)
        lb_m = max([acc_metric] + [least_metric[c] for c in rest])
        return (lb_m, lb_dist)

    def pruned(key):
        inc = best["key"]
        return key[0] > inc[0] + 1e-9 or (abs(key[0] - inc[0]) <= 1e-9 and key[1] >= inc[1] - 1e-9)

    def search(u, here, clock, battery, served, trips, done, acc_metric, acc_dist):
        nonlocal expanded
        expanded += 1
        if expanded > bounds.budget:
            raise SearchTooLarge(f"search too large: expanded more than {bounds.budget} states",
                                 expanded)
        if pruned(bound_key(served, acc_metric, acc_dist)):
            return
        drone = instance.drones[u]
        if here == drone.end_depot and (trips or drone.start_depot == drone.end_depot):
            finished = done + [tuple(trips)]
            if u + 1 == instance.n_drones:
                if served == all_served:
                    value = acc_dist if objective_kind == "total_distance" else acc_metric
                    key = (value, acc_dist)
                    if key < best["key"]:
                        best["key"] = key
                        best["plan"] = finished
            else:
                nxt = instance.drones[u + 1]
                search(u + 1, nxt.start_depot, 0.0, 1.0, served, [], finished, acc_metric, acc_dist)
        if len(trips) >= max_trips:
            return
        for c, e, op in moves.get(here, ()):
            if c is not None and served & cust_bit[c]:
                continue
            if carry and op.need > battery + 1e-12:
                continue
            if c is None:
                end = clock + op.pre
            else:
                a, b, w = windows[c]
                service = max(clock + op.pre, a)
                if service > b:
                    continue
                end = service + w + op.post
            if end > instance.horizon_s:
                continue
            search(u, e, end, op.end_battery(battery) if carry else 1.0,
                   served | (cust_bit[c] if c is not None else 0), trips + [Trip(op.nodes)], done,
                   max(acc_metric, metric(op)), acc_dist + op.dist)

    if instance.n_drones == 0:
        plan = Plan(())
        return ExactResult(plan, 0.0, check_feasibility(plan, instance, m), objective_kind, 0,
                           n_candidates)
    first = instance.drones[0]
    search(0, first.start_depot, 0.0, 1.0, 0, [], [], 0.0, 0.0)

    if best["plan"] is None:
        return ExactResult(None, math.inf, None, objective_kind, expanded, n_candidates)
    plan = Plan(tuple(best["plan"]))
    evaluation = check_feasibility(plan, instance, m)
    if not evaluation.feasible:
        raise RuntimeError(f"search returned a plan the checker rejects: {evaluation.violations}")
    return ExactResult(plan, best["key"][0], evaluation, objective_kind, expanded, n_candidates)


# MIP export

def _fmt(v: float) -> str:
    v = float(v)
    if v == 0:
        return "0"
    s = format(v, ".12g")
    if "e" in s:
        s = format(v, ".15f").rstrip("0").rstrip(".") if abs(v) < 1 else format(v, ".0f")
    return s


@dataclass(frozen=True)
class MipExport:
    """Naming and constants of the exported model.

    Columns: ``x_<i>_<j>_<u>_<k>``, ``p_<u>_<k>``, ``y_<i>_<u>_<k>``,
    ``sL_<i>_<u>_<k>``, ``sA_<i>_<u>_<k>`` (depots) and ``sV_<i>_<u>_<k>``
    (other nodes). Rows are prefixed by family, see ``ROW_FAMILIES``.
    """

    big_m_s: float | None = None
    horizon_bounds: bool = True
    max_columns: int = 500_000
    name: str = "CDDP"


ROW_FAMILIES = {
    "hmax": "handover threshold per trip",
    "omax": "outage threshold per trip",
    "visit": "each customer entered exactly once",
    "flow": "flow balance at non-depot nodes",
    "start": "first trip leaves the start depot",
    "end": "last operated trip reaches the end depot",
    "endlast": "final trip index reaches the end depot",
    "arc": "arcs only on operated trips",
    "seq": "operated trips are contiguous",
    "dout": "at most one depot departure per trip",
    "din": "at most one depot arrival per trip",
    "cust": "at most one customer per trip",
    "chain": "next trip leaves where the previous ended",
    "batcs": "battery after leaving a swap node (lo/up)",
    "bat": "battery after leaving other nodes (lo/up)",
    "tw": "time windows (lo/up)",
    "tstart": "trip starts after the previous arrival",
    "tfirst": "first visit after leaving a depot",
    "tmid": "visit after visit",
    "tlast": "depot arrival after a visit",
    "tdd": "depot arrival after a depot-to-depot flight",
    "mintrip": "drones whose start and end depots differ fly at least once",
}


@dataclass
class MipModel:
    name: str
    columns: dict = field(default_factory=dict)     # name -> (kind, lo, hi)
    objective: dict = field(default_factory=dict)   # name -> coef
    rows: list = field(default_factory=list)        # (name, sense, {col: coef}, rhs)

    def col(self, name, kind="C", lo=0.0, hi=math.inf):
        self.columns[name] = (kind, lo, hi)
        return name

    def row(self, name, sense, coefs, rhs):
        merged = defaultdict(float)
        for c, v in coefs:
            merged[c] += v
        self.rows.append((name, sense, dict(merged), float(rhs)))

    def to_mps(self) -> str:
        by_col = defaultdict(list)
        for c, v in self.objective.items():
            if v != 0:
                by_col[c].append(("OBJ", v))
        for name, _, coefs, _ in self.rows:
            for c, v in coefs.items():
                if v != 0:
                    by_col[c].append((name, v))
        lines = [f"NAME {self.name}", "ROWS", " N OBJ"]
        lines += [f" {sense} {name}" for name, sense, _, _ in self.rows]
        lines.append("COLUMNS")
        in_int = False
        marker = 0
        for c, (kind, _, _) in self.columns.items():
            if (kind == "B") != in_int:
                tag = "INTORG" if not in_int else "INTEND"
                lines.append(f" MARKER{marker} 'MARKER' '{tag}'")
                marker += 1
                in_int = not in_int
            entries = by_col.get(c) or [("OBJ", 0.0)]
            lines += [f" {c} {r} {_fmt(v)}" for r, v in entries]
        if in_int:
            lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")
        lines.append("RHS")
        lines += [f" RHS {name} {_fmt(rhs)}" for name, _, _, rhs in self.rows if rhs != 0]
        lines.append("BOUNDS")
        for c, (kind, lo, hi) in self.columns.items():
            if kind == "B":
                lines.append(f" BV BND {c}")
                continue
            if lo != 0:
                lines.append(f" LO BND {c} {_fmt(lo)}")
            if hi != math.inf:
                lines.append(f" UP BND {c} {_fmt(hi)}")
        lines.append("ENDATA")
        return "\n".join(lines) + "\n"


def big_m(instance: Instance, m: MetricMatrix) -> float:
    w = max(instance.operation_time(i) for i in range(instance.n_flyable))
    return instance.horizon_s + w + float(m.travel_time_s.max())


def build_mip(instance: Instance, export_cfg: MipExport = MipExport(),
              metric_matrix: MetricMatrix | None = None) -> MipModel:
    m = metric_matrix if metric_matrix is not None else instance.metric_matrix()
    F = list(range(instance.n_flyable))
    D = instance.depot_ids
    C = instance.customer_ids
    CS = instance.ids_of("charging_station")
    nonD = [i for i in F if i not in set(D)]
    U = range(instance.n_drones)
    K = list(range(instance.n_customers))
    A = [(i, j) for i in F for j in F if i != j]
    n_cols = len(A) * len(U) * len(K) + len(U) * len(K) * (2 + 2 * len(F))
    if n_cols > export_cfg.max_columns:
        raise ModelTooLarge(f"model needs about {n_cols} columns, guard is {export_cfg.max_columns}")

    M = export_cfg.big_m_s if export_cfg.big_m_s is not None else big_m(instance, m)
    M_bat = 1.0 + max(1.0, float(m.battery_cost.max()))
    hi_t = instance.horizon_s if export_cfg.horizon_bounds else math.inf
    swap_nodes = set(CS) | (set(D) if instance.battery_mode == "reset" else set())
    model = MipModel(export_cfg.name)

    x = lambda i, j, u, k: f"x_{i}_{j}_{u}_{k}"
    p = lambda u, k: f"p_{u}_{k}"
    y = lambda i, u, k: f"y_{i}_{u}_{k}"
    sL = lambda i, u, k: f"sL_{i}_{u}_{k}"
    sA = lambda i, u, k: f"sA_{i}_{u}_{k}"
    sV = lambda i, u, k: f"sV_{i}_{u}_{k}"

    for u in U:
        for k in K:
            for i, j in A:
                model.col(x(i, j, u, k), "B", 0.0, 1.0)
                model.objective[x(i, j, u, k)] = float(m.distance_m[i, j])
    for u in U:
        for k in K:
            model.col(p(u, k), "B", 0.0, 1.0)
    for u in U:
        for k in K:
            for i in F:
                model.col(y(i, u, k), "C", 0.0, 1.0)
            for i in D:
                model.col(sL(i, u, k), "C", 0.0, hi_t)
                model.col(sA(i, u, k), "C", 0.0, hi_t)
            for i in nonD:
                model.col(sV(i, u, k), "C", 0.0, hi_t)

    out_arcs = {i: [(i, j) for j in F if j != i] for i in F}
    in_arcs = {i: [(j, i) for j in F if j != i] for i in F}

    for u in U:
        for k in K:
            if instance.h_max != math.inf:
                model.row(f"hmax_{u}_{k}", "L",
                          [(x(i, j, u, k), float(m.handovers[i, j])) for i, j in A], instance.h_max)
            if instance.o_max != math.inf:
                model.row(f"omax_{u}_{k}", "L",
                          [(x(i, j, u, k), float(m.outage_duration_s[i, j])) for i, j in A], instance.o_max)
    for j in C:
        model.row(f"visit_{j}", "E", [(x(i, j, u, k), 1.0) for u in U for k in K for i, _ in in_arcs[j]], 1.0)
    for u in U:
        for k in K:
            for i in nonD:
                model.row(f"flow_{i}_{u}_{k}", "E",
                          [(x(a, b, u, k), 1.0) for a, b in out_arcs[i]]
                          + [(x(a, b, u, k), -1.0) for a, b in in_arcs[i]], 0.0)
    last = len(K) - 1
    for u in U:
        ds, de = instance.drones[u].start_depot, instance.drones[u].end_depot
        if not K:
            continue
        model.row(f"start_{u}", "L", [(p(u, 0), 1.0)] + [(x(a, b, u, 0), -1.0) for a, b in out_arcs[ds]], 0.0)
        for k in K[:-1]:
            model.row(f"end_{u}_{k}", "L", [(p(u, k), 1.0), (p(u, k + 1), -1.0)]
                      + [(x(a, b, u, k), -1.0) for a, b in in_arcs[de]], 0.0)
        model.row(f"endlast_{u}", "L", [(p(u, last), 1.0)]
                  + [(x(a, b, u, last), -1.0) for a, b in in_arcs[de]], 0.0)
        if ds != de:
            model.row(f"mintrip_{u}", "G", [(p(u, 0), 1.0)], 1.0)
    for u in U:
        for k in K:
            for i, j in A:
                model.row(f"arc_{i}_{j}_{u}_{k}", "L", [(x(i, j, u, k), 1.0), (p(u, k), -1.0)], 0.0)
    for u in U:
        for k in K[:-1]:
            model.row(f"seq_{u}_{k}", "L", [(p(u, k + 1), 1.0), (p(u, k), -1.0)], 0.0)
    for u in U:
        for k in K:
            model.row(f"dout_{u}_{k}", "L", [(x(a, b, u, k), 1.0) for i in D for a, b in out_arcs[i]], 1.0)
            model.row(f"din_{u}_{k}", "L", [(x(a, b, u, k), 1.0) for i in D for a, b in in_arcs[i]], 1.0)
            model.row(f"cust_{u}_{k}", "L", [(x(a, b, u, k), 1.0) for i in C for a, b in in_arcs[i]], 1.0)
    for u in U:
        for k in K[:-1]:
            for i in D:
                model.row(f"chain_{i}_{u}_{k}", "L",
                          [(x(a, b, u, k + 1), 1.0) for a, b in out_arcs[i]]
                          + [(x(a, b, u, k), -1.0) for a, b in in_arcs[i]], 0.0)
    for u in U:
        for k in K:
            for i, j in A:
                c = float(m.battery_cost[i, j])
                xv = x(i, j, u, k)
                if i in swap_nodes:
                    # y_j = 1 - c when the arc is flown
                    model.row(f"batcs_lo_{i}_{j}_{u}_{k}", "G", [(y(j, u, k), 1.0), (xv, -M_bat)], 1.0 - c - M_bat)
                    model.row(f"batcs_up_{i}_{j}_{u}_{k}", "L", [(y(j, u, k), 1.0), (xv, M_bat)], 1.0 - c + M_bat)
                else:
                    # y_j = y_i - c when the arc is flown
                    model.row(f"bat_lo_{i}_{j}_{u}_{k}", "G",
                              [(y(j, u, k), 1.0), (y(i, u, k), -1.0), (xv, -M_bat)], -c - M_bat)
                    model.row(f"bat_up_{i}_{j}_{u}_{k}", "L",
                              [(y(j, u, k), 1.0), (y(i, u, k), -1.0), (xv, M_bat)], -c + M_bat)
    for u in U:
        for k in K:
            for i in C:
                cust = instance.customer(i)
                into = [(x(a, b, u, k), M) for a, b in in_arcs[i]]
                model.row(f"tw_lo_{i}_{u}_{k}", "G", [(sV(i, u, k), 1.0)] + [(c, -v) for c, v in into],
                          cust.window_start_s - M)
                model.row(f"tw_up_{i}_{u}_{k}", "L", [(sV(i, u, k), 1.0)] + into, cust.window_end_s + M)
    for u in U:
        for k in K[:-1]:
            for i in D:
                model.row(f"tstart_{i}_{u}_{k}", "L",
                          [(sA(i, u, k), 1.0), (sL(i, u, k + 1), -1.0), (p(u, k + 1), M)], M)
    for u in U:
        for k in K:
            for i, j in A:
                t = float(m.travel_time_s[i, j])
                xv = x(i, j, u, k)
                wi = instance.operation_time(i)
                if i in D and j not in D:
                    model.row(f"tfirst_{i}_{j}_{u}_{k}", "L",
                              [(sL(i, u, k), 1.0), (sV(j, u, k), -1.0), (xv, M)], M - wi - t)
                elif i not in D and j not in D:
                    model.row(f"tmid_{i}_{j}_{u}_{k}", "L",
                              [(sV(i, u, k), 1.0), (sV(j, u, k), -1.0), (xv, M)], M - wi - t)
                elif i not in D and j in D:
                    model.row(f"tlast_{i}_{j}_{u}_{k}", "L",
                              [(sV(i, u, k), 1.0), (sA(j, u, k), -1.0), (xv, M)], M - wi - t)
                else:
                    model.row(f"tdd_{i}_{j}_{u}_{k}", "L",
                              [(sL(i, u, k), 1.0), (sA(j, u, k), -1.0), (xv, M)], M - t)
    return model


def export_mps(instance: Instance, export_cfg: MipExport = MipExport(),
               metric_matrix: MetricMatrix | None = None) -> str:
    return build_mip(instance, export_cfg, metric_matrix).to_mps()


def plan_to_assignment(plan: Plan, instance: Instance, metric_matrix: MetricMatrix) -> dict[str, float]:
    """Nonzero MIP variable values implied by a plan (unlisted columns are 0).

    Each trip may visit a node at most once; the MIP has one time and one
    battery variable per node and trip.
    """
    vals: dict[str, float] = {}
    longest = max((len(t) for t in plan.trips_by_drone), default=0)
    if longest > instance.n_customers:
        raise MappingError(f"plan uses {longest} trips on one drone, the model has "
                           f"{instance.n_customers} trip slots")
    schedule = simulate_schedule(plan, instance, metric_matrix)
    depots = set(instance.depot_ids)
    for ts in schedule.trips:
        u, k = ts.drone, ts.index
        vals[f"p_{u}_{k}"] = 1.0
        nodes = [v.node for v in ts.visits]
        for i, j in zip(nodes[:-1], nodes[1:]):
            vals[f"x_{i}_{j}_{u}_{k}"] = 1.0
        first, last = ts.visits[0], ts.visits[-1]
        vals[f"sL_{first.node}_{u}_{k}"] = first.service_start_s
        vals[f"y_{first.node}_{u}_{k}"] = first.battery_on_arrival
        for v in ts.visits[1:-1]:
            prefix = "sA" if v.node in depots else "sV"
            vals[f"{prefix}_{v.node}_{u}_{k}"] = v.service_start_s
            vals[f"y_{v.node}_{u}_{k}"] = v.battery_on_arrival
        vals[f"sA_{last.node}_{u}_{k}"] = last.arrival_s
        vals[f"y_{last.node}_{u}_{k}"] = last.battery_on_arrival
        if k + 1 < instance.n_customers:
            # depots the next trip does not leave from still carry its start time
            vals.setdefault(f"sL_{last.node}_{u}_{k + 1}", last.arrival_s)
    return {k: v for k, v in vals.items() if v != 0.0}


def write_solution_file(values: dict[str, float], path) -> None:
    Path(path).write_text("".join(f"{k} {_fmt(v)}\n" for k, v in sorted(values.items())))


def read_solution_file(path) -> dict[str, float]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MappingError(f"line {lineno}: expected 'name value'")
        try:
            values[parts[0]] = float(parts[1])
        except ValueError as exc:
            raise MappingError(f"line {lineno}: bad value {parts[1]!r}") from exc
    return values


_X_NAME = re.compile(r"^x_(\d+)_(\d+)_(\d+)_(\d+)$")


def assignment_to_plan(values: dict[str, float], instance: Instance) -> Plan:
    arcs = defaultdict(list)
    for name, v in values.items():
        if not name.startswith("x_") or v < 0.5:
            continue
        hit = _X_NAME.match(name)
        if not hit:
            raise MappingError(f"cannot parse variable name {name!r}")
        i, j, u, k = map(int, hit.groups())
        if not (0 <= i < instance.n_flyable and 0 <= j < instance.n_flyable and i != j):
            raise MappingError(f"{name}: no such arc in the instance")
        if not 0 <= u < instance.n_drones or not 0 <= k < max(1, instance.n_customers):
            raise MappingError(f"{name}: drone or trip index out of range")
        arcs[(u, k)].append((i, j))

    depots = set(instance.depot_ids)
    plan = [[] for _ in range(instance.n_drones)]
    for (u, k) in sorted(arcs):
        succ = {}
        for i, j in arcs[(u, k)]:
            if i in succ:
                raise MappingError(f"drone {u} trip {k}: node {i} has two outgoing arcs")
            succ[i] = j
        starts = [i for i in succ if i in depots]
        if len(starts) != 1:
            raise MappingError(f"drone {u} trip {k}: expected exactly one depot departure")
        nodes = [starts[0]]
        while nodes[-1] in succ and len(nodes) <= len(succ):
            nodes.append(succ[nodes[-1]])
            if nodes[-1] in depots:
                break
        if len(nodes) - 1 != len(succ) or nodes[-1] not in depots:
            raise MappingError(f"drone {u} trip {k}: arcs do not form one depot-to-depot path")
        plan[u].append(Trip(tuple(nodes)))
    return Plan(tuple(tuple(t) for t in plan))


def optimality_gap(value: float, bound: float) -> float:
    return (value - bound) / bound


@dataclass
class VerifyReport:
    plan: Plan
    evaluation: EvalResult
    mip_objective: float
    objectives_agree: bool
    gap: float | None

    def to_dict(self):
        return {"feasible": self.evaluation.feasible,
                "objective_m": self.evaluation.total_distance_m,
                "mip_objective_m": self.mip_objective,
                "objectives_agree": self.objectives_agree,
                "gap": self.gap,
                "plan": self.plan.to_lists(),
                "violations": self.evaluation.to_dict()["violations"]}


def verify_against_mps(instance: Instance, external_solution_file, bound: float | None = None,
                       metric_matrix: MetricMatrix | None = None) -> VerifyReport:
    m = metric_matrix if metric_matrix is not None else instance.metric_matrix()
    values = read_solution_file(external_solution_file)
    plan = assignment_to_plan(values, instance)
    evaluation = check_feasibility(plan, instance, m)
    mip_obj = 0.0
    for name, v in values.items():
        hit = _X_NAME.match(name)
        if hit and v >= 0.5:
            i, j = int(hit.group(1)), int(hit.group(2))
            mip_obj += float(m.distance_m[i, j])
    agree = abs(mip_obj - evaluation.total_distance_m) <= 1e-6 * max(1.0, mip_obj)
    gap = optimality_gap(evaluation.total_distance_m, bound) if bound else None
    return VerifyReport(plan, evaluation, mip_obj, agree, gap)

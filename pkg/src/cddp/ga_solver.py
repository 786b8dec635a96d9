"""Genetic algorithm over fixed-length label vectors.

A genome holds ``n_customers * n_flyable`` labels per drone, drones
concatenated in id order. Decoding collapses repeated labels and splits the
remaining sequence into depot-to-depot trips.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .arc_metrics import MetricMatrix
from .instance import Instance
from .solution import EvalResult, Plan, Trip, check_feasibility

OBJECTIVES = ("total_distance", "minmax_handover", "minmax_outage")
_DEPOT, _CUSTOMER, _OTHER = 0, 1, 2


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 100
    max_generations: int | None = None      # None: ten per customer
    time_limit_s: float = 3600.0
    penalty_factor: float | None = None     # None: 10 x region diagonal
    crossover: str = "sbx"                  # or "one_point"
    crossover_prob: float = 0.9
    crossover_eta: float = 15.0
    mutation_prob: float | None = None      # None: 1 / genome length
    mutation_eta: float = 20.0
    seed: int = 0
    objective: str = "total_distance"

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        for name in ("crossover_prob", "mutation_prob"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.crossover not in ("sbx", "one_point"):
            raise ValueError(f"unknown crossover {self.crossover!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")

    def generations_for(self, instance: Instance) -> int:
        if self.max_generations is not None:
            return self.max_generations
        return max(1, 10 * instance.n_customers)

    def penalty_for(self, instance: Instance) -> float:
        if self.penalty_factor is not None:
            return self.penalty_factor
        return 10.0 * math.hypot(*instance.region_m)


def genome_length(instance: Instance) -> int:
    return instance.n_drones * instance.n_customers * instance.n_flyable


def sample_population(config: GAConfig, instance: Instance, rng=None) -> np.ndarray:
    """Uniform random labels, one row per individual."""
    if instance.n_flyable < 2:
        raise ValueError("need at least two flyable nodes")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    return rng.integers(0, instance.n_flyable, size=(config.population_size, genome_length(instance)))


def recover(segment) -> list[int]:
    """Collapse runs of equal consecutive labels."""
    seg = np.asarray(segment)
    if seg.size == 0:
        return []
    keep = np.concatenate([[True], seg[1:] != seg[:-1]])
    return [int(v) for v in seg[keep]]


@dataclass(frozen=True)
class DecodeContext:
    kinds: tuple[int, ...]
    nearest_depot: tuple[int, ...]

    @classmethod
    def of(cls, instance: Instance) -> "DecodeContext":
        code = {"depot": _DEPOT, "customer": _CUSTOMER}
        kinds = tuple(code.get(n.kind, _OTHER) for n in instance.nodes)
        pos = instance.positions
        depots = np.array(instance.depot_ids)
        d = np.hypot(*(pos[:, None, :] - pos[depots][None, :, :]).transpose(2, 0, 1))
        return cls(kinds, tuple(int(depots[k]) for k in np.argmin(d, axis=1)))


def decode(individual, instance: Instance, ctx: DecodeContext | None = None) -> Plan:
    """Map any genome to a structurally valid plan.

    Per drone: recover the segment, make it start at the drone's start depot,
    then read labels left to right. A depot label closes the open trip; with
    no trip open it re-targets the previous trip's end depot (and is ignored
    before the first trip). Customers already served are skipped; a
    second customer on an open trip first sends the drone to the depot
    nearest its current node. Leftovers end at the drone's end depot.
    """
    ctx = ctx or DecodeContext.of(instance)
    genes = np.asarray(individual)
    if genes.size != genome_length(instance):
        raise ValueError(f"genome has {genes.size} genes, instance needs {genome_length(instance)}")
    seg_len = instance.n_customers * instance.n_flyable
    served: set[int] = set()
    plan = []
    for u, drone in enumerate(instance.drones):
        seq = recover(genes[u * seg_len:(u + 1) * seg_len])
        if not seq or seq[0] != drone.start_depot:
            seq.insert(0, drone.start_depot)
        trips = []
        here = drone.start_depot
        interior: list[int] = []
        carrying = False
        for label in seq[1:]:
            kind = ctx.kinds[label]
            if kind == _DEPOT:
                if interior:
                    trips.append(Trip((here, *interior, label)))
                    interior, carrying = [], False
                    here = label
                elif trips and label != here:
                    # a later depot label re-targets the trip just closed
                    trips[-1] = Trip((*trips[-1].nodes[:-1], label))
                    here = label
            elif kind == _CUSTOMER:
                if label in served:
                    continue
                if carrying:
                    depot = ctx.nearest_depot[interior[-1]]
                    trips.append(Trip((here, *interior, depot)))
                    here, interior = depot, []
                interior.append(label)
                carrying = True
                served.add(label)
            elif not interior or interior[-1] != label:
                interior.append(label)
        if interior:
            trips.append(Trip((here, *interior, drone.end_depot)))
            here = drone.end_depot
        if here != drone.end_depot:
            trips.append(Trip((here, drone.end_depot)))
        plan.append(tuple(trips))
    return Plan(tuple(plan))


# operators

def _sbx_pair(a, b, eta, low, high, rng):
    """Bounded simulated binary crossover on float arrays (same shape)."""
    c1, c2 = a.astype(float), b.astype(float)
    swap_var = rng.random(a.shape) < 0.5
    diff = np.abs(a - b) > 1e-14
    active = swap_var & diff
    y1 = np.minimum(a, b).astype(float)
    y2 = np.maximum(a, b).astype(float)
    u = rng.random(a.shape)
    flip = rng.random(a.shape) < 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        span = np.where(active, y2 - y1, 1.0)

        def betaq(beta):
            alpha = 2.0 - beta ** -(eta + 1.0)
            return np.where(u <= 1.0 / alpha,
                            (u * alpha) ** (1.0 / (eta + 1.0)),
                            (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0)))

        low_child = 0.5 * ((y1 + y2) - betaq(1.0 + 2.0 * (y1 - low) / span) * span)
        high_child = 0.5 * ((y1 + y2) + betaq(1.0 + 2.0 * (high - y2) / span) * span)
    low_child = np.clip(low_child, low, high)
    high_child = np.clip(high_child, low, high)
    first = np.where(flip, high_child, low_child)
    second = np.where(flip, low_child, high_child)
    c1 = np.where(active, first, c1)
    c2 = np.where(active, second, c2)
    return c1, c2


def crossover(parent_a, parent_b, config: GAConfig, rng, n_labels: int):
    a = np.asarray(parent_a)
    b = np.asarray(parent_b)
    if a.shape != b.shape:
        raise ValueError("parents must have equal length")
    if rng.random() >= config.crossover_prob:
        return a.copy(), b.copy()
    high = n_labels - 1
    if config.crossover == "one_point":
        cut = int(rng.integers(1, a.size)) if a.size > 1 else 0
        return (np.concatenate([a[:cut], b[cut:]]), np.concatenate([b[:cut], a[cut:]]))
    c1, c2 = _sbx_pair(a, b, config.crossover_eta, 0.0, float(high), rng)
    to_int = lambda c: np.clip(np.rint(c), 0, high).astype(a.dtype)
    return to_int(c1), to_int(c2)


def polynomial_step(y, low, high, eta, u):
    """Continuous polynomial mutation of ``y`` driven by uniforms ``u``."""
    y = np.asarray(y, dtype=float)
    span = high - low
    d1 = (y - low) / span
    d2 = (high - y) / span
    power = 1.0 / (eta + 1.0)
    lower = u < 0.5
    xy = np.where(lower, 1.0 - d1, 1.0 - d2)
    val = np.where(lower,
                   2.0 * u + (1.0 - 2.0 * u) * xy ** (eta + 1.0),
                   2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy ** (eta + 1.0))
    delta = np.where(lower, val ** power - 1.0, 1.0 - val ** power)
    return np.clip(y + delta * span, low, high)


def mutate(individual, config: GAConfig, rng, n_labels: int):
    genes = np.asarray(individual)
    prob = config.mutation_prob if config.mutation_prob is not None else 1.0 / max(1, genes.size)
    mask = rng.random(genes.shape) < prob
    u = rng.random(genes.shape)
    if not mask.any():
        return genes.copy()
    high = n_labels - 1
    moved = polynomial_step(genes, 0.0, float(high), config.mutation_eta, u)
    out = genes.copy()
    out[mask] = np.clip(np.rint(moved[mask]), 0, high).astype(genes.dtype)
    return out


# fitness

def violation_score(result: EvalResult, instance: Instance) -> float:
    """Sum of violation magnitudes, each divided by its class normaliser."""
    total = 0.0
    n_c = max(1, instance.n_customers)
    for v in result.violations:
        if v.constraint_class == "customer_visit":
            scale = n_c
        elif v.constraint_class in ("time_window", "horizon"):
            scale = instance.horizon_s
        elif v.constraint_class == "qos":
            limit = instance.h_max if v.detail == "handover" else instance.o_max
            scale = max(limit, 1.0)
        else:
            scale = 1.0
        total += v.magnitude / scale
    return total


def objective_value(result: EvalResult, kind: str = "total_distance") -> float:
    if kind == "minmax_handover":
        return float(result.max_handovers)
    if kind == "minmax_outage":
        return result.max_outage_s
    return result.total_distance_m


def penalized_fitness(plan: Plan, instance: Instance, metric_matrix: MetricMatrix,
                      penalty_factor: float, objective: str = "total_distance") -> float:
    result = check_feasibility(plan, instance, metric_matrix)
    return objective_value(result, objective) + penalty_factor * violation_score(result, instance)


@dataclass
class GAResult:
    plan: Plan
    evaluation: EvalResult
    feasible: bool
    generations: int
    wall_time_s: float
    trace: list[float] = field(default_factory=list)
    genome: np.ndarray | None = None


class _Evaluator:
    def __init__(self, instance, matrix, config):
        self.instance = instance
        self.matrix = matrix
        self.ctx = DecodeContext.of(instance)
        self.penalty = config.penalty_for(instance)
        self.objective = config.objective
        self.cache: dict[bytes, tuple] = {}

    def __call__(self, genome):
        key = genome.tobytes()
        hit = self.cache.get(key)
        if hit is None:
            plan = decode(genome, self.instance, self.ctx)
            result = check_feasibility(plan, self.instance, self.matrix)
            score = violation_score(result, self.instance)
            fitness = objective_value(result, self.objective) + self.penalty * score
            hit = (fitness, result.total_distance_m, score, plan, result)
            if len(self.cache) < 200_000:
                self.cache[key] = hit
        return hit


def run(instance: Instance, config: GAConfig = GAConfig(),
        metric_matrix: MetricMatrix | None = None) -> GAResult:
    """Elitist generational GA; returns the best feasible plan seen, if any.

    Random draws come from one seeded stream in this order: initial
    population, then per generation the tournament picks, crossover draws and
    mutation draws for each offspring pair.
    """
    started = time.perf_counter()
    matrix = metric_matrix if metric_matrix is not None else instance.metric_matrix()
    rng = np.random.default_rng(config.seed)
    n_labels = instance.n_flyable
    evaluate = _Evaluator(instance, matrix, config)

    pop = sample_population(config, instance, rng)
    scored = [evaluate(g) for g in pop]
    best_feasible = None
    least_violating = None

    def track(genome, s):
        nonlocal best_feasible, least_violating
        fitness, dist, score, plan, result = s
        obj = objective_value(result, config.objective)
        if score == 0.0 and result.feasible:
            if best_feasible is None or (obj, dist) < best_feasible[0]:
                best_feasible = ((obj, dist), genome.copy(), plan, result)
        if least_violating is None or (score, fitness) < least_violating[0]:
            least_violating = ((score, fitness), genome.copy(), plan, result)

    for g, s in zip(pop, scored):
        track(g, s)

    def key(s):
        return (s[0], s[1])

    trace = [min(key(s) for s in scored)[0]]
    generations = 0
    n_gen = config.generations_for(instance)
    size = config.population_size
    while generations < n_gen and time.perf_counter() - started < config.time_limit_s:
        contenders = rng.integers(0, size, size=(size, 2))
        parents = [a if key(scored[a]) <= key(scored[b]) else b for a, b in contenders]
        children = []
        for i in range(0, size, 2):
            pa, pb = pop[parents[i]], pop[parents[(i + 1) % size]]
            c1, c2 = crossover(pa, pb, config, rng, n_labels)
            children.append(mutate(c1, config, rng, n_labels))
            children.append(mutate(c2, config, rng, n_labels))
        children = np.array(children[:size])
        child_scores = [evaluate(g) for g in children]
        for g, s in zip(children, child_scores):
            track(g, s)
        merged = np.concatenate([pop, children])
        merged_scores = scored + child_scores
        ranked = sorted(range(len(merged_scores)), key=lambda i: (key(merged_scores[i]), i))
        # survivors are distinct genomes; duplicates only fill leftover slots
        seen, unique, repeats = set(), [], []
        for i in ranked:
            k = merged[i].tobytes()
            (repeats if k in seen else unique).append(i)
            seen.add(k)
        order = (unique + repeats)[:size]
        pop = merged[order]
        scored = [merged_scores[i] for i in order]
        generations += 1
        trace.append(key(scored[0])[0])

    chosen = best_feasible if best_feasible is not None else least_violating
    _, genome, plan, result = chosen
    return GAResult(plan, result, best_feasible is not None, generations,
                    time.perf_counter() - started, trace, genome)

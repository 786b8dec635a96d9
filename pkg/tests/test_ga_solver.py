from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cddp.exact import enumerate_optimal
from cddp.ga_solver import (GAConfig, crossover, decode, genome_length, mutate, penalized_fitness,
                            recover, run, sample_population)
from cddp.instance import Drone, GeneratorConfig, generate_instance, generate_tiny_instance
from cddp.solution import Plan, check_feasibility


def test_genome_lengths(illustrative):
    inst, _ = illustrative
    assert genome_length(inst) == 52
    two = replace(inst, drones=inst.drones + (Drone(1, 0, 1),))
    assert genome_length(two) == 104
    pop = sample_population(GAConfig(population_size=7), two)
    assert pop.shape == (7, 104) and pop.min() >= 0 and pop.max() <= 25


def test_sampling_seeded(illustrative):
    inst, _ = illustrative
    a = sample_population(GAConfig(seed=4), inst)
    assert np.array_equal(a, sample_population(GAConfig(seed=4), inst))
    assert not np.array_equal(a, sample_population(GAConfig(seed=5), inst))


def test_recover_examples():
    assert recover([0, 0, 4, 4, 1]) == [0, 4, 1]
    assert recover([3, 1, 3]) == [3, 1, 3]
    assert recover([7] * 9) == [7]
    assert recover([]) == []


@given(st.lists(st.integers(0, 5), max_size=40))
def test_recover_idempotent(seq):
    once = recover(seq)
    assert recover(once) == once
    assert all(a != b for a, b in zip(once, once[1:]))


def genome(inst, labels, fill):
    g = np.full(genome_length(inst), fill)
    g[:len(labels)] = labels
    return g


def test_decode_two_trips(illustrative):
    inst, _ = illustrative
    D0, D1, D2, _, C0, C1 = range(6)
    plan = decode(genome(inst, [D0, C0, D2, C1, D1], D1), inst)
    assert plan.to_lists() == [[[D0, C0, D2], [D2, C1, D1]]]


def test_decode_reproduces_optimal_plan(illustrative):
    inst, m = illustrative
    best = enumerate_optimal(inst, metric_matrix=m).plan
    labels = [n for k, t in enumerate(best.trips_by_drone[0]) for n in (t.nodes if k == 0 else t.nodes[1:])]
    assert decode(genome(inst, labels, labels[-1]), inst) == best


def test_decode_all_start_depot_is_empty(illustrative):
    inst, _ = illustrative
    home = replace(inst, drones=(Drone(0, 2, 2),))
    assert decode(np.full(52, 2), home) == Plan(((),))


def test_decode_rules(illustrative):
    inst, _ = illustrative
    D0, D1, D2, D3, C0, C1 = range(6)
    cs = 6
    # missing start depot is prefixed, open trip closes at the end depot
    assert decode(genome(inst, [C0], C0), inst).to_lists() == [[[D0, C0, D1]]]
    # a second customer first returns to the depot nearest the last node
    # (C0 is equidistant from D0 and D1; the lower label wins)
    plan = decode(genome(inst, [D0, C0, C1], C1), inst).to_lists()
    assert plan == [[[D0, C0, D0], [D0, C1, D1]]]
    # served customers are skipped, repeated interior labels collapse
    plan = decode(genome(inst, [D0, C0, cs, C0, cs, D1, C1, D1], D1), inst).to_lists()
    assert plan == [[[D0, C0, cs, D1], [D1, C1, D1]]]
    # later depot labels re-target the trip just closed
    plan = decode(genome(inst, [D0, C0, D2, D3, C1, D1], D1), inst).to_lists()
    assert plan == [[[D0, C0, D3], [D3, C1, D1]]]
    # a drone that ends elsewhere repositions
    plan = decode(genome(inst, [D0, C0, C1, D2], D2), inst).to_lists()
    assert plan == [[[D0, C0, D0], [D0, C1, D2], [D2, D1]]]


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decode_is_total_and_structurally_valid(seed):
    inst = generate_tiny_instance(seed % 5, n_customers=1 + seed % 3, n_drones=1 + seed % 2)
    g = np.random.default_rng(seed).integers(0, inst.n_flyable, genome_length(inst))
    plan = decode(g, inst)
    res = check_feasibility(plan, inst, inst.metric_matrix())
    assert not res.classes() & {"trip_structure", "depot_chaining"}
    served = [c for _, _, t in plan.all_trips() for c in t.nodes if inst.kind(c) == "customer"]
    assert len(served) == len(set(served))
    for _, _, t in plan.all_trips():
        assert all(inst.kind(v) != "depot" for v in t.interior)


def test_decode_length_check(illustrative):
    inst, _ = illustrative
    with pytest.raises(ValueError):
        decode(np.zeros(51, dtype=int), inst)


def test_crossover_contracts():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 26, 52), rng.integers(0, 26, 52)
    c1, c2 = crossover(a, b, GAConfig(crossover_prob=0.0), rng, 26)
    assert np.array_equal(c1, a) and np.array_equal(c2, b)
    c1, c2 = crossover(a, a, GAConfig(crossover_prob=1.0), rng, 26)
    assert np.array_equal(c1, a) and np.array_equal(c2, a)
    with pytest.raises(ValueError):
        crossover(a, b[:10], GAConfig(), rng, 26)
    c1, c2 = crossover(a, b, GAConfig(crossover="one_point", crossover_prob=1.0), rng, 26)
    cut = next((k for k in range(52) if c1[k] != a[k]), 52)
    assert np.array_equal(c1[cut:], b[cut:]) and np.array_equal(c2[:cut], b[:cut])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_operators_stay_in_range(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, n, 30), rng.integers(0, n, 30)
    c1, c2 = crossover(a, b, GAConfig(crossover_prob=1.0), rng, n)
    m = mutate(c1, GAConfig(mutation_prob=1.0, mutation_eta=1.0), rng, n)
    for g in (c1, c2, m):
        assert g.min() >= 0 and g.max() <= n - 1


def test_mutation_probability_zero_is_identity():
    g = np.arange(20)
    assert np.array_equal(mutate(g, GAConfig(mutation_prob=0.0), np.random.default_rng(1), 20), g)


def pm_cdf(z, y, low, high, eta):
    """CDF of the unrounded polynomial-mutation result, inverted analytically."""
    span = high - low
    d = (np.clip(z, low, high) - y) / span
    a = (1 - (y - low) / span) ** (eta + 1)
    b = (1 - (high - y) / span) ** (eta + 1)
    lower = ((1 + d) ** (eta + 1) - a) / (2 * (1 - a))
    upper = (2 - b - (1 - d) ** (eta + 1)) / (2 * (1 - b))
    return np.where(d <= 0, lower, upper)


def test_polynomial_mutation_distribution():
    n, y, eta, draws = 21, 10, 20.0, 40_000
    rng = np.random.default_rng(11)
    genes = np.full(draws, y)
    out = mutate(genes, GAConfig(mutation_prob=1.0, mutation_eta=eta), rng, n)
    counts = np.bincount(out, minlength=n)
    edges = np.concatenate([[-np.inf], np.arange(n - 1) + 0.5, [np.inf]])
    cdf = pm_cdf(edges, y, 0.0, n - 1.0, eta)
    cdf[0], cdf[-1] = 0.0, 1.0
    expected = np.diff(cdf) * draws
    keep = expected >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    assert stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 0.01
    # symmetric about the centre gene
    assert abs(counts[y - 1] - counts[y + 1]) < 5 * np.sqrt(counts[y + 1] + 1)


def test_penalized_fitness(tiny):
    inst, m = tiny
    best = enumerate_optimal(inst, metric_matrix=m)
    penalty = 1000.0
    assert penalized_fitness(best.plan, inst, m, penalty) == best.value
    dropped = Plan(tuple(trips[1:] if u == 0 else trips for u, trips in enumerate(best.plan.trips_by_drone)))
    assert penalized_fitness(dropped, inst, m, penalty) > penalized_fitness(dropped, inst, m, 0.0)
    assert penalized_fitness(dropped, inst, m, 0.0) == check_feasibility(dropped, inst, m).total_distance_m


def test_generation_cap():
    inst = generate_instance(GeneratorConfig("UUL", 50, seed=0))
    assert GAConfig().generations_for(inst) == 500


def test_run_is_elitist_and_deterministic(tiny):
    inst, m = tiny
    cfg = GAConfig(seed=3, max_generations=15, population_size=30)
    a, b = run(inst, cfg, m), run(inst, cfg, m)
    assert a.plan == b.plan and np.array_equal(a.genome, b.genome) and a.trace == b.trace
    assert all(x >= y for x, y in zip(a.trace, a.trace[1:]))
    assert a.generations == 15


def test_single_customer_matches_oracle():
    hits = 0
    for seed in range(20):
        inst = generate_tiny_instance(100 + seed, n_customers=1, n_drones=1)
        m = inst.metric_matrix()
        opt = enumerate_optimal(inst, metric_matrix=m).value
        res = run(inst, GAConfig(seed=seed), m)
        assert res.feasible
        assert res.evaluation.total_distance_m >= opt - 1e-6
        hits += res.evaluation.total_distance_m <= 1.05 * opt
    assert hits >= 18


def test_config_validation():
    with pytest.raises(ValueError):
        GAConfig(population_size=1)
    with pytest.raises(ValueError):
        GAConfig(mutation_prob=1.5)
    with pytest.raises(ValueError):
        GAConfig(crossover="two_point")

"""Bit-flip framework: flips, environments, composition, trace probabilities."""

from fractions import Fraction
from random import Random

import pytest

from ftnilab.faultlab import (
    TAU,
    Composition,
    EnvironmentSpec,
    Location,
    TableSystem,
    Tolerance,
    augmented_step,
    compose_step,
    enumerate_runs,
    environment_from_text,
    environment_to_text,
    flip,
    low,
    output,
    scripted_environment,
    termination_transparent_step,
    trace_distribution,
    trace_probability,
    uniform_environment,
)
from ftnilab.verify import random_table_system


def locs(spec: str):
    """'a,b|c' -> a, b faulty and c fault-tolerant."""
    faulty, _, tolerant = spec.partition("|")
    out = [Location(n, Tolerance.FAULTY) for n in faulty.split(",") if n]
    out += [Location(n, Tolerance.FAULT_TOLERANT) for n in tolerant.split(",") if n]
    return out


def three_bit_system():
    return TableSystem(locs("a,b,c|"), {})


def test_flip_named_bits_only():
    system = three_bit_system()
    state = system.state_of({"a": 0, "b": 1, "c": 0})
    flipped = flip(system, state, {"a", "c"})
    assert system.bits_of(flipped) == {"a": 1, "b": 1, "c": 1}


def test_flip_empty_set_is_identity():
    system = three_bit_system()
    state = system.state_of({"a": 0, "b": 1, "c": 0})
    assert flip(system, state, set()) == state


def test_flip_is_an_involution():
    system = three_bit_system()
    rng = Random(7)
    for _ in range(50):
        state = rng.randrange(8)
        names = {n for n in "abc" if rng.randrange(2)}
        assert flip(system, flip(system, state, names), names) == state


def test_flip_rejects_fault_tolerant_locations():
    system = TableSystem(locs("a|t"), {})
    with pytest.raises(ValueError):
        flip(system, 0, {"t"})
    with pytest.raises(ValueError):
        flip(system, 0, {"nope"})


def test_low_projection_laws():
    actions = [TAU, output("low", 3), output("high", 3), output("low", 0)]
    for a in actions:
        assert low(low(a)) == low(a)
        if a.channel == "low":
            assert low(a) == a
        else:
            assert low(a) == TAU


def test_uniform_environment_single_set_probability():
    env = uniform_environment(Fraction(1, 4), {"a", "b", "c"})
    dist = env.fault_distribution("E0")
    assert dist[frozenset({"a"})] == Fraction(9, 64)
    assert dist[frozenset()] == Fraction(27, 64)


def test_uniform_environment_mass_sums_to_one():
    env = uniform_environment(Fraction(1, 4), {"a", "b", "c"})
    total = sum(env.fault_distribution("E0").values(), Fraction(0))
    assert total == 1
    assert len(env.fault_distribution("E0")) == 8
    env.validate(frozenset({"a", "b", "c"}))


def test_uniform_environment_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        uniform_environment(Fraction(3, 2), {"a"})


def test_compose_step_one_bit_example():
    # b=0 emits 'a' into the stuck state b=1; b=1 is stuck.
    system = TableSystem(locs("b|"), {0: (output("low", 0), 1)})
    env = uniform_environment(Fraction(1, 4), {"b"})
    entries = compose_step(system, 0, "E0", env)
    assert set(entries) == {
        (output("low", 0), Fraction(3, 4), 1, "E0"),
        (TAU, Fraction(1, 4), 1, "E0"),
    }


def test_compose_step_stuck_state_loops_with_mass_one():
    system = TableSystem(locs("b|"), {0: (output("low", 0), 1)})
    env = uniform_environment(Fraction(1, 4), {"b"})
    assert compose_step(system, 1, "E0", env) == [(TAU, Fraction(1), 1, "E0")]


def test_compose_step_total_mass_on_random_systems():
    rng = Random(11)
    for _ in range(20):
        system = random_table_system(rng, n_locations=4, n_faulty=rng.randrange(5))
        env = uniform_environment(Fraction(1, 3), system.faulty_names)
        for state in system.all_states():
            entries = compose_step(system, state, "E0", env)
            assert sum(p for _, p, _, _ in entries) == 1
            assert all(p >= 0 for _, p, _, _ in entries)


def test_compose_step_mass_with_six_faulty_bits():
    rng = Random(5)
    system = random_table_system(rng, n_locations=6, n_faulty=6)
    env = uniform_environment(Fraction(2, 7), system.faulty_names)
    for state in system.all_states():
        entries = compose_step(system, state, "E0", env)
        assert sum(p for _, p, _, _ in entries) == 1


def test_augmented_step_one_bit_example():
    system = TableSystem(locs("b|"), {0: (output("low", 0), 1)})
    assert set(augmented_step(system, 0)) == {
        (frozenset(), output("low", 0), 1),
        (frozenset({"b"}), TAU, 1),
    }


def test_augmented_step_stuck_keeps_state():
    system = TableSystem(locs("a,b|"), {})
    entries = augmented_step(system, 2)
    assert len(entries) == 4
    assert all(act == TAU and succ == 2 for _, act, succ in entries)


def test_augmented_step_counts_and_injectivity():
    rng = Random(3)
    for _ in range(10):
        system = random_table_system(rng, n_locations=4, n_faulty=3)
        for state in system.all_states():
            entries = augmented_step(system, state)
            assert len(entries) == 8
            assert len({subset for subset, _, _ in entries}) == 8


def test_augmented_step_respects_scope():
    system = TableSystem(locs("a,b,c|"), {0: (TAU, 1)})
    entries = augmented_step(system, 0, scope={"a"})
    assert len(entries) == 2
    assert {subset for subset, _, _ in entries} == {frozenset(), frozenset({"a"})}


def test_termination_transparent_step():
    system = TableSystem(locs("a|"), {0: (output("low", 1), 1)})
    assert termination_transparent_step(system, 0) == (output("low", 1), 1)
    state = 1
    for _ in range(5):
        action, state = termination_transparent_step(system, state)
        assert action == TAU and state == 1


def test_trace_probability_empty_trace():
    system = three_bit_system()
    env = uniform_environment(Fraction(1, 2), system.faulty_names)
    assert trace_probability(system, env, 0, "E0", ()) == 1


def test_trace_probability_leaky_demo():
    # One fault-tolerant bit holding the secret, emitted on the low channel.
    transitions = {0: (output("low", 0), 0), 1: (output("low", 1), 1)}
    system = TableSystem(locs("|s"), transitions)
    env = uniform_environment(Fraction(1, 4), frozenset())
    assert trace_probability(system, env, 1, "E0", (output("low", 1),)) == 1
    assert trace_probability(system, env, 0, "E0", (output("low", 1),)) == 0


def test_trace_distribution_sums_to_one_small_depths():
    rng = Random(23)
    for _ in range(6):
        system = random_table_system(rng, n_locations=4, n_faulty=3)
        env = uniform_environment(Fraction(1, 4), system.faulty_names)
        comp = Composition(system, env)
        for state in list(system.all_states())[:4]:
            for depth in range(5):
                dist = comp.trace_distribution(state, "E0", depth)
                assert sum(dist.values(), Fraction(0)) == 1


def test_trace_distribution_matches_run_enumeration():
    rng = Random(41)
    system = random_table_system(rng, n_locations=3, n_faulty=2)
    env = uniform_environment(Fraction(1, 3), system.faulty_names)
    for state in system.all_states():
        by_runs: dict = {}
        for run in enumerate_runs(system, env, state, "E0", 3):
            by_runs[run.trace] = by_runs.get(run.trace, Fraction(0)) + run.probability
        dist = trace_distribution(system, env, state, "E0", 3)
        by_runs = {t: p for t, p in by_runs.items() if p != 0}
        dist = {t: p for t, p in dist.items() if p != 0}
        assert by_runs == dist


def test_environment_table_round_trip():
    env = uniform_environment(Fraction(1, 4), {"a", "b"})
    text = environment_to_text(env)
    back = environment_from_text(text)
    assert back.initial == env.initial
    assert back.faults == env.faults
    assert environment_to_text(back) == text


def test_environment_table_parse_error_carries_line():
    with pytest.raises(ValueError, match="line 2"):
        environment_from_text("start E0\nfault E0 a notafraction\n")


def test_environment_requires_total_mass():
    env = EnvironmentSpec(
        states=("E0",),
        initial="E0",
        transitions={("E0", "*"): "E0"},
        faults={"E0": {frozenset(): Fraction(1, 2)}},
    )
    with pytest.raises(ValueError, match="sums"):
        env.validate(frozenset())


def test_scripted_environment_advances_on_low_then_steps():
    strike = scripted_environment(
        [
            ({frozenset(): Fraction(1)}, "low"),
            ({frozenset({"a"}): Fraction(1)}, "step"),
        ]
    )
    state = strike.initial
    state = strike.advance(state, TAU)
    assert strike.fault_distribution(state) == {frozenset(): Fraction(1)}
    state = strike.advance(state, output("low", 1))
    assert strike.fault_distribution(state) == {frozenset({"a"}): Fraction(1)}
    state = strike.advance(state, TAU)
    assert strike.fault_distribution(state) == {frozenset(): Fraction(1)}
    assert strike.advance(state, output("low", 0)) == state


def test_scope_restriction_marginalizes_exactly():
    env = uniform_environment(Fraction(1, 4), {"a", "b", "c"})
    scoped = env.restricted({"a"})
    dist = scoped.fault_distribution("E0")
    assert set(dist) == {frozenset(), frozenset({"a"})}
    assert dist[frozenset({"a"})] == Fraction(1, 4)
    assert dist[frozenset()] == Fraction(3, 4)
    assert sum(dist.values(), Fraction(0)) == 1


def test_table_system_is_deterministic_by_construction():
    rng = Random(9)
    system = random_table_system(rng, n_locations=4, n_faulty=2)
    for state in system.all_states():
        results = {system.step(state) for _ in range(3)}
        assert len(results) == 1

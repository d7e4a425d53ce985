"""Bit-level fault laboratory.

Models deterministic transition systems over named bit locations, attackers
that flip subsets of the faulty bits with exact rational probabilities, and
the three ways system and attacker interact: probabilistic composition,
nondeterministic fault-labelled transitions, and termination-transparent
fault-free execution.  All probability arithmetic is exact (fractions.Fraction);
floating point is never used.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Iterator, Optional


class Tolerance(Enum):
    FAULT_TOLERANT = "fault_tolerant"
    FAULTY = "faulty"


@dataclass(frozen=True)
class Location:
    """A named single-bit cell, either shielded from faults or exposed to them."""

    name: str
    tolerance: Tolerance

    @property
    def faulty(self) -> bool:
        return self.tolerance is Tolerance.FAULTY


@dataclass(frozen=True, order=True)
class Action:
    """An observable event: an output on a channel, or the silent tick."""

    channel: str | None = None
    value: int | None = None

    @property
    def silent(self) -> bool:
        return self.channel is None

    def __str__(self) -> str:
        if self.silent:
            return "tau"
        return f"{self.channel}!{self.value}"


TAU = Action()
LOW_CHANNEL = "low"
HIGH_CHANNEL = "high"


def output(channel: str, value: int) -> Action:
    return Action(channel, value)


def is_low_action(action: Action) -> bool:
    return action.channel == LOW_CHANNEL


def low(action: Action) -> Action:
    """Public projection: low-channel outputs pass through, everything else is silent."""
    return action if is_low_action(action) else TAU


def parse_action(text: str) -> Action:
    if text == "tau":
        return TAU
    if "!" in text:
        channel, _, value = text.partition("!")
        return Action(channel, int(value))
    raise ValueError(f"unrecognized action {text!r}")


class FaultProneSystem:
    """Deterministic labelled transition system over bit locations.

    States are ints; bit i of a state is the value of ``locations[i]``.
    Subclasses implement ``step``, returning the unique successor or None
    when the state is stuck.
    """

    locations: tuple[Location, ...] = ()

    def __init__(self, locations: Iterable[Location]):
        locs = tuple(locations)
        names = [loc.name for loc in locs]
        if len(set(names)) != len(names):
            raise ValueError("location names must be unique")
        self.locations = locs
        self._index = {loc.name: i for i, loc in enumerate(locs)}
        self.faulty_names = frozenset(loc.name for loc in locs if loc.faulty)
        self.faulty_mask = sum(1 << i for i, loc in enumerate(locs) if loc.faulty)

    def step(self, state: int) -> tuple[Action, int] | None:
        raise NotImplementedError

    def is_stuck(self, state: int) -> bool:
        return self.step(state) is None

    def mask_of(self, names: Iterable[str]) -> int:
        mask = 0
        for name in names:
            mask |= 1 << self._index[name]
        return mask

    def names_of(self, mask: int) -> frozenset[str]:
        return frozenset(
            loc.name for i, loc in enumerate(self.locations) if mask >> i & 1
        )

    def state_of(self, bits: dict[str, int]) -> int:
        if set(bits) != set(self._index):
            raise ValueError("state must assign every location")
        return sum((bits[loc.name] & 1) << i for i, loc in enumerate(self.locations))

    def bits_of(self, state: int) -> dict[str, int]:
        return {loc.name: state >> i & 1 for i, loc in enumerate(self.locations)}

    def all_states(self) -> range:
        return range(1 << len(self.locations))


class TableSystem(FaultProneSystem):
    """Fault-prone system given extensionally by a transition table."""

    def __init__(
        self,
        locations: Iterable[Location],
        transitions: dict[int, tuple[Action, int]],
    ):
        super().__init__(locations)
        limit = 1 << len(self.locations)
        for src, (_, dst) in transitions.items():
            if not (0 <= src < limit and 0 <= dst < limit):
                raise ValueError("transition outside the state space")
        self.transitions = dict(transitions)

    def step(self, state: int) -> tuple[Action, int] | None:
        return self.transitions.get(state)


def flip(system: FaultProneSystem, state: int, faults: Iterable[str]) -> int:
    """Negate exactly the named bits; every one of them must be a faulty location."""
    names = frozenset(faults)
    bad = names - system.faulty_names
    if bad:
        unknown = [n for n in bad if n not in system._index]
        if unknown:
            raise ValueError(f"unknown locations: {sorted(unknown)}")
        raise ValueError(f"cannot flip fault-tolerant locations: {sorted(bad)}")
    return state ^ system.mask_of(names)


# ---------------------------------------------------------------------------
# Fault environments (attackers)
# ---------------------------------------------------------------------------

WILDCARD = "*"

FaultDist = dict[frozenset, Fraction]


@dataclass(frozen=True)
class EnvironmentSpec:
    """An attacker: a deterministic observer automaton plus per-state fault odds.

    ``transitions`` maps (state, observation) to the next state; an entry with
    the observation ``WILDCARD`` catches every observation not listed
    explicitly, which keeps the table finite for wide machine words.
    ``faults[state]`` is an exact probability distribution over sets of
    location names (absent sets have probability zero).
    """

    states: tuple[str, ...]
    initial: str
    transitions: dict[tuple[str, object], str]
    faults: dict[str, FaultDist]

    def advance(self, state: str, observation: Action) -> str:
        key = (state, observation)
        if key in self.transitions:
            return self.transitions[key]
        wild = (state, WILDCARD)
        if wild in self.transitions:
            return self.transitions[wild]
        raise ValueError(f"environment has no transition from {state} on {observation}")

    def fault_distribution(self, state: str) -> FaultDist:
        return self.faults[state]

    def validate(self, faulty: frozenset[str]) -> None:
        if self.initial not in self.states:
            raise ValueError("initial state missing from state set")
        for state in self.states:
            dist = self.faults.get(state)
            if dist is None:
                raise ValueError(f"state {state} has no fault distribution")
            total = Fraction(0)
            for subset, prob in dist.items():
                if not frozenset(subset) <= faulty:
                    raise ValueError(f"fault set {sorted(subset)} not within faulty locations")
                if prob < 0:
                    raise ValueError("negative probability")
                total += prob
            if total != 1:
                raise ValueError(f"fault distribution of {state} sums to {total}, not 1")

    def restricted(self, scope: Iterable[str]) -> "EnvironmentSpec":
        """Marginalize every distribution onto a fault scope.

        Locations outside the scope are treated as never flipping: each drawn
        set L is replaced by L ∩ scope, and probabilities of sets that collide
        are summed, so the total mass stays exactly 1.
        """
        keep = frozenset(scope)
        faults = {}
        for state, dist in self.faults.items():
            merged: FaultDist = {}
            for subset, prob in dist.items():
                clipped = frozenset(subset) & keep
                merged[clipped] = merged.get(clipped, Fraction(0)) + prob
            faults[state] = merged
        return EnvironmentSpec(self.states, self.initial, dict(self.transitions), faults)


def _subsets(names: tuple[str, ...]) -> Iterator[frozenset[str]]:
    for r in range(len(names) + 1):
        for combo in itertools.combinations(names, r):
            yield frozenset(combo)


def uniform_environment(epsilon: Fraction, faulty: Iterable[str]) -> EnvironmentSpec:
    """Single-state attacker flipping each faulty bit independently with odds epsilon."""
    eps = Fraction(epsilon)
    if not 0 <= eps <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    names = tuple(sorted(set(faulty)))
    n = len(names)
    dist: FaultDist = {}
    for subset in _subsets(names):
        k = len(subset)
        dist[subset] = eps**k * (1 - eps) ** (n - k)
    state = "E0"
    return EnvironmentSpec(
        states=(state,),
        initial=state,
        transitions={(state, WILDCARD): state},
        faults={state: dist},
    )


def scripted_environment(
    stages: Iterable[tuple[FaultDist, str]],
    *,
    name_prefix: str = "S",
) -> EnvironmentSpec:
    """Attacker that walks an ordered script of fault tables.

    Each stage is (distribution, advance) with advance either ``"low"``
    (move on when a low output is observed, stay on silent steps) or
    ``"step"`` (move on after one step regardless of the observation).
    After the last stage the attacker stays put and stops flipping.
    """
    stage_list = list(stages)
    states = tuple(f"{name_prefix}{i}" for i in range(len(stage_list) + 1))
    final = states[-1]
    transitions: dict[tuple[str, object], str] = {(final, WILDCARD): final}
    faults: dict[str, FaultDist] = {final: {frozenset(): Fraction(1)}}
    for i, (dist, advance) in enumerate(stage_list):
        here, there = states[i], states[i + 1]
        faults[here] = dict(dist)
        if advance == "step":
            transitions[(here, WILDCARD)] = there
        elif advance == "low":
            transitions[(here, WILDCARD)] = there
            transitions[(here, TAU)] = here
        else:
            raise ValueError(f"unknown advance mode {advance!r}")
    return EnvironmentSpec(states, states[0], transitions, faults)


def _render_fault_set(subset: frozenset[str]) -> str:
    return ",".join(sorted(subset)) if subset else "-"


def _parse_fault_set(text: str) -> frozenset[str]:
    if text == "-":
        return frozenset()
    return frozenset(text.split(","))


def environment_to_text(env: EnvironmentSpec) -> str:
    """Serialize an environment as the line-oriented table format."""
    lines = [f"start {env.initial}"]
    for (state, obs), dest in sorted(
        env.transitions.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))
    ):
        obs_text = WILDCARD if obs == WILDCARD else str(obs)
        lines.append(f"trans {state} {obs_text} {dest}")
    for state in env.states:
        for subset, prob in sorted(env.faults[state].items(), key=lambda kv: sorted(kv[0])):
            lines.append(f"fault {state} {_render_fault_set(subset)} {prob}")
    return "\n".join(lines) + "\n"


def environment_from_text(text: str) -> EnvironmentSpec:
    initial: str | None = None
    transitions: dict[tuple[str, object], str] = {}
    faults: dict[str, FaultDist] = {}
    states: list[str] = []

    def note_state(name: str) -> None:
        if name not in states:
            states.append(name)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "start" and len(parts) == 2:
                initial = parts[1]
                note_state(parts[1])
            elif parts[0] == "trans" and len(parts) == 4:
                state, obs_text, dest = parts[1:]
                obs = WILDCARD if obs_text == WILDCARD else parse_action(obs_text)
                transitions[(state, obs)] = dest
                note_state(state)
                note_state(dest)
            elif parts[0] == "fault" and len(parts) == 4:
                state, set_text, prob_text = parts[1:]
                note_state(state)
                faults.setdefault(state, {})[_parse_fault_set(set_text)] = Fraction(prob_text)
            else:
                raise ValueError(f"unrecognized directive {parts[0]!r}")
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"environment table line {lineno}: {exc}") from exc
    if initial is None:
        raise ValueError("environment table declares no start state")
    return EnvironmentSpec(tuple(states), initial, transitions, faults)


# ---------------------------------------------------------------------------
# System/environment composition and fault-labelled transitions
# ---------------------------------------------------------------------------


def compose_step(
    system: FaultProneSystem,
    state: int,
    env_state: str,
    env: EnvironmentSpec,
) -> list[tuple[Action, Fraction, int, str]]:
    """One probabilistic step of the system running inside the environment.

    Entries are aggregated on identical (action, successor); the attacker
    advances by the public view of the action.  A stuck system, or one made
    stuck by a flip, yields a silent step (the flipped state is retained), so
    total probability mass is always exactly 1.
    """
    if system.step(state) is None:
        succ = env.advance(env_state, TAU)
        return [(TAU, Fraction(1), state, succ)]
    acc: dict[tuple[Action, int], Fraction] = {}
    dist = env.fault_distribution(env_state)
    for subset in sorted(dist, key=lambda s: tuple(sorted(s))):
        prob = dist[subset]
        if prob == 0:
            continue
        flipped = state ^ system.mask_of(subset)
        result = system.step(flipped)
        if result is None:
            key = (TAU, flipped)
        else:
            key = result
        acc[key] = acc.get(key, Fraction(0)) + prob
    return [
        (action, prob, succ, env.advance(env_state, low(action)))
        for (action, succ), prob in acc.items()
    ]


def augmented_step(
    system: FaultProneSystem,
    state: int,
    scope: Optional[Iterable[str]] = None,
) -> list[tuple[frozenset[str], Action, int]]:
    """All fault-labelled transitions: one entry per subset of the fault scope."""
    names = tuple(sorted(system.faulty_names if scope is None else set(scope)))
    stuck = system.step(state) is None
    out = []
    for subset in _subsets(names):
        if stuck:
            out.append((subset, TAU, state))
            continue
        flipped = state ^ system.mask_of(subset)
        result = system.step(flipped)
        if result is None:
            out.append((subset, TAU, flipped))
        else:
            action, succ = result
            out.append((subset, action, succ))
    return out


def termination_transparent_step(
    system: FaultProneSystem, state: int
) -> tuple[Action, int]:
    """Fault-free step where stuck states silently loop instead of halting."""
    result = system.step(state)
    if result is None:
        return (TAU, state)
    return result


# ---------------------------------------------------------------------------
# Runs and trace probabilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Run:
    """A finite run of the composed system, with its exact probability."""

    origin: tuple[int, str]
    steps: tuple[tuple[Action, Fraction, int, str], ...] = ()

    @property
    def probability(self) -> Fraction:
        prob = Fraction(1)
        for _, p, _, _ in self.steps:
            prob *= p
        return prob

    @property
    def trace(self) -> tuple[Action, ...]:
        return tuple(low(action) for action, _, _, _ in self.steps)


def enumerate_runs(
    system: FaultProneSystem,
    env: EnvironmentSpec,
    state: int,
    env_state: str,
    length: int,
) -> Iterator[Run]:
    """Exhaustively yield every run of the given length (oracle-grade, slow)."""

    def go(s: int, e: str, n: int) -> Iterator[tuple[tuple[Action, Fraction, int, str], ...]]:
        if n == 0:
            yield ()
            return
        for entry in compose_step(system, s, e, env):
            _, _, s2, e2 = entry
            for rest in go(s2, e2, n - 1):
                yield (entry,) + rest

    for steps in go(state, env_state, length):
        yield Run((state, env_state), steps)


@dataclass(frozen=True)
class AugmentedRun:
    """A run of the fault-labelled system: each step names the flipped set."""

    origin: int
    steps: tuple[tuple[frozenset, Action], ...] = ()

    @property
    def trace(self) -> tuple[tuple[frozenset, Action], ...]:
        return tuple((subset, low(action)) for subset, action in self.steps)


def enumerate_augmented_runs(
    system: FaultProneSystem,
    state: int,
    length: int,
    scope: Optional[Iterable[str]] = None,
) -> Iterator[AugmentedRun]:
    """Every fault-labelled run of the given length (oracle-grade, slow)."""

    def go(s: int, n: int) -> Iterator[tuple[tuple[frozenset, Action, int], ...]]:
        if n == 0:
            yield ()
            return
        for subset, action, succ in augmented_step(system, s, scope):
            for rest in go(succ, n - 1):
                yield ((subset, action, succ),) + rest

    for steps in go(state, length):
        yield AugmentedRun(state, tuple((sub, act) for sub, act, _ in steps))


class Composition:
    """Memoizing view of a system composed with one environment."""

    def __init__(self, system: FaultProneSystem, env: EnvironmentSpec):
        self.system = system
        self.env = env
        self._steps: dict[tuple[int, str], list[tuple[Action, Fraction, int, str]]] = {}
        self._dists: dict[tuple[int, str, int], dict[tuple[Action, ...], Fraction]] = {}

    def step(self, state: int, env_state: str):
        key = (state, env_state)
        if key not in self._steps:
            self._steps[key] = compose_step(self.system, state, env_state, self.env)
        return self._steps[key]

    def trace_distribution(
        self, state: int, env_state: str, depth: int
    ) -> dict[tuple[Action, ...], Fraction]:
        """Probability of every public trace of exactly the given length."""
        key = (state, env_state, depth)
        if key in self._dists:
            return self._dists[key]
        if depth == 0:
            dist = {(): Fraction(1)}
        else:
            dist = {}
            for action, prob, s2, e2 in self.step(state, env_state):
                obs = low(action)
                for suffix, q in self.trace_distribution(s2, e2, depth - 1).items():
                    trace = (obs,) + suffix
                    dist[trace] = dist.get(trace, Fraction(0)) + prob * q
        self._dists[key] = dist
        return dist

    def trace_probability(
        self, state: int, env_state: str, trace: tuple[Action, ...]
    ) -> Fraction:
        """Summed probability of all runs whose public trace equals ``trace``."""
        if not trace:
            return Fraction(1)
        total = Fraction(0)
        head, rest = trace[0], trace[1:]
        for action, prob, s2, e2 in self.step(state, env_state):
            if low(action) == head:
                total += prob * self.trace_probability(s2, e2, rest)
        return total


def trace_probability(
    system: FaultProneSystem,
    env: EnvironmentSpec,
    state: int,
    env_state: str,
    trace: tuple[Action, ...],
) -> Fraction:
    return Composition(system, env).trace_probability(state, env_state, trace)


def trace_distribution(
    system: FaultProneSystem,
    env: EnvironmentSpec,
    state: int,
    env_state: str,
    depth: int,
) -> dict[tuple[Action, ...], Fraction]:
    return Composition(system, env).trace_distribution(state, env_state, depth)

"""Core domain types: physical environments, system configurations,
actions/traces, attack classes, and the pure environment operators
(sensor reading, actuator update, next-state computation, invariant and
safety checks, uncertainty widening).

All values are immutable after construction; operations are pure functions
of their inputs plus an explicit random generator for sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import (
    EvalError,
    Expr,
    IfExpr,
    MODE_LITERALS,
    Noise,
    eval_concrete,
    free_names,
)
from .intervals import EPS, Interval
from .process import Defs, Definition, ReadDev, Term, WriteDev, mentioned_devices


class ModelError(Exception):
    """Fatal model-level diagnostic (undeclared name, ill-formed system)."""


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvolutionSpec:
    """Per-variable update expressions over (state, actuators) with an
    optional additive ``noise(x)`` term ranging over [-unc(x), +unc(x)]."""

    updates: Mapping[str, Expr]


@dataclass(frozen=True)
class MeasurementSpec:
    """Per-sensor source expression over the state; the measured value
    ranges over [source - err(s), source + err(s)]."""

    sources: Mapping[str, Expr]


@dataclass(frozen=True, eq=False)
class Environment:
    state: Mapping[str, float]  # current value per state variable
    actuators: Mapping[str, float]  # current value per actuator
    uncertainty: Mapping[str, float]  # noise bound per state variable
    evolution: EvolutionSpec
    sensor_error: Mapping[str, float]  # max error per sensor
    measurement: MeasurementSpec
    invariant: Expr
    safety: Expr

    def key(self) -> tuple:
        return (
            tuple(sorted(self.state.items())),
            tuple(sorted(self.actuators.items())),
            tuple(sorted(self.uncertainty.items())),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Environment):
            return NotImplemented
        return self.key() == other.key() and self.sensor_error == other.sensor_error

    def __hash__(self) -> int:
        return hash(self.key())

    def __post_init__(self) -> None:
        for x, w in self.uncertainty.items():
            if w < 0:
                raise ModelError(f"negative uncertainty for {x}")
        for s, e in self.sensor_error.items():
            if e < 0:
                raise ModelError(f"negative sensor error for {s}")
        missing = set(self.state) - set(self.uncertainty)
        if missing:
            raise ModelError(f"uncertainty not total, missing {sorted(missing)}")
        missing = set(self.state) - set(self.evolution.updates)
        if missing:
            raise ModelError(f"evolution not total, missing {sorted(missing)}")
        missing = set(self.sensor_error) - set(self.measurement.sources)
        if missing:
            raise ModelError(f"measurement not total, missing {sorted(missing)}")

    # -- declared names ------------------------------------------------------

    @property
    def var_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.state))

    @property
    def sensor_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.sensor_error))

    @property
    def actuator_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.actuators))

    def devices(self) -> frozenset[str]:
        return frozenset(self.sensor_names) | frozenset(self.actuator_names)

    def scope(self) -> dict[str, float]:
        sc = dict(self.state)
        sc.update(self.actuators)
        return sc


def read_sensor(env: Environment, sensor: str) -> Interval:
    """Set of possible measurements of ``sensor``, as a closed interval
    [source - err, source + err]."""
    if sensor not in env.sensor_error:
        raise ModelError(f"undeclared sensor {sensor!r}")
    src = eval_concrete(env.measurement.sources[sensor], env.scope())
    err = env.sensor_error[sensor]
    return Interval.closed(src - err, src + err)


def update_act(env: Environment, actuator: str, value: float) -> Environment:
    """Environment identical to ``env`` except actuator set to ``value``."""
    if actuator not in env.actuators:
        raise ModelError(f"undeclared actuator {actuator!r}")
    acts = dict(env.actuators)
    acts[actuator] = float(value)
    return replace(env, actuators=acts)


def check_inv(env: Environment) -> bool:
    return bool(eval_concrete(env.invariant, env.scope()))


def check_safe(env: Environment) -> bool:
    return bool(eval_concrete(env.safety, env.scope()))


# -- next-state computation --------------------------------------------------


@dataclass(frozen=True)
class SuccessorRegion:
    """One symbolic successor of a concrete environment: every noisy
    variable maps to an interval, noise-free branches to point values."""

    values: Mapping[str, Interval]

    def contains(self, state: Mapping[str, float]) -> bool:
        return all(self.values[x].contains(v) for x, v in state.items())


def next_interval(env: Environment) -> list[SuccessorRegion]:
    """The exact image of the evolution map from a concrete state.

    Conditional updates whose guard depends on ``noise`` would straddle;
    over a point state every guard is decided, so a single region results
    unless an update's guard references noise (not in the supported
    fragment, rejected at load time).
    """
    scope = env.scope()
    values: dict[str, Interval] = {}
    for x in env.var_names:
        expr = env.evolution.updates[x]
        w = env.uncertainty[x]
        base = _eval_update(expr, scope, x, env)
        if w > 0 and has_noise(expr, x):
            base = base.add(Interval.closed(-w, w))
        values[x] = base
    return [SuccessorRegion(values)]


def has_noise(e: Expr, var: str) -> bool:
    if isinstance(e, Noise):
        return e.var == var
    for attr in ("left", "right", "arg", "cond", "then", "els"):
        sub = getattr(e, attr, None)
        if sub is not None and has_noise(sub, var):
            return True
    if isinstance(e, tuple):
        return any(has_noise(a, var) for a in e)
    args = getattr(e, "args", None)
    if args:
        return any(has_noise(a, var) for a in args)
    return False


def _eval_update(expr: Expr, scope, var: str, env: Environment) -> Interval:
    """Evaluate an update expression over a concrete state with the noise
    term replaced by zero (the caller adds the noise interval)."""
    zero_noise = {x: 0.0 for x in env.var_names}
    try:
        v = eval_concrete(expr, scope, zero_noise)
    except EvalError as exc:
        raise EvalError(f"{exc} (updating {var})") from exc
    return Interval.point(float(v))


def next_sample(
    env: Environment, rng: np.random.Generator, extreme: bool = False
) -> Environment:
    """One successor drawn by sampling each noise uniformly from its range
    (or from {-w, 0, +w} in extreme mode).  The result lies inside the
    corresponding next_interval region."""
    scope = env.scope()
    noise: dict[str, float] = {}
    for x in env.var_names:
        w = env.uncertainty[x]
        if w == 0:
            noise[x] = 0.0
        elif extreme:
            noise[x] = float(rng.choice([-w, 0.0, w]))
        else:
            noise[x] = float(rng.uniform(-w, w))
    return _apply_noise(env, scope, noise)


def next_with_noise(env: Environment, noise: Mapping[str, float]) -> Environment:
    """Successor under explicitly chosen noise values (used for replay)."""
    return _apply_noise(env, env.scope(), noise)


def _apply_noise(env: Environment, scope, noise: Mapping[str, float]) -> Environment:
    new_state: dict[str, float] = {}
    for x in env.var_names:
        expr = env.evolution.updates[x]
        try:
            new_state[x] = float(eval_concrete(expr, scope, noise))
        except EvalError as exc:
            raise EvalError(f"{exc} (updating {x})") from exc
    return replace(env, state=new_state)


def widen_env(env: Environment, delta: Mapping[str, float]) -> Environment:
    for x, d in delta.items():
        if d < 0:
            raise ModelError(f"negative widening for {x}")
        if x not in env.uncertainty:
            raise ModelError(f"undeclared variable {x!r}")
    unc = dict(env.uncertainty)
    for x, d in delta.items():
        unc[x] = unc[x] + d
    return replace(env, uncertainty=unc)


# ---------------------------------------------------------------------------
# Actions and traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    """A transition label.  System-level traces use kinds
    {tau, tick, out, in, dead, unsafe}; the remaining kinds occur only in
    process-level steps."""

    kind: str  # tau | tau_dev | tick | out | in | write | read | hwrite | hread | dead | unsafe
    name: str | None = None  # channel or device
    value: float | None = None

    def observable(self) -> bool:
        return self.kind in ("tick", "out", "in", "dead", "unsafe")

    def __str__(self) -> str:
        k = self.kind
        if k == "tau":
            return "tau"
        if k == "tau_dev":
            return f"tau:{self.name}"
        if k == "tick":
            return "tick"
        if k in ("dead", "unsafe"):
            return k
        if k == "out":
            return f"{self.name}!{_fmt(self.value)}"
        if k == "in":
            return f"{self.name}?{_fmt(self.value)}"
        if k == "write":
            return f"{self.name}!{_fmt(self.value)}"
        if k == "read":
            return f"{self.name}?{_fmt(self.value)}"
        if k == "hwrite":
            return f"#{self.name}!{_fmt(self.value)}"
        if k == "hread":
            return f"#{self.name}?{_fmt(self.value)}"
        return k


def _fmt(v: float | None) -> str:
    if v is None:
        return ""
    if v == int(v):
        return str(int(v))
    return f"{v:g}"


TAU = Action("tau")
TICK = Action("tick")
DEAD = Action("dead")
UNSAFE = Action("unsafe")


def tick_count(trace: Sequence[Action]) -> int:
    return sum(1 for a in trace if a.kind == "tick")


# ---------------------------------------------------------------------------
# System configurations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """An environment paired with a process, a secured-device set and an
    execution clock (ticks performed; current slot is clock + 1)."""

    env: Environment
    secured: frozenset[str]
    process: Term
    defs: Defs
    clock: int = 0

    def __post_init__(self) -> None:
        bad = self.secured - self.env.devices()
        if bad:
            raise ModelError(f"secured devices not declared: {sorted(bad)}")

    @property
    def slot(self) -> int:
        return self.clock + 1

    def key(self) -> tuple:
        return (self.env.key(), self.secured, id(self.process), self.clock)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SystemConfig):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


def well_formed(config: SystemConfig) -> bool:
    """Def-4 style check: every sensor mentioned by the process has a sensor
    error entry and every actuator mentioned has an actuator entry.
    Malicious prefixes are checked identically; a malicious prefix may
    target either kind of device."""
    env = config.env
    sensors = set(env.sensor_names)
    actuators = set(env.actuator_names)
    try:
        mentioned = mentioned_devices(config.process, config.defs)
    except KeyError:
        return False
    for dev, is_read, hacked in mentioned:
        if hacked:
            if dev not in sensors and dev not in actuators:
                return False
        elif is_read:
            if dev not in sensors:
                return False
        else:
            if dev not in actuators:
                return False
    return True


def widen_uncertainty(config: SystemConfig, delta: Mapping[str, float]) -> SystemConfig:
    """Config with the uncertainty function pointwise increased by delta."""
    return replace(config, env=widen_env(config.env, delta))


def unit_widening(config: SystemConfig, var: str, eta: float) -> SystemConfig:
    return widen_uncertainty(config, {var: eta})


def compose_attack(config: SystemConfig, attack: Term, attack_defs: Defs) -> SystemConfig:
    """The system M || A: the attack runs beside the (possibly restricted)
    cyber component."""
    from .process import mk_par

    merged = dict(config.defs)
    for name, d in attack_defs.items():
        if name in merged and merged[name] is not d and merged[name] != d:
            raise ModelError(f"definition clash for {name!r}")
        merged[name] = d
    return replace(config, process=mk_par(config.process, attack), defs=merged)


# ---------------------------------------------------------------------------
# Attack classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotSet:
    """A set of time slots: a finite part plus an optional infinite tail
    starting at ``tail_from`` (slot numbering starts at 1)."""

    finite: frozenset[int] = frozenset()
    tail_from: int | None = None

    @staticmethod
    def empty() -> "SlotSet":
        return SlotSet()

    @staticmethod
    def of(slots: Iterable[int]) -> "SlotSet":
        return SlotSet(frozenset(int(s) for s in slots))

    def is_empty(self) -> bool:
        return not self.finite and self.tail_from is None

    def contains(self, k: int) -> bool:
        if k in self.finite:
            return True
        return self.tail_from is not None and k >= self.tail_from

    def infimum(self) -> int | None:
        cands = []
        if self.finite:
            cands.append(min(self.finite))
        if self.tail_from is not None:
            cands.append(self.tail_from)
        return min(cands) if cands else None

    def supremum(self) -> float | None:
        """Largest slot, math.inf for a tail, None when empty."""
        if self.tail_from is not None:
            return math.inf
        if self.finite:
            return float(max(self.finite))
        return None

    def subset_of(self, other: "SlotSet", horizon: int | None = None) -> bool:
        hi = horizon
        if hi is None:
            tops = [s for s in (self.supremum(), other.supremum()) if s not in (None, math.inf)]
            hi = int(max([1] + [int(t) for t in tops])) + 1
            if self.tail_from is not None and other.tail_from is None:
                return False
        for k in range(1, hi + 1):
            if self.contains(k) and not other.contains(k):
                return False
        if self.tail_from is not None:
            if other.tail_from is None or other.tail_from > self.tail_from:
                # the tail beyond the scan must be covered too
                if other.tail_from is None:
                    return False
                return other.tail_from <= max(self.tail_from, hi)
        return True

    def truncate(self, horizon: int) -> "SlotSet":
        fin = {k for k in self.finite if k <= horizon}
        if self.tail_from is not None:
            fin |= set(range(self.tail_from, horizon + 1))
        return SlotSet(frozenset(fin))

    def slots_upto(self, horizon: int) -> list[int]:
        return sorted(self.truncate(horizon).finite)

    def __str__(self) -> str:
        if self.is_empty():
            return "{}"
        parts = [str(k) for k in sorted(self.finite)]
        if self.tail_from is not None:
            parts.append(f"{self.tail_from}..inf")
        return "{" + ", ".join(parts) + "}"


Activity = tuple[str, str]  # (device, "read" | "write")


@dataclass(frozen=True)
class AttackClass:
    """Total map from malicious activities to slot sets.  Activities not in
    ``schedule`` are mapped to the empty set.  ``truncated`` records that an
    inference ran out of horizon while the attack could still act."""

    schedule: Mapping[Activity, SlotSet]
    truncated: bool = False

    def get(self, activity: Activity) -> SlotSet:
        return self.schedule.get(activity, SlotSet.empty())

    def activities(self) -> list[Activity]:
        return sorted(a for a, s in self.schedule.items() if not s.is_empty())

    def is_empty(self) -> bool:
        return not self.activities()

    def start(self) -> int | None:
        infs = [s.infimum() for s in self.schedule.values() if not s.is_empty()]
        return min(i for i in infs if i is not None) if infs else None

    def end(self) -> float | None:
        sups = [s.supremum() for s in self.schedule.values() if not s.is_empty()]
        return max(s for s in sups if s is not None) if sups else None

    def devices(self) -> set[str]:
        return {dev for (dev, _), s in self.schedule.items() if not s.is_empty()}

    def truncate(self, horizon: int) -> "AttackClass":
        return AttackClass(
            {a: s.truncate(horizon) for a, s in self.schedule.items()}, False
        )

    def __str__(self) -> str:
        parts = []
        for (dev, dirn), s in sorted(self.schedule.items()):
            if s.is_empty():
                continue
            kw = "hread" if dirn == "read" else "hwrite"
            parts.append(f"{kw} {dev}: {s}")
        m = self.start()
        n = self.end()
        body = "{" + ", ".join(parts) + "}"
        if m is None:
            return body + " (no activity)"
        n_str = "inf" if n == math.inf else str(int(n))
        return f"{body} m={m} n={n_str}"


def weaker(c1: AttackClass, c2: AttackClass, horizon: int | None = None) -> bool:
    """Pointwise schedule inclusion C1(i) subseteq C2(i)."""
    acts = set(c1.schedule) | set(c2.schedule)
    return all(c1.get(a).subset_of(c2.get(a), horizon) for a in acts)

"""Labelled transition semantics.

Process-level rules produce channel sends/receives, device reads/writes,
their malicious variants, internal device-tampering synchronisations, and
tick steps (timeout alternatives; parallel components tick jointly).

System-level rules resolve sensor reads against the measurement map,
apply actuator writes to the environment, enforce the preemptive power of
malicious accesses on unsecured devices (a controller's access is
suppressed whenever a parallel component enables the matching malicious
action), emit ``dead`` forever once the invariant fails, emit optional
``unsafe`` while the safety predicate fails, and let time pass only when
no internal step is enabled (maximal progress).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .expr import EvalError, Lit, eval_concrete
from .intervals import Interval
from .model import (
    Action,
    DEAD,
    Environment,
    SystemConfig,
    TAU,
    TICK,
    UNSAFE,
    check_inv,
    check_safe,
    next_sample,
    next_with_noise,
    read_sensor,
    update_act,
)
from .process import (
    Call,
    Choice,
    Defs,
    Guarded,
    IfElse,
    Nil,
    Par,
    Persist,
    ReadDev,
    Recv,
    Restrict,
    Send,
    Term,
    Tick as TickTerm,
    TickPow,
    WriteDev,
    mk_par,
    mk_restrict,
    mk_tickpow,
    subst_term,
)


class ZenoError(Exception):
    """Internal steps exhausted the per-slot budget (time never advances)."""


class DivergenceError(Exception):
    """Unguarded recursion looped while computing a step set."""

    def __init__(self, name: str):
        super().__init__(f"divergent recursion through {name!r}")
        self.name = name


class StateCapError(Exception):
    """Bounded exploration exceeded the state cap; carries frontier size."""

    def __init__(self, frontier: int):
        super().__init__(f"state cap exceeded (frontier {frontier})")
        self.frontier = frontier


class _Resolve(Exception):
    """An internal nondeterministic branch must commit before steps are
    derived (the branches differ in their urgent actions, so maximal
    progress is gated per resolution)."""

    def __init__(self, children: list["Term"]):
        self.children = children

    def rewrap(self, f) -> "_Resolve":
        return _Resolve([f(c) for c in self.children])


@dataclass(frozen=True)
class ExplorationBudget:
    horizon: int = 50
    tau_budget: int = 10_000
    grid: int = 5  # points per noise/measurement interval, endpoints included
    palette: tuple[float, ...] = ()
    state_cap: int = 500_000
    unfold_cap: int = 120

    def __post_init__(self) -> None:
        if self.horizon < 0 or self.tau_budget <= 0 or self.grid <= 0:
            raise ValueError("budget fields must be positive")


# ---------------------------------------------------------------------------
# Process-level steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PStep:
    """One process-level step.  For value-binding prefixes (``recv``,
    ``read``, ``hread``) the step is *open*: the residual is obtained by
    substituting a value for the binder."""

    kind: str  # out | recv | write | read | hwrite | hread | tau | tau_dev | tick
    name: str | None = None
    value: float | None = None
    residual: Term | None = None
    binder: str | None = None
    body: Term | None = None

    def close_with(self, v: float) -> Term:
        assert self.binder is not None and self.body is not None
        return subst_term(self.body, {self.binder: float(v)})


_STEPS_CACHE: dict[tuple, tuple] = {}


def process_step_groups(
    term: Term, defs: Defs, unfold_cap: int = 120
) -> tuple[tuple[Term, tuple[PStep, ...]], ...]:
    """Step sets per internal-choice resolution of a closed term.

    Every active internal branch commits first (instantaneously and
    invisibly); each committed term contributes its own step set, and the
    caller applies maximal progress per resolution.  Tick steps are
    produced only through the timed rules; a parallel composition ticks
    only when both sides do.
    """
    key = (id(term), id(defs))
    cached = _STEPS_CACHE.get(key)
    if cached is None:
        cached = tuple(_grouped(term, defs, unfold_cap))
        if len(_STEPS_CACHE) > 200_000:
            _STEPS_CACHE.clear()
        _STEPS_CACHE[key] = cached
    return cached


def _grouped(term: Term, defs: Defs, cap: int):
    try:
        return [(term, tuple(_steps(term, defs, cap, ())))]
    except _Resolve as r:
        out = []
        for child in r.children:
            out.extend(_grouped(child, defs, cap))
        return out


def process_steps(term: Term, defs: Defs, unfold_cap: int = 120) -> tuple[PStep, ...]:
    """Union of the rule-derivable steps over all choice resolutions."""
    out: list[PStep] = []
    seen = set()
    for _resolved, steps in process_step_groups(term, defs, unfold_cap):
        for st in steps:
            k = (st.kind, st.name, st.value, id(st.residual), st.binder, id(st.body))
            if k not in seen:
                seen.add(k)
                out.append(st)
    return tuple(out)


def _steps(term: Term, defs: Defs, cap: int, stack: tuple) -> list[PStep]:
    if isinstance(term, Nil):
        return [PStep("tick", residual=term)]
    if isinstance(term, TickTerm):
        return [PStep("tick", residual=term.cont)]
    if isinstance(term, TickPow):
        k = int(round(eval_concrete(term.count, {})))
        if k <= 0:
            return _steps(term.cont, defs, cap, stack)  # _Resolve replaces the node
        if k == 1:
            return [PStep("tick", residual=term.cont)]
        from .expr import Num

        return [PStep("tick", residual=mk_tickpow(Num(float(k - 1)), term.cont))]
    if isinstance(term, Guarded):
        out = _prefix_steps(term.prefix, term.body)
        out.append(PStep("tick", residual=term.alt))
        return out
    if isinstance(term, Persist):
        out = _prefix_steps(term.prefix, term.body)
        out.append(PStep("tick", residual=term))
        return out
    if isinstance(term, IfElse):
        cond = eval_concrete(term.cond, {})
        branch = term.then if cond else term.els
        return _steps(branch, defs, cap, stack)  # _Resolve replaces the node
    if isinstance(term, Call):
        if len(stack) >= cap:
            raise DivergenceError(term.name)
        d = defs.get(term.name)
        if d is None:
            raise KeyError(f"unresolved definition {term.name!r}")
        if len(term.args) != len(d.params):
            raise EvalError(
                f"{term.name} expects {len(d.params)} arguments, got {len(term.args)}"
            )
        binding = {
            p: eval_concrete(a, {}) for p, a in zip(d.params, term.args)
        }
        body = subst_term(d.body, binding)
        return _steps(body, defs, cap, stack + (term.name,))
    if isinstance(term, Choice):
        raise _Resolve([term.left, term.right])
    if isinstance(term, Restrict):
        try:
            inner = _steps(term.body, defs, cap, stack)
        except _Resolve as r:
            raise r.rewrap(lambda t: mk_restrict(t, term.chans))
        out = []
        for st in inner:
            if st.kind in ("out", "recv") and st.name in term.chans:
                continue
            out.append(_wrap(st, lambda t: mk_restrict(t, term.chans)))
        return out
    if isinstance(term, Par):
        return _par_steps(term, defs, cap, stack)
    raise TypeError(term)


def _prefix_steps(p, body: Term) -> list[PStep]:
    if isinstance(p, Send):
        v = float(eval_concrete(p.value, {}))
        return [PStep("out", p.chan, v, residual=body)]
    if isinstance(p, Recv):
        return [PStep("recv", p.chan, binder=p.binder, body=body)]
    if isinstance(p, ReadDev):
        kind = "hread" if p.hacked else "read"
        return [PStep(kind, p.device, binder=p.binder, body=body)]
    if isinstance(p, WriteDev):
        v = float(eval_concrete(p.value, {}))
        kind = "hwrite" if p.hacked else "write"
        return [PStep(kind, p.device, v, residual=body)]
    raise TypeError(p)


def _wrap(st: PStep, f: Callable[[Term], Term]) -> PStep:
    if st.body is not None:
        return replace(st, body=f(st.body))
    return replace(st, residual=f(st.residual))


def _par_steps(term: Par, defs: Defs, cap: int, stack: tuple) -> list[PStep]:
    try:
        left = _steps(term.left, defs, cap, stack)
    except _Resolve as r:
        raise r.rewrap(lambda t: mk_par(t, term.right))
    try:
        right = _steps(term.right, defs, cap, stack)
    except _Resolve as r:
        raise r.rewrap(lambda t: mk_par(term.left, t))
    out: list[PStep] = []

    def lift(st: PStep, other: Term, on_left: bool) -> PStep:
        if on_left:
            return _wrap(st, lambda t: mk_par(t, other))
        return _wrap(st, lambda t: mk_par(other, t))

    for st in left:
        if st.kind != "tick":
            out.append(lift(st, term.right, True))
    for st in right:
        if st.kind != "tick":
            out.append(lift(st, term.left, False))

    # synchronisations (both orders)
    for a, b, a_left in itertools.chain(
        ((x, y, True) for x in left for y in right),
        ((x, y, False) for x in right for y in left),
    ):
        residual = None
        kind = None
        name = None
        if a.kind == "out" and b.kind == "recv" and a.name == b.name:
            kind, name = "tau", None
        elif a.kind == "hwrite" and b.kind == "read" and a.name == b.name:
            kind, name = "tau_dev", a.name  # integrity attack feeding a read
        elif a.kind == "write" and b.kind == "hread" and a.name == b.name:
            kind, name = "tau_dev", a.name  # command interception
        if kind is None:
            continue
        closed_b = b.close_with(a.value)
        if a_left:
            residual = mk_par(a.residual, closed_b)
        else:
            residual = mk_par(closed_b, a.residual)
        out.append(PStep(kind, name, a.value, residual=residual))

    for lt in left:
        if lt.kind != "tick":
            continue
        for rt in right:
            if rt.kind == "tick":
                out.append(PStep("tick", residual=mk_par(lt.residual, rt.residual)))
    return out


# ---------------------------------------------------------------------------
# System-level steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemStep:
    action: Action
    next: SystemConfig
    rule: str
    noise: Mapping[str, float] | None = None  # recorded for tick steps
    value: float | None = None  # resolved read/receive value, if any


class Mode:
    """Value-resolution strategy for sensor reads, open receives and time."""

    def sensor_values(self, iv: Interval) -> list[float]:
        raise NotImplementedError

    def recv_values(self, chan: str) -> list[float]:
        raise NotImplementedError

    def tick_noises(self, env: Environment) -> list[dict[str, float]]:
        raise NotImplementedError


@dataclass
class SampledMode(Mode):
    rng: np.random.Generator
    palette: tuple[float, ...] = ()
    extreme: bool = False

    def sensor_values(self, iv: Interval) -> list[float]:
        if iv.is_point():
            return [iv.lo]
        if self.extreme:
            return [float(self.rng.choice([iv.lo, (iv.lo + iv.hi) / 2, iv.hi]))]
        return [float(self.rng.uniform(iv.lo, iv.hi))]

    def recv_values(self, chan: str) -> list[float]:
        if not self.palette:
            return [0.0]
        return [float(self.rng.choice(list(self.palette)))]

    def tick_noises(self, env: Environment) -> list[dict[str, float]]:
        noise: dict[str, float] = {}
        for x in env.var_names:
            w = env.uncertainty[x]
            if w == 0:
                noise[x] = 0.0
            elif self.extreme:
                noise[x] = float(self.rng.choice([-w, 0.0, w]))
            else:
                noise[x] = float(self.rng.uniform(-w, w))
        return [noise]


@dataclass
class ExhaustiveMode(Mode):
    grid: int = 5
    palette: tuple[float, ...] = ()

    def sensor_values(self, iv: Interval) -> list[float]:
        return iv.sample_points(self.grid)

    def recv_values(self, chan: str) -> list[float]:
        return list(self.palette) if self.palette else [0.0]

    def tick_noises(self, env: Environment) -> list[dict[str, float]]:
        per_var: list[list[tuple[str, float]]] = []
        for x in env.var_names:
            w = env.uncertainty[x]
            if w == 0:
                per_var.append([(x, 0.0)])
            else:
                pts = Interval.closed(-w, w).sample_points(self.grid)
                per_var.append([(x, p) for p in pts])
        return [dict(combo) for combo in itertools.product(*per_var)]


def system_steps(
    config: SystemConfig, budget: ExplorationBudget, mode: Mode
) -> list[SystemStep]:
    """The rule-derivable system steps of a configuration.

    When the invariant fails the only step is the absorbing ``dead``
    self-loop.  A tick appears only if no internal step was derived; when
    the safety predicate fails an optional ``unsafe`` self-loop is added.
    """
    env = config.env
    if not check_inv(env):
        return [SystemStep(DEAD, config, "Deadlock")]

    sensors = set(env.sensor_names)
    actuators = set(env.actuator_names)
    secured = config.secured

    out: list[SystemStep] = []
    seen_steps: set = set()
    groups = process_step_groups(config.process, config.defs, budget.unfold_cap)
    for _resolved, psteps in groups:
        _group_steps(
            config, env, sensors, actuators, secured, psteps, mode, out, seen_steps
        )

    if not check_safe(env):
        out.append(SystemStep(UNSAFE, config, "Safety"))
    return out


def _group_steps(config, env, sensors, actuators, secured, psteps, mode, out, seen):
    """Rule pipeline for one choice resolution; maximal progress (and
    output urgency) is gated within the resolution."""
    hacked_writes = {
        st.name for st in psteps if st.kind == "hwrite" and st.name in sensors
    }
    hacked_reads = {
        st.name for st in psteps if st.kind == "hread" and st.name in actuators
    }
    urgent = 0

    def emit(
        action: Action,
        proc: Term,
        rule: str,
        env2: Environment | None = None,
        value: float | None = None,
        noise=None,
    ):
        nonlocal urgent
        cfg = replace(config, process=proc, env=env2 if env2 is not None else env)
        if noise is not None:
            cfg = replace(cfg, clock=config.clock + 1)
        key = (str(action), rule, cfg.key(), value)
        if key not in seen:
            seen.add(key)
            out.append(SystemStep(action, cfg, rule, value=value, noise=noise))
        # Maximal progress: internal steps withhold the tick.  Enabled
        # channel sends are urgent as well, so an output fires within the
        # slot it becomes available (patient outputs would allow
        # indefinitely procrastinated alarms, breaking the finite
        # vulnerability windows this tool must reproduce).
        if action.kind in ("tau", "out"):
            urgent += 1

    tick_residuals: list[Term] = []
    for st in psteps:
        if st.kind == "tick":
            tick_residuals.append(st.residual)
        elif st.kind == "out":
            emit(Action("out", st.name, st.value), st.residual, "Out")
        elif st.kind == "recv":
            for v in mode.recv_values(st.name):
                emit(Action("in", st.name, v), st.close_with(v), "Inp", value=v)
        elif st.kind == "tau":
            emit(TAU, st.residual, "Tau")
        elif st.kind == "tau_dev":
            # device tampering synchronisation; observable as a plain tau,
            # the device name is kept for rule audits and success predicates
            if st.name not in secured:
                emit(Action("tau", st.name), st.residual, "Tau", value=st.value)
        elif st.kind == "read":
            s = st.name
            if s not in sensors:
                raise EvalError(f"read from undeclared sensor {s!r}")
            if s in secured:
                for v in mode.sensor_values(read_sensor(env, s)):
                    emit(TAU, st.close_with(v), "SensReadSec", value=v)
            elif s not in hacked_writes:
                for v in mode.sensor_values(read_sensor(env, s)):
                    emit(TAU, st.close_with(v), "SensReadUnsec", value=v)
            # else: suppressed by an enabled malicious write (preemption)
        elif st.kind == "hread":
            s = st.name
            if s in sensors and s not in secured:
                for v in mode.sensor_values(read_sensor(env, s)):
                    emit(TAU, st.close_with(v), "HSensRead", value=v)
            # actuator hreads only fire through command interception
        elif st.kind == "write":
            a = st.name
            if a not in actuators:
                raise EvalError(f"write to undeclared actuator {a!r}")
            if a in secured:
                emit(TAU, st.residual, "ActWriteSec", update_act(env, a, st.value))
            elif a not in hacked_reads:
                emit(TAU, st.residual, "ActWriteUnsec", update_act(env, a, st.value))
            # else: suppressed by an enabled malicious read (preemption)
        elif st.kind == "hwrite":
            a = st.name
            if a in actuators and a not in secured:
                emit(TAU, st.residual, "HActWrite", update_act(env, a, st.value))
            # sensor hwrites only fire through the feeding synchronisation
        else:
            raise AssertionError(st.kind)

    if urgent == 0 and tick_residuals:
        for noise in mode.tick_noises(env):
            env2 = next_with_noise(env, noise)
            for proc in tick_residuals:
                emit(TICK, proc, "Time", env2=env2, noise=noise)


# ---------------------------------------------------------------------------
# Sampled executor
# ---------------------------------------------------------------------------


@dataclass
class TraceStep:
    slot: int
    action: Action
    rule: str
    noise: Mapping[str, float] | None
    choice: int
    config: SystemConfig
    value: float | None = None


@dataclass
class SampledTrace:
    steps: list[TraceStep] = field(default_factory=list)
    zeno: bool = False

    @property
    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]

    def observables(self) -> list[tuple[int, Action]]:
        return [(s.slot, s.action) for s in self.steps if s.action.observable()]

    def dump(self) -> str:
        return "\n".join(f"t={s.slot} {s.action}" for s in self.steps)


def _step_sort_key(step: SystemStep):
    a = step.action
    return (
        a.kind,
        a.name or "",
        a.value if a.value is not None else 0.0,
        step.rule,
        _term_sort_key(step.next.process),
    )


_SORTKEYS: dict[int, str] = {}


def _term_sort_key(t: Term) -> str:
    k = _SORTKEYS.get(id(t))
    if k is None:
        k = repr(t._key)
        _SORTKEYS[id(t)] = k
    return k


def run_sampled(
    config: SystemConfig,
    budget: ExplorationBudget,
    seed: int | np.random.Generator,
    unsafe_priority: bool = True,
    extreme: bool = False,
    script: Sequence[int] | None = None,
    observer: Callable[[TraceStep], None] | None = None,
    stop_on_dead: bool = True,
    attack_priority: bool = False,
) -> SampledTrace:
    """One maximal execution up to the horizon.

    Nondeterminism is resolved uniformly among enabled steps, except that
    an enabled ``unsafe`` is emitted once per slot first (so unsafety is
    never silently skipped); deterministic for a fixed seed.  With
    ``script`` the recorded choice indices are replayed instead of drawn,
    which is how recorded runs are replayed under widened uncertainty.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.Philox(key=int(seed))
    )
    mode = SampledMode(rng, budget.palette, extreme=extreme)
    trace = SampledTrace()
    cur = config
    ticks = 0
    taus_this_slot = 0
    unsafe_emitted_slot = -1
    scripted = list(script) if script is not None else None
    script_pos = 0

    while ticks < budget.horizon:
        steps = system_steps(cur, budget, mode)
        if len(steps) == 1 and steps[0].action.kind == "dead":
            st = steps[0]
            rec = TraceStep(cur.slot, st.action, st.rule, None, 0, st.next)
            trace.steps.append(rec)
            if observer:
                observer(rec)
            if stop_on_dead:
                return trace
            cur = st.next
            continue

        steps.sort(key=_step_sort_key)
        unsafe_steps = [s for s in steps if s.action.kind == "unsafe"]
        normal = [s for s in steps if s.action.kind != "unsafe"]
        if attack_priority:
            hostile = [
                s
                for s in normal
                if s.rule in ("HSensRead", "HActWrite")
                or (s.rule == "Tau" and s.action.name is not None)
            ]
            if hostile:
                normal = hostile

        if unsafe_priority and unsafe_steps and unsafe_emitted_slot != cur.slot:
            chosen = unsafe_steps[0]
            idx = -1
            unsafe_emitted_slot = cur.slot
        else:
            if not normal:
                return trace  # fully stuck (cannot arise for well-formed models)
            if scripted is not None:
                if script_pos >= len(scripted):
                    return trace
                idx = scripted[script_pos]
                script_pos += 1
            elif len(normal) == 1:
                idx = 0  # deterministic; draw nothing
            else:
                idx = int(rng.integers(len(normal)))
            chosen = normal[idx % len(normal)]

        rec = TraceStep(
            cur.slot, chosen.action, chosen.rule, chosen.noise, idx, chosen.next,
            value=chosen.value,
        )
        trace.steps.append(rec)
        if observer:
            observer(rec)

        if chosen.action.kind == "tick":
            ticks += 1
            taus_this_slot = 0
        elif chosen.action.kind == "tau":
            taus_this_slot += 1
            if taus_this_slot > budget.tau_budget:
                trace.zeno = True
                raise ZenoError(f"tau budget exhausted in slot {cur.slot}")
        cur = chosen.next
    return trace


class ReplayMismatch(Exception):
    """A recorded step is not derivable during replay."""


@dataclass
class _ReplayMode(Mode):
    """Resolves every value-drawing point to the recorded step's value."""

    current: TraceStep | None = None

    def sensor_values(self, iv: Interval) -> list[float]:
        v = self.current.value
        if v is None or not iv.contains(v):
            return []
        return [v]

    def recv_values(self, chan: str) -> list[float]:
        return [self.current.value] if self.current.value is not None else []

    def tick_noises(self, env: Environment) -> list[dict[str, float]]:
        noise = self.current.noise
        if noise is None:
            return []
        for x, w in env.uncertainty.items():
            if abs(noise.get(x, 0.0)) > w + 1e-12:
                return []  # the recorded draw is no longer admissible
        return [dict(noise)]


def replay(
    config: SystemConfig, budget: ExplorationBudget, recorded: SampledTrace
) -> SampledTrace:
    """Re-derive a recorded run step by step on ``config``.

    Every recorded action must be enabled again (with the same rule, the
    same resolved values and the same noise draws); raises
    :class:`ReplayMismatch` otherwise.  Running this on a configuration
    with pointwise-widened uncertainty checks trace monotonicity.
    """
    mode = _ReplayMode()
    cur = config
    out = SampledTrace()
    for rec in recorded.steps:
        mode.current = rec
        steps = system_steps(cur, budget, mode)
        match = None
        for st in steps:
            if (
                st.action == rec.action
                and st.rule == rec.rule
                and st.next.process is rec.config.process
            ):
                match = st
                break
        if match is None:
            raise ReplayMismatch(
                f"slot {cur.slot}: recorded {rec.action} ({rec.rule}) not derivable"
            )
        out.steps.append(
            TraceStep(
                cur.slot, match.action, match.rule, match.noise, rec.choice,
                match.next, value=match.value,
            )
        )
        cur = match.next
    return out


# ---------------------------------------------------------------------------
# Bounded exhaustive enumeration: canonical observable profiles
# ---------------------------------------------------------------------------
#
# Within one time slot the state variables are fixed, so whether ``unsafe``
# can be emitted is a per-slot constant, and the unsafe self-loop commutes
# with every other step of the slot.  A run is therefore summarised by a
# *profile*: one record per completed slot holding the channel events fired
# (in order) and whether unsafe was available, plus how the run ended.
# The observable traces of the system are exactly the emission–interleavings
# of its profiles, so trace-set inclusion reduces to profile matching:
# equal event sequences, unsafe availability covering, equal ends.

SlotEvents = tuple[tuple[str, str, float], ...]  # (kind, channel, value)
SlotRecord = tuple[SlotEvents, bool]  # events, unsafe available

END_HORIZON = ("H",)
END_DEAD = ("D",)


@dataclass(frozen=True)
class Profile:
    records: tuple[SlotRecord, ...]
    end: tuple  # END_HORIZON | END_DEAD | ("V", events, unsafe)

    def dead_slot(self) -> int | None:
        return len(self.records) + 1 if self.end == END_DEAD else None

    def unsafe_slots(self) -> frozenset[int]:
        return frozenset(
            i + 1 for i, (_, u) in enumerate(self.records) if u
        )

    def events_by_slot(self) -> tuple[SlotEvents, ...]:
        return tuple(ev for ev, _ in self.records)


@dataclass
class ObservableSet:
    """Result of bounded exhaustive enumeration."""

    profiles: frozenset[Profile]
    horizon: int
    capped: bool = False

    def has_bad_event(self) -> bool:
        for p in self.profiles:
            if p.end == END_DEAD or p.unsafe_slots() or any(p.events_by_slot()):
                return True
        return False

    def first_bad_slot(self) -> int | None:
        best: int | None = None
        for p in self.profiles:
            cands = []
            d = p.dead_slot()
            if d is not None:
                cands.append(d)
            cands.extend(p.unsafe_slots())
            cands.extend(i + 1 for i, ev in enumerate(p.events_by_slot()) if ev)
            if cands:
                c = min(cands)
                best = c if best is None else min(best, c)
        return best

    def traces(self, limit: int = 100_000) -> set[tuple]:
        """Expand profiles to explicit observable traces (tests only)."""
        out: set[tuple] = set()
        for p in sorted(self.profiles, key=repr):
            expansions: list[tuple] = [()]
            for events, unsafe in p.records:
                slot_variants = []
                base = tuple(("out" if k == "out" else "in", c, v) for k, c, v in events)
                if unsafe:
                    slot_variants = [base, (("unsafe",),) + base]
                else:
                    slot_variants = [base]
                new = []
                for pre in expansions:
                    for sv in slot_variants:
                        new.append(pre + sv + (("tick",),))
                expansions = new
                if len(expansions) > limit:
                    raise StateCapError(len(expansions))
            if p.end == END_DEAD:
                expansions = [e + (("dead",),) for e in expansions]
            out.update(expansions)
            # prefixes
            full = set()
            for e in expansions:
                for i in range(len(e) + 1):
                    full.add(e[:i])
            out.update(full)
            if len(out) > limit:
                raise StateCapError(len(out))
        return out


def _slot_outcomes(
    config: SystemConfig, budget: ExplorationBudget, mode: Mode
) -> tuple[list[tuple[SlotEvents, tuple]], bool]:
    """Explore the internal/channel behaviour of one slot.

    Returns (outcomes, unsafe_available); an outcome is an event sequence
    paired with an exit: ("tick", successor), ("dead",) or ("div",).
    """
    env = config.env
    if not check_inv(env):
        return [((), ("dead",))], False
    unsafe_av = not check_safe(env)

    outcomes: list[tuple[SlotEvents, tuple]] = []
    seen: set[tuple] = set()
    frontier: list[tuple[SystemConfig, SlotEvents]] = [(config, ())]
    visited: set[tuple] = set()
    while frontier:
        if len(visited) > budget.state_cap:
            raise StateCapError(len(frontier))
        node, events = frontier.pop()
        key = (node.key(), events)
        if key in visited:
            continue
        visited.add(key)
        steps = system_steps(node, budget, mode)
        for st in sorted(steps, key=_step_sort_key):
            k = st.action.kind
            if k == "unsafe":
                continue
            if k == "dead":
                outcomes.append((events, ("dead",)))
            elif k == "tick":
                outcomes.append((events, ("tick", st.next)))
            elif k in ("out", "in"):
                ev = events + ((k, st.action.name, st.action.value),)
                if len(ev) > 64:
                    raise StateCapError(len(ev))
                nk = (st.next.key(), ev)
                if nk not in visited:
                    frontier.append((st.next, ev))
            else:  # tau
                nk = (st.next.key(), events)
                if nk not in visited:
                    frontier.append((st.next, events))
        if not steps:
            outcomes.append((events, ("div",)))
    # dedup
    uniq: list[tuple[SlotEvents, tuple]] = []
    seen_keys: set = set()
    for events, ex in outcomes:
        k = (events, ex[0], ex[1].key() if ex[0] == "tick" else None)
        if k not in seen_keys:
            seen_keys.add(k)
            uniq.append((events, ex))
    return uniq, unsafe_av


def enumerate_bounded(
    config: SystemConfig, budget: ExplorationBudget
) -> ObservableSet:
    """All canonical observable profiles up to the horizon (ticks)."""
    mode = ExhaustiveMode(budget.grid, budget.palette)
    memo: dict[tuple, frozenset[Profile]] = {}
    slot_memo: dict[tuple, tuple[list, bool]] = {}

    def slot(config: SystemConfig):
        k = config.key()
        r = slot_memo.get(k)
        if r is None:
            r = _slot_outcomes(config, budget, mode)
            slot_memo[k] = r
        return r

    def rec(config: SystemConfig, ticks_left: int) -> frozenset[Profile]:
        key = (config.key(), ticks_left)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) > budget.state_cap:
            raise StateCapError(len(memo))
        outcomes, unsafe_av = slot(config)
        profs: set[Profile] = set()
        if ticks_left == 0:
            profs.add(Profile((), END_HORIZON))
        else:
            for events, exit_ in outcomes:
                record = (events, unsafe_av)
                if exit_[0] == "dead":
                    # a dead slot has no events (nothing else is derivable)
                    profs.add(Profile((), END_DEAD))
                elif exit_[0] == "div":
                    profs.add(Profile((), ("V", events, unsafe_av)))
                else:
                    for tail in rec(exit_[1], ticks_left - 1):
                        profs.add(Profile((record,) + tail.records, tail.end))
        result = frozenset(profs)
        memo[key] = result
        return result

    profiles = rec(config, budget.horizon)
    return ObservableSet(profiles, budget.horizon)


# ---------------------------------------------------------------------------
# Profile matching (weak observable-trace inclusion on enumerated sets)
# ---------------------------------------------------------------------------


def _match_full(p: Profile, q: Profile) -> bool:
    if len(p.records) != len(q.records) or p.end[0] != q.end[0]:
        return False
    for (pe, pu), (qe, qu) in zip(p.records, q.records):
        if pe != qe or (pu and not qu):
            return False
    if p.end[0] == "V":
        _, pev, puns = p.end
        _, qev, quns = q.end
        if pev != qev[: len(pev)] or (puns and not quns):
            return False
    return True


def _match_prefix(p: Profile, upto: int, q: Profile) -> bool:
    """Does q's prefix through slot ``upto`` subsume p's?"""
    if len(p.records) < upto:
        # p ends inside slot upto (dead/divergent/horizon end)
        if len(q.records) < len(p.records):
            return False
        for i in range(len(p.records)):
            pe, pu = p.records[i]
            qe, qu = q.records[i]
            if pe != qe or (pu and not qu):
                return False
        if p.end[0] == "D":
            return q.end[0] == "D" and len(q.records) == len(p.records)
        if p.end[0] == "V":
            _, pev, puns = p.end
            if len(q.records) > len(p.records):
                qe, qu = q.records[len(p.records)]
                return qe[: len(pev)] == pev and (not puns or qu)
            if q.end[0] == "V":
                _, qev, quns = q.end
                return qev[: len(pev)] == pev and (not puns or quns)
            return False
        return True
    if len(q.records) < upto:
        return False
    for i in range(upto):
        pe, pu = p.records[i]
        qe, qu = q.records[i]
        if pe != qe or (pu and not qu):
            return False
    return True


def profiles_included(
    left: ObservableSet, right: ObservableSet
) -> tuple[bool, Profile | None, int | None]:
    """Inclusion check.  Returns (holds, witness profile, divergence slot):
    the witness is an unmatched left profile and the divergence slot is the
    first slot at which some left profile prefix cannot be matched."""
    rights = list(right.profiles)
    unmatched: list[Profile] = []
    for p in left.profiles:
        if not any(_match_full(p, q) for q in rights):
            unmatched.append(p)
    if not unmatched:
        return True, None, None
    div_slot: int | None = None
    witness = min(unmatched, key=repr)
    horizon = max(len(p.records) for p in left.profiles) + 1
    for p in unmatched:
        for k in range(1, horizon + 2):
            if not any(_match_prefix(p, k, q) for q in rights):
                div = _divergence_slot(p, k)
                if div_slot is None or div < div_slot:
                    div_slot = div
                    witness = p
                break
    return False, witness, div_slot


def _divergence_slot(p: Profile, k: int) -> int:
    """First slot at which p's k-prefix shows an unmatchable observable."""
    return min(k, len(p.records) + 1)


def residuals_at(
    config: SystemConfig, budget: ExplorationBudget, depth: int
) -> list[SystemConfig]:
    """Configurations reachable with exactly ``depth`` ticks performed."""
    mode = ExhaustiveMode(budget.grid, budget.palette)
    cur: dict[tuple, SystemConfig] = {config.key(): config}
    for _ in range(depth):
        nxt: dict[tuple, SystemConfig] = {}
        for cfg in cur.values():
            outcomes, _ = _slot_outcomes(cfg, budget, mode)
            for _events, exit_ in outcomes:
                if exit_[0] == "tick":
                    nxt[exit_[1].key()] = exit_[1]
        cur = nxt
        if len(cur) > budget.state_cap:
            raise StateCapError(len(cur))
    return list(cur.values())

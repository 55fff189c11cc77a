"""Exact symbolic executor for the affine-with-guards model fragment.

A symbolic state pairs the process control state (with sensor-read binders
held as affine forms over interval-ranged symbols) with one real interval
per continuous state variable; discrete noise-free variables degenerate to
point intervals, so their bookkeeping stays exact.  Guards that straddle an
operand's range split the state with correct open/closed endpoints; each
child carries the committed branch, and the transition image is exact, so
every point of a reachable region is realised by some concrete run
(forward exactness composes along paths).

Binder values keep their correlation with the source variable inside the
reading slot; across a tick the anchor is snapshotted to a fresh interval
symbol, which drops the correlation with the evolved variable.  That is
exact for models whose guards never mix a decayed binder with live state,
and the engine flags the analysis as approximate when such a guard occurs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from . import expr as E
from .expr import (
    Expr,
    Lit,
    NonAffine,
    Num,
    SymScope,
    SymValue,
    branch_on_guard,
    eval_affine,
)
from .intervals import EPS, Interval, union_all
from .lts import DivergenceError, StateCapError
from .model import SystemConfig
from .process import (
    Call,
    Choice,
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
    Tick,
    TickPow,
    WriteDev,
    mk_call,
    mk_choice,
    mk_guarded,
    mk_ifelse,
    mk_par,
    mk_persist,
    mk_restrict,
    mk_tick,
    mk_tickpow,
    subst_term,
)


class UnsupportedModel(Exception):
    """The model leaves the fragment the symbolic engine can run exactly."""


Symbol = tuple[str, object]


@dataclass(frozen=True)
class SymState:
    proc: Term
    acts: tuple[tuple[str, float], ...]
    vars: tuple[tuple[str, Interval], ...]
    syms: tuple[Interval, ...]  # auxiliary symbols by index
    sym_kinds: tuple[str, ...] = ()  # "err" (live, slot-local) | "snap" (decayed)
    clock: int = 0

    def var(self, x: str) -> Interval:
        for n, iv in self.vars:
            if n == x:
                return iv
        raise KeyError(x)

    def act(self, a: str) -> float:
        for n, v in self.acts:
            if n == a:
                return v
        raise KeyError(a)

    def ranges(self, s: Symbol) -> Interval:
        kind, which = s
        if kind == "var":
            return self.var(which)
        return self.syms[which]

    def scope(self) -> SymScope:
        values = {x: SymValue.of_symbol(("var", x)) for x, _ in self.vars}
        for a, v in self.acts:
            values[a] = SymValue.constant(v)
        return SymScope(values, self.ranges)

    def set_var(self, x: str, iv: Interval) -> "SymState":
        return replace(
            self, vars=tuple((n, iv if n == x else old) for n, old in self.vars)
        )

    def set_act(self, a: str, v: float) -> "SymState":
        return replace(
            self, acts=tuple((n, v if n == a else old) for n, old in self.acts)
        )

    def set_proc(self, proc: Term) -> "SymState":
        return replace(self, proc=proc)

    def constrain(self, conds: Iterable[tuple[Symbol, Interval]]) -> "SymState | None":
        st = self
        for (kind, which), iv in conds:
            if kind == "var":
                got = st.var(which).intersect(iv)
                if got is None:
                    return None
                st = st.set_var(which, got)
            else:
                got = st.syms[which].intersect(iv)
                if got is None:
                    return None
                syms = list(st.syms)
                syms[which] = got
                st = replace(st, syms=tuple(syms))
        return st

    def key(self) -> tuple:
        return (
            id(self.proc),
            self.acts,
            tuple((n, iv.lo, iv.hi, iv.lo_open, iv.hi_open) for n, iv in self.vars),
            tuple((iv.lo, iv.hi, iv.lo_open, iv.hi_open) for iv in self.syms),
            self.sym_kinds,
            self.clock,
        )


def initial_state(config: SystemConfig) -> SymState:
    env = config.env
    return SymState(
        proc=config.process,
        acts=tuple(sorted(env.actuators.items())),
        vars=tuple((x, Interval.point(v)) for x, v in sorted(env.state.items())),
        syms=(),
        clock=config.clock,
    )


@dataclass(frozen=True)
class ObservableEvent:
    slot: int
    kind: str  # tick | dead | unsafe | out | in
    name: str | None = None
    value: Interval | None = None


class _NeedSplit(Exception):
    """A straddling guard partitions the state.  Each child carries the
    refined ranges and the control state with the guard's branch already
    committed, so re-exploration does not straddle again."""

    def __init__(self, children: list[tuple["SymState", Term]]):
        self.children = children

    def rewrap(self, f) -> "_NeedSplit":
        return _NeedSplit([(st, f(sub)) for st, sub in self.children])


@dataclass(frozen=True)
class SStep:
    kind: str  # out | recv | write | read | hwrite | hread | tau | tau_dev | tick
    name: str | None = None
    value: object = None  # SymValue for outs/writes
    residual: Term | None = None
    binder: str | None = None
    body: Term | None = None

    def close_with(self, v: object) -> Term:
        return subst_term(self.body, {self.binder: v})


class SymbolicEngine:
    """Symbolic stepping, layered reachability and constrained search."""

    def __init__(
        self,
        config: SystemConfig,
        unfold_cap: int = 120,
        state_cap: int = 200_000,
        approx_sink: list | None = None,
    ):
        self.env = config.env
        self.secured = config.secured
        self.defs = config.defs
        self.unfold_cap = unfold_cap
        self.state_cap = state_cap
        self.sensors = set(self.env.sensor_names)
        self.actuators = set(self.env.actuator_names)
        self.approx: list[str] = approx_sink if approx_sink is not None else []
        self._outcome_cache: dict[tuple, list] = {}

    def cached_outcomes(self, st: "SymState") -> "list[SlotOutcome]":
        """Slot outcomes of an entry state, memoised (no event capture)."""
        key = st.key()
        hit = self._outcome_cache.get(key)
        if hit is None:
            hit = explore_slot(self, st)
            if len(self._outcome_cache) > self.state_cap:
                self._outcome_cache.clear()
            self._outcome_cache[key] = hit
        return hit

    # -- process-level ---------------------------------------------------

    def _psteps(self, term: Term, st: SymState, depth: int = 0) -> list[SStep]:
        """Process steps of ``term`` under state ``st``; raises _NeedSplit
        (with ``term``-local children) on a straddling guard."""
        if depth > self.unfold_cap:
            raise DivergenceError(getattr(term, "name", "<term>"))
        if isinstance(term, Nil):
            return [SStep("tick", residual=term)]
        if isinstance(term, Tick):
            return [SStep("tick", residual=term.cont)]
        if isinstance(term, TickPow):
            k = int(round(self._const(term.count)))
            if k <= 0:
                try:
                    return self._psteps(term.cont, st, depth + 1)
                except _NeedSplit as sp:
                    raise sp  # cont replaces the tick^0 node
            if k == 1:
                return [SStep("tick", residual=term.cont)]
            return [SStep("tick", residual=mk_tickpow(Num(float(k - 1)), term.cont))]
        if isinstance(term, Guarded):
            out = self._prefix(term.prefix, term.body, st)
            out.append(SStep("tick", residual=term.alt))
            return out
        if isinstance(term, Persist):
            out = self._prefix(term.prefix, term.body, st)
            out.append(SStep("tick", residual=term))
            return out
        if isinstance(term, IfElse):
            branches = self._guard(term.cond, st)
            if len(branches) > 1:
                raise _NeedSplit(
                    [(st2, term.then if val else term.els) for st2, val in branches]
                )
            st2, val = branches[0]
            branch = term.then if val else term.els
            try:
                return self._psteps(branch, st2, depth + 1)
            except _NeedSplit as sp:
                raise sp  # the decided branch replaces the conditional
        if isinstance(term, Call):
            d = self.defs.get(term.name)
            if d is None:
                raise KeyError(f"unresolved definition {term.name!r}")
            binding = {p: self._value(a, st) for p, a in zip(d.params, term.args)}
            body = subst_term(d.body, binding)
            try:
                return self._psteps(body, st, depth + 1)
            except _NeedSplit as sp:
                raise sp  # the unfolding replaces the call
        if isinstance(term, Choice):
            # internal choice commits before steps are derived; maximal
            # progress is then gated per resolution
            raise _NeedSplit([(st, term.left), (st, term.right)])
        if isinstance(term, Restrict):
            try:
                inner = self._psteps(term.body, st, depth + 1)
            except _NeedSplit as sp:
                raise sp.rewrap(lambda t: mk_restrict(t, term.chans))
            out = []
            for s in inner:
                if s.kind in ("out", "recv") and s.name in term.chans:
                    continue
                out.append(self._rewrap_step(s, lambda t: mk_restrict(t, term.chans)))
            return out
        if isinstance(term, Par):
            return self._par(term, st, depth)
        raise TypeError(term)

    def _rewrap_step(self, s: SStep, f) -> SStep:
        if s.body is not None:
            return replace(s, body=f(s.body))
        return replace(s, residual=f(s.residual))

    def _par(self, term: Par, st: SymState, depth: int) -> list[SStep]:
        try:
            left = self._psteps(term.left, st, depth + 1)
        except _NeedSplit as sp:
            raise sp.rewrap(lambda t: mk_par(t, term.right))
        try:
            right = self._psteps(term.right, st, depth + 1)
        except _NeedSplit as sp:
            raise sp.rewrap(lambda t: mk_par(term.left, t))

        out: list[SStep] = []
        for s in left:
            if s.kind != "tick":
                out.append(self._rewrap_step(s, lambda t: mk_par(t, term.right)))
        for s in right:
            if s.kind != "tick":
                out.append(self._rewrap_step(s, lambda t: mk_par(term.left, t)))

        def syncs(side_a, side_b, a_left: bool):
            for a in side_a:
                want = None
                if a.kind == "out":
                    want = "recv"
                elif a.kind == "hwrite" and a.name in self.sensors:
                    want = "read"
                elif a.kind == "write":
                    want = "hread"
                if want is None:
                    continue
                for b in side_b:
                    if b.kind != want or b.name != a.name:
                        continue
                    closed = b.close_with(a.value)
                    if a_left:
                        residual = mk_par(a.residual, closed)
                    else:
                        residual = mk_par(closed, a.residual)
                    kind = "tau" if a.kind == "out" else "tau_dev"
                    out.append(SStep(kind, a.name, a.value, residual=residual))

        syncs(left, right, True)
        syncs(right, left, False)

        for l in left:
            if l.kind != "tick":
                continue
            for r in right:
                if r.kind == "tick":
                    out.append(SStep("tick", residual=mk_par(l.residual, r.residual)))
        return out

    def _prefix(self, p, body: Term, st: SymState) -> list[SStep]:
        if isinstance(p, Send):
            return [SStep("out", p.chan, self._value(p.value, st), residual=body)]
        if isinstance(p, Recv):
            return [SStep("recv", p.chan, binder=p.binder, body=body)]
        if isinstance(p, ReadDev):
            kind = "hread" if p.hacked else "read"
            return [SStep(kind, p.device, binder=p.binder, body=body)]
        if isinstance(p, WriteDev):
            kind = "hwrite" if p.hacked else "write"
            return [SStep(kind, p.device, self._value(p.value, st), residual=body)]
        raise TypeError(p)

    # -- expression helpers ------------------------------------------------

    def _const(self, e: Expr) -> float:
        v = eval_affine(e, SymScope({}, lambda s: Interval.point(0.0)))
        if not v.is_constant():
            raise UnsupportedModel("parameter expression is not constant")
        return v.const

    def _value(self, e: Expr, st: SymState) -> SymValue:
        try:
            return eval_affine(e, st.scope())
        except NonAffine as exc:
            raise UnsupportedModel(str(exc)) from exc

    def _guard(self, cond: Expr, st: SymState) -> list[tuple[SymState, bool]]:
        try:
            branches = branch_on_guard(cond, st.scope())
        except NonAffine as exc:
            raise UnsupportedModel(str(exc)) from exc
        self._note_mixed(cond, st)
        out = []
        for val, conds in branches:
            st2 = st.constrain(conds)
            if st2 is not None:
                out.append((st2, val))
        return out

    def _note_mixed(self, cond: Expr, st: SymState) -> None:
        syms: set[Symbol] = set()

        def walk(e: Expr):
            if isinstance(e, Lit) and isinstance(e.value, SymValue):
                syms.update(e.value.symbols())
            for attr in ("left", "right", "arg", "cond", "then", "els"):
                sub = getattr(e, attr, None)
                if sub is not None:
                    walk(sub)
            for a in getattr(e, "args", ()) or ():
                walk(a)

        walk(cond)
        has_snap = any(k == "sym" and st.sym_kinds[i] == "snap" for k, i in syms)
        has_var = any(k == "var" for k, _ in syms)
        if has_snap and has_var:
            self.approx.append("guard mixes a decayed binder with live state")

    # -- system-level ---------------------------------------------------------

    def sym_system_steps(self, st: SymState):
        """System steps of one symbolic state (invariant assumed to hold on
        all of it; the slot explorer splits on inv/safe at slot entry).

        Yields (rule, kind, name, value, source_state, next).  ``kind`` is
        "split" when a straddling guard partitions the state; ``next`` is
        then the list of refined children states.
        """
        try:
            psteps = self._psteps(st.proc, st)
        except _NeedSplit as sp:
            children = [cst.set_proc(sub) for cst, sub in sp.children]
            return [("split", "split", None, None, st, children)]

        hacked_writes = {
            s.name for s in psteps if s.kind == "hwrite" and s.name in self.sensors
        }
        hacked_reads = {
            s.name for s in psteps if s.kind == "hread" and s.name in self.actuators
        }
        results = []
        urgent = 0

        def emit(rule, kind, name, value, nxt):
            nonlocal urgent
            results.append((rule, kind, name, value, st, nxt))
            if kind in ("tau", "out"):
                urgent += 1

        ticks: list[Term] = []
        for s in psteps:
            if s.kind == "tick":
                ticks.append(s.residual)
            elif s.kind == "out":
                emit("Out", "out", s.name, s.value, st.set_proc(s.residual))
            elif s.kind == "recv":
                self.approx.append(f"open receive on channel {s.name}")
            elif s.kind == "tau":
                emit("Tau", "tau", None, None, st.set_proc(s.residual))
            elif s.kind == "tau_dev":
                # device tampering: a fed sensor value or an intercepted
                # actuator command; neither touches the environment
                if s.name not in self.secured:
                    emit("Tau", "tau", s.name, s.value, st.set_proc(s.residual))
            elif s.kind == "read":
                if s.name in self.secured or s.name not in hacked_writes:
                    rule = "SensReadSec" if s.name in self.secured else "SensReadUnsec"
                    st3, val = self._read_sensor(st, s.name)
                    emit(rule, "tau", s.name, val, st3.set_proc(s.close_with(val)))
            elif s.kind == "hread":
                if s.name in self.sensors and s.name not in self.secured:
                    st3, val = self._read_sensor(st, s.name)
                    emit(
                        "HSensRead", "tau", s.name, val, st3.set_proc(s.close_with(val))
                    )
            elif s.kind == "write":
                if s.name in self.secured or s.name not in hacked_reads:
                    rule = "ActWriteSec" if s.name in self.secured else "ActWriteUnsec"
                    st3 = self._apply_act(st, s.name, s.value)
                    emit(rule, "tau", s.name, s.value, st3.set_proc(s.residual))
            elif s.kind == "hwrite":
                if s.name in self.actuators and s.name not in self.secured:
                    st3 = self._apply_act(st, s.name, s.value)
                    emit("HActWrite", "tau", s.name, s.value, st3.set_proc(s.residual))
            else:
                raise AssertionError(s.kind)
        if urgent == 0:
            for residual in ticks:
                for succ in self._tick(st, residual):
                    emit("Time", "tick", None, None, succ)
        return results

    def _apply_act(self, st: SymState, a: str, value: SymValue) -> SymState:
        if a not in self.actuators:
            return st  # interception value, no environment effect
        if not value.is_constant():
            iv = value.range_over(st.ranges)
            if iv.is_point():
                return st.set_act(a, iv.lo)
            raise UnsupportedModel(f"symbolic write to actuator {a}")
        return st.set_act(a, value.const)

    def _read_sensor(self, st: SymState, sensor: str) -> tuple[SymState, SymValue]:
        src = self.env.measurement.sources[sensor]
        base = self._value(src, st)
        err = self.env.sensor_error[sensor]
        if err == 0:
            return st, base
        idx = len(st.syms)
        st2 = replace(
            st,
            syms=st.syms + (Interval.closed(-err, err),),
            sym_kinds=st.sym_kinds + ("err",),
        )
        return st2, base.add(SymValue.of_symbol(("sym", idx)))

    # -- time -----------------------------------------------------------------

    def _tick(self, st: SymState, residual: Term) -> list[SymState]:
        env = self.env
        branches: list[tuple[SymState, dict[str, SymValue]]] = [(st, {})]
        for x, _ in st.vars:
            upd = env.evolution.updates[x]
            w = env.uncertainty[x]
            new_branches = []
            for st2, acc in branches:
                for st3, val in self._eval_update(upd, st2, x, w):
                    acc2 = dict(acc)
                    acc2[x] = val
                    new_branches.append((st3, acc2))
            branches = new_branches
            if len(branches) > 256:
                raise StateCapError(len(branches))
        out = []
        for st2, acc in branches:
            new_vars = [(x, acc[x].range_over(st2.ranges)) for x, _ in st2.vars]
            succ = replace(st2, proc=residual, vars=tuple(new_vars), clock=st2.clock + 1)
            out.append(self._decay(st2, succ))
        return out

    def _eval_update(
        self, e: Expr, st: SymState, var: str, w: float
    ) -> list[tuple[SymState, SymValue]]:
        """Evaluate an update expression, splitting locally on straddling
        guards.  noise(var) contributes a closed interval [-w, +w]."""
        if isinstance(e, E.IfExpr):
            out = []
            for st2, val in self._guard(e.cond, st):
                out.extend(self._eval_update(e.then if val else e.els, st2, var, w))
            return out
        if isinstance(e, E.Noise):
            iv = Interval.closed(-w, w) if w > 0 else Interval.point(0.0)
            return [(st, _InlineRange(iv))]
        if isinstance(e, E.BinOp):
            out = []
            for stl, l in self._eval_update(e.left, st, var, w):
                for str_, r in self._eval_update(e.right, stl, var, w):
                    if e.op == "+":
                        out.append((str_, _sym_add(l, r)))
                    elif e.op == "-":
                        out.append((str_, _sym_add(l, r.scale(-1.0))))
                    elif e.op == "*":
                        if l.is_constant():
                            out.append((str_, r.scale(l.const)))
                        elif r.is_constant():
                            out.append((str_, l.scale(r.const)))
                        else:
                            raise UnsupportedModel("nonlinear update")
                    else:
                        if not r.is_constant() or abs(r.const) < EPS:
                            raise UnsupportedModel("division in update")
                        out.append((str_, l.scale(1.0 / r.const)))
            return out
        if isinstance(e, E.Neg):
            return [(s, v.scale(-1.0)) for s, v in self._eval_update(e.arg, st, var, w)]
        if isinstance(e, E.Fn):
            if len(e.args) != 2:
                raise UnsupportedModel(f"{e.name} with {len(e.args)} arguments")
            cmp = E.Cmp("<=", e.args[0], e.args[1])
            out = []
            for st2, first_le in self._guard(cmp, st):
                pick = e.args[0] if (first_le == (e.name == "min")) else e.args[1]
                out.extend(self._eval_update(pick, st2, var, w))
            return out
        return [(st, self._value(e, st))]

    def _decay(self, pre: SymState, succ: SymState) -> SymState:
        """Snapshot var-anchored binder symbols to the pre-tick ranges and
        drop auxiliary symbols no longer referenced by the control state."""
        used: list[SymValue] = []
        _collect_symvalues(succ.proc, used)
        var_syms = {s for v in used for s in v.symbols() if s[0] == "var"}
        sym_ids = {s[1] for v in used for s in v.symbols() if s[0] == "sym"}
        if not var_syms and not sym_ids and not succ.syms:
            return succ
        mapping: dict[Symbol, SymValue] = {}
        new_syms: list[Interval] = []
        for s in sorted(var_syms, key=repr):
            iv = pre.var(s[1])
            mapping[s] = SymValue.of_symbol(("sym", len(new_syms)))
            new_syms.append(iv)
        for old_id in sorted(sym_ids):
            mapping[("sym", old_id)] = SymValue.of_symbol(("sym", len(new_syms)))
            new_syms.append(succ.syms[old_id])
        proc = _remap_symvalues(succ.proc, mapping)
        return replace(
            succ,
            proc=proc,
            syms=tuple(new_syms),
            sym_kinds=tuple("snap" for _ in new_syms),
        )


# ---------------------------------------------------------------------------
# inline noise ranges
# ---------------------------------------------------------------------------


class _InlineRange(SymValue):
    """A fresh independent bounded quantity (evolution noise)."""

    def __init__(self, iv: Interval):
        object.__setattr__(self, "coeffs", ())
        object.__setattr__(self, "const", 0.0)
        object.__setattr__(self, "iv", iv)

    def add(self, other: SymValue) -> SymValue:
        if isinstance(other, _InlineRange):
            return _InlineRange(self.iv.add(other.iv))
        return _Mixed(other, self.iv)

    def scale(self, k: float) -> SymValue:
        return _InlineRange(self.iv.scale(k))

    def is_constant(self) -> bool:
        return False

    def range_over(self, ranges) -> Interval:
        return self.iv

    def symbols(self):
        return set()


class _Mixed(SymValue):
    """Affine form plus an independent inline range."""

    def __init__(self, base: SymValue, iv: Interval):
        object.__setattr__(self, "coeffs", base.coeffs)
        object.__setattr__(self, "const", base.const)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "iv", iv)

    def add(self, other: SymValue) -> SymValue:
        if isinstance(other, _InlineRange):
            return _Mixed(self.base, self.iv.add(other.iv))
        if isinstance(other, _Mixed):
            return _Mixed(self.base.add(other.base), self.iv.add(other.iv))
        return _Mixed(self.base.add(other), self.iv)

    def scale(self, k: float) -> SymValue:
        return _Mixed(self.base.scale(k), self.iv.scale(k))

    def is_constant(self) -> bool:
        return False

    def range_over(self, ranges) -> Interval:
        return self.base.range_over(ranges).add(self.iv)

    def symbols(self):
        return self.base.symbols()


def _sym_add(l: SymValue, r: SymValue) -> SymValue:
    """Addition that keeps inline-range terms regardless of operand order."""
    if isinstance(l, (_InlineRange, _Mixed)):
        return l.add(r)
    if isinstance(r, (_InlineRange, _Mixed)):
        return r.add(l)
    return l.add(r)


def _collect_symvalues(t: Term, out: list[SymValue]) -> None:
    def from_expr(e: Expr):
        if isinstance(e, Lit) and isinstance(e.value, SymValue):
            out.append(e.value)
        for attr in ("left", "right", "arg", "cond", "then", "els"):
            sub = getattr(e, attr, None)
            if sub is not None:
                from_expr(sub)
        for a in getattr(e, "args", ()) or ():
            from_expr(a)

    if isinstance(t, (Guarded, Persist)):
        p = t.prefix
        if isinstance(p, (Send, WriteDev)):
            from_expr(p.value)
        _collect_symvalues(t.body, out)
        if isinstance(t, Guarded):
            _collect_symvalues(t.alt, out)
    elif isinstance(t, Tick):
        _collect_symvalues(t.cont, out)
    elif isinstance(t, TickPow):
        from_expr(t.count)
        _collect_symvalues(t.cont, out)
    elif isinstance(t, (Par, Choice)):
        _collect_symvalues(t.left, out)
        _collect_symvalues(t.right, out)
    elif isinstance(t, IfElse):
        from_expr(t.cond)
        _collect_symvalues(t.then, out)
        _collect_symvalues(t.els, out)
    elif isinstance(t, Restrict):
        _collect_symvalues(t.body, out)
    elif isinstance(t, Call):
        for a in t.args:
            from_expr(a)


def _remap_symvalues(t: Term, mapping: Mapping[Symbol, SymValue]) -> Term:
    def fix_val(v: SymValue) -> SymValue:
        if isinstance(v, _Mixed):
            return _Mixed(fix_val(v.base), v.iv)
        if isinstance(v, _InlineRange):
            return v
        acc = SymValue.constant(v.const)
        for s, c in v.coeffs:
            acc = acc.add(mapping.get(s, SymValue.of_symbol(s)).scale(c))
        return acc

    def fix_expr(e: Expr) -> Expr:
        if isinstance(e, Lit):
            if isinstance(e.value, SymValue):
                return Lit(fix_val(e.value))
            return e
        if isinstance(e, E.BinOp):
            return E.BinOp(e.op, fix_expr(e.left), fix_expr(e.right))
        if isinstance(e, E.Cmp):
            return E.Cmp(e.op, fix_expr(e.left), fix_expr(e.right))
        if isinstance(e, E.BoolOp):
            return E.BoolOp(e.op, fix_expr(e.left), fix_expr(e.right))
        if isinstance(e, E.Neg):
            return E.Neg(fix_expr(e.arg))
        if isinstance(e, E.Not):
            return E.Not(fix_expr(e.arg))
        if isinstance(e, E.Fn):
            return E.Fn(e.name, tuple(fix_expr(a) for a in e.args))
        if isinstance(e, E.IfExpr):
            return E.IfExpr(fix_expr(e.cond), fix_expr(e.then), fix_expr(e.els))
        return e

    def fix_term(t: Term) -> Term:
        if isinstance(t, Nil):
            return t
        if isinstance(t, Tick):
            return mk_tick(fix_term(t.cont))
        if isinstance(t, TickPow):
            return mk_tickpow(fix_expr(t.count), fix_term(t.cont))
        if isinstance(t, Par):
            return mk_par(fix_term(t.left), fix_term(t.right))
        if isinstance(t, Choice):
            return mk_choice(fix_term(t.left), fix_term(t.right))
        if isinstance(t, Guarded):
            return mk_guarded(
                _fix_prefix(t.prefix, fix_expr), fix_term(t.body), fix_term(t.alt)
            )
        if isinstance(t, Persist):
            return mk_persist(_fix_prefix(t.prefix, fix_expr), fix_term(t.body))
        if isinstance(t, IfElse):
            return mk_ifelse(fix_expr(t.cond), fix_term(t.then), fix_term(t.els))
        if isinstance(t, Restrict):
            return mk_restrict(fix_term(t.body), t.chans)
        if isinstance(t, Call):
            return mk_call(t.name, tuple(fix_expr(a) for a in t.args))
        raise TypeError(t)

    return fix_term(t)


def _fix_prefix(p, fix_expr):
    if isinstance(p, Send):
        return Send(p.chan, fix_expr(p.value))
    if isinstance(p, WriteDev):
        return WriteDev(p.device, fix_expr(p.value), p.hacked)
    return p


# ---------------------------------------------------------------------------
# Slot exploration and layered reachability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymEvent:
    slot: int
    kind: str  # out | devwrite | unsafe | dead
    name: str | None
    value: object
    state: SymState


@dataclass
class SlotOutcome:
    events: tuple  # ordered (kind, channel, value_key) events
    succ: SymState | None  # None for a dead end
    unsafe: bool  # unsafe available in this slot (on this branch)
    dead: bool


def _entry_split(engine: SymbolicEngine, st: SymState):
    """Split a slot-entry state by the invariant and safety predicates.
    Returns (dead_states, [(alive_state, unsafe_enabled)])."""
    dead, alive = [], []
    for st2, inv_ok in engine._guard(engine.env.invariant, st):
        if not inv_ok:
            dead.append(st2)
            continue
        for st3, safe_ok in engine._guard(engine.env.safety, st2):
            alive.append((st3, not safe_ok))
    return dead, alive


def explore_slot(
    engine: SymbolicEngine,
    entry: SymState,
    events_sink: list[SymEvent] | None = None,
) -> list[SlotOutcome]:
    """All in-slot behaviours of one entry state up to its tick successors,
    with channel events collected in firing order."""
    slot = entry.clock + 1
    outcomes: list[SlotOutcome] = []
    dead, alive = _entry_split(engine, entry)
    for st in dead:
        if events_sink is not None:
            events_sink.append(SymEvent(slot, "dead", None, None, st))
        outcomes.append(SlotOutcome((), None, False, True))
    for st0, unsafe in alive:
        if unsafe and events_sink is not None:
            events_sink.append(SymEvent(slot, "unsafe", None, None, st0))
        frontier = [(st0, ())]
        visited: set[tuple] = set()
        while frontier:
            st, events = frontier.pop()
            key = (st.key(), events)
            if key in visited:
                continue
            visited.add(key)
            if len(visited) > engine.state_cap:
                raise StateCapError(len(visited))
            for rule, kind, name, value, src, nxt in engine.sym_system_steps(st):
                if kind == "split":
                    for child in nxt:
                        frontier.append((child, events))
                    continue
                if kind == "tick":
                    outcomes.append(SlotOutcome(events, nxt, unsafe, False))
                elif kind == "out":
                    vkey = _value_key(value, src)
                    ev = events + (("out", name, vkey),)
                    if events_sink is not None:
                        events_sink.append(SymEvent(slot, "out", name, value, src))
                    if len(ev) > 32:
                        raise StateCapError(len(ev))
                    frontier.append((nxt, ev))
                else:
                    if events_sink is not None and rule in (
                        "ActWriteSec",
                        "ActWriteUnsec",
                        "HActWrite",
                    ):
                        events_sink.append(SymEvent(slot, "devwrite", name, value, src))
                    frontier.append((nxt, events))
    return outcomes


def _value_key(value, st: SymState):
    if isinstance(value, SymValue):
        if value.is_constant():
            return round(value.const, 9)
        iv = value.range_over(st.ranges)
        return (round(iv.lo, 9), round(iv.hi, 9))
    return value


def _merge_layer(states: list[SymState]) -> list[SymState]:
    merged, _ = _merge_layer_mapped(states)
    return merged


def _merge_layer_mapped(
    states: list[SymState],
) -> tuple[list[SymState], dict[tuple, tuple]]:
    """Dedup a layer; states differing only in one variable's interval are
    hulled together when the union is again an interval (exact union).
    Also returns a map from original state keys to merged state keys."""
    by_key: dict[tuple, SymState] = {}
    for st in states:
        by_key.setdefault(st.key(), st)
    items = [(st, {k}) for k, st in by_key.items()]
    merged = True
    while merged:
        merged = False
        out: list[tuple[SymState, set]] = []
        used = [False] * len(items)
        for i in range(len(items)):
            if used[i]:
                continue
            a, srcs = items[i]
            for j in range(i + 1, len(items)):
                if used[j]:
                    continue
                u = _try_union(a, items[j][0])
                if u is not None:
                    a = u
                    srcs = srcs | items[j][1]
                    used[j] = True
                    merged = True
            out.append((a, srcs))
        items = out
    key_map: dict[tuple, tuple] = {}
    for st, srcs in items:
        fk = st.key()
        for s in srcs:
            key_map[s] = fk
    return [st for st, _ in items], key_map


def _try_union(a: SymState, b: SymState) -> SymState | None:
    if a.proc is not b.proc or a.acts != b.acts or a.clock != b.clock:
        return None
    if a.syms != b.syms or a.sym_kinds != b.sym_kinds:
        return None
    diff = None
    for (xa, iva), (_xb, ivb) in zip(a.vars, b.vars):
        if iva != ivb:
            if diff is not None:
                return None
            diff = (xa, iva, ivb)
    if diff is None:
        return a
    x, iva, ivb = diff
    if not iva.touches(ivb):
        return None
    return a.set_var(x, iva.hull(ivb))


@dataclass
class SymReach:
    layers: list[list[SymState]]
    events: list[SymEvent]
    edges: dict[tuple[int, tuple], list[tuple]]
    horizon: int
    approx: list[str]

    def bad_events(self) -> list[SymEvent]:
        return [e for e in self.events if e.kind in ("out", "dead", "unsafe")]

    def bad_slots(self) -> list[int]:
        return sorted({e.slot for e in self.bad_events()})

    def events_of(self, kind: str) -> list[SymEvent]:
        return [e for e in self.events if e.kind == kind]

    def csv_rows(self) -> list[tuple]:
        rows = []
        for depth, layer in enumerate(self.layers):
            for st in layer:
                h = abs(hash((id(st.proc), st.acts))) % 10**10
                for x, iv in st.vars:
                    rows.append((depth + 1, h, x, iv.lo, iv.lo_open, iv.hi, iv.hi_open))
        return rows


def sym_reach(
    config: SystemConfig, horizon: int, state_cap: int = 200_000
) -> SymReach:
    """Layered exact reachability up to ``horizon`` ticks."""
    approx: list[str] = []
    engine = SymbolicEngine(config, state_cap=state_cap, approx_sink=approx)
    events: list[SymEvent] = []
    edges: dict[tuple[int, tuple], list[tuple]] = {}
    layer = _merge_layer([initial_state(config)])
    layers = [layer]
    for depth in range(horizon):
        nxt: list[SymState] = []
        raw_edges: dict[tuple, list[tuple]] = {}
        for st in layer:
            succs = [
                oc.succ for oc in explore_slot(engine, st, events) if oc.succ is not None
            ]
            raw_edges[st.key()] = [s.key() for s in succs]
            nxt.extend(succs)
        layer, key_map = _merge_layer_mapped(nxt)
        for src, succ_keys in raw_edges.items():
            edges[(depth, src)] = sorted({key_map[k] for k in succ_keys})
        layers.append(layer)
        if sum(len(l) for l in layers) > state_cap:
            raise StateCapError(len(layer))
        if not layer:
            break
    while len(layers) <= horizon:
        layers.append([])
    return SymReach(layers, events, edges, horizon, approx)


# ---------------------------------------------------------------------------
# Constrained walks (profile realisation on the symbolic graph)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotRequirement:
    events: tuple = ()  # expected channel events (kind, name, value_key)
    unsafe: bool = False  # unsafe must be available this slot
    dead: bool = False  # the run dies in this slot


def constrained_walk(
    config: SystemConfig,
    requirements: Sequence[SlotRequirement],
    engine: SymbolicEngine | None = None,
    start: list[SymState] | None = None,
) -> tuple[bool, int | None, list[SymState]]:
    """Follow per-slot requirements; returns (ok, first_failing_slot,
    final frontier).  A dead requirement must terminate the walk."""
    eng = engine or SymbolicEngine(config)
    frontier = start if start is not None else [initial_state(config)]
    for i, req in enumerate(requirements):
        slot = i + 1
        nxt: list[SymState] = []
        died = False
        for st in frontier:
            for oc in explore_slot(eng, st):
                if oc.dead:
                    if req.dead and not req.events:
                        died = True
                    continue
                if req.dead:
                    continue
                if req.unsafe and not oc.unsafe:
                    continue
                if oc.events != req.events:
                    continue
                if oc.succ is not None:
                    nxt.append(oc.succ)
        if req.dead:
            return (died, None if died else slot, [])
        frontier = _merge_layer(nxt)
        if not frontier:
            return (False, slot, [])
    return (True, None, frontier)


def can_exhibit(
    config: SystemConfig, requirements: Sequence[SlotRequirement]
) -> bool:
    """Membership side of weak trace inclusion: does some concrete run of
    ``config`` satisfy the per-slot observable requirements?"""
    ok, _, _ = constrained_walk(config, requirements)
    return ok

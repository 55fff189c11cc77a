"""The toolkit's judgments: weak observable-trace inclusion, its timed
variant with divergence windows, attack tolerance/vulnerability with the
temporary/permanent/lethal/stealthy taxonomy, uncertainty-widening
tolerance, and attack impact via bisection over widenings.

Two decision routes exist.  The interval-exact route runs the symbolic
engine: when the right-hand side is silent (the usual sound case study),
inclusion reduces to bad-event reachability on the left; when the right
side can misbehave (widened systems), the left side's runs are summarised
as (first-unsafe, dead-slot) couplings and matched by constrained walks on
the right.  Outside the supported shapes the exhaustive grid executor
decides inclusion on enumerated profiles, and verdicts are labelled with
the method that produced them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .lts import (
    ExplorationBudget,
    ObservableSet,
    Profile,
    StateCapError,
    enumerate_bounded,
    profiles_included,
    residuals_at,
)
from .model import SystemConfig, compose_attack, widen_uncertainty
from .process import Defs, Term, is_honest
from .symbolic import (
    SlotRequirement,
    SymbolicEngine,
    SymReach,
    UnsupportedModel,
    _entry_split,
    _merge_layer,
    constrained_walk,
    explore_slot,
    initial_state,
    sym_reach,
)

INF_WINDOW = "inf"  # divergence persists to the horizon
UNKNOWN = "unknown"  # horizon too short to classify

RESIDUAL_MARGIN = 5  # slots of lookahead required to trust a finite window


@dataclass
class PreorderResult:
    holds: bool
    method: str  # "interval-exact" | "exhaustive-grid"
    counterexample: tuple | None = None
    m_prime: int | None = None
    n_prime: int | str | None = None  # int | INF_WINDOW | UNKNOWN

    def window(self) -> str:
        if self.holds:
            return "-"
        hi = self.n_prime if isinstance(self.n_prime, str) else str(self.n_prime)
        return f"{self.m_prime}..{hi}"


@dataclass
class ToleranceVerdict:
    tolerant: bool
    method: str
    m_prime: int | None = None
    n_prime: int | str | None = None
    lethal: bool = False
    permanent: bool = False
    stealthy: bool = False

    def __post_init__(self) -> None:
        if self.lethal:
            self.permanent = True

    def csv(self) -> str:
        if self.tolerant:
            return f"Tolerant,,,,,,{self.method}"
        return (
            f"Vulnerable,{self.m_prime},{self.n_prime},"
            f"{str(self.lethal).lower()},{str(self.permanent).lower()},"
            f"{str(self.stealthy).lower()},{self.method}"
        )

    def render(self) -> str:
        if self.tolerant:
            return f"Tolerant ({self.method})"
        tags = [
            t
            for t, on in (
                ("lethal", self.lethal),
                ("permanent", self.permanent),
                ("stealthy", self.stealthy),
            )
            if on
        ]
        extra = f" [{', '.join(tags)}]" if tags else ""
        return f"Vulnerable window {self.m_prime}..{self.n_prime}{extra} ({self.method})"


@dataclass
class ImpactReport:
    kind: str  # "definitive" | "pointwise"
    var: str
    lo: float
    hi: float
    tolerance: float
    at_slot: int | None = None
    exceeded_cap: bool = False
    none_at_slot: bool = False

    @property
    def value(self) -> float:
        return (self.lo + self.hi) / 2


# ---------------------------------------------------------------------------
# Silence and reach caching
# ---------------------------------------------------------------------------


def reach_silent(config: SystemConfig, horizon: int) -> tuple[bool, SymReach]:
    r = sym_reach(config, horizon)
    return (not r.bad_events() and not r.approx), r


def _finite_window(reach: SymReach, horizon: int) -> tuple[int, int | str]:
    bad = reach.bad_slots()
    m = bad[0]
    last = bad[-1]
    if last >= horizon - 1:
        return m, INF_WINDOW
    if horizon - last < RESIDUAL_MARGIN:
        return m, UNKNOWN
    return m, last


# ---------------------------------------------------------------------------
# Left-side run couplings (chanless compositions vs non-silent right sides)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HoldProfile:
    """One family of left-side runs: unsafe first available at slot f (or
    never, f=None), available continuously afterwards, with a dead end at
    slot d (or surviving to the horizon, d=None)."""

    f: int | None
    d: int | None


class ProfileShapeError(Exception):
    """The left side's runs do not fit the (f, d) coupling shape."""


@dataclass
class HoldSummary:
    """Per first-unsafe slot f: which dead slots are reachable while unsafe
    stays available on [f, d-1], and whether such a run survives to the
    horizon.  f = None covers runs with no unsafe availability at all."""

    deads: dict[int | None, set[int]]
    survives: dict[int | None, bool]
    fail_slots: dict[int | None, int | None]  # slot where the hold died out

    def realizes(self, p: HoldProfile) -> bool:
        if p.d is None:
            return self.survives.get(p.f, False)
        return p.d in self.deads.get(p.f, ())

    def profiles(self) -> set[HoldProfile]:
        out: set[HoldProfile] = set()
        for f, ds in self.deads.items():
            for d in ds:
                out.add(HoldProfile(f, d))
        for f, ok in self.survives.items():
            if ok:
                out.add(HoldProfile(f, None))
        return out


def _audit_contiguous(engine: SymbolicEngine, config: SystemConfig, horizon: int) -> None:
    """Verify the left side's unsafe availability is contiguous per run
    (once available it stays available until death or the horizon) and
    channel events are absent altogether."""
    frontier: list[tuple] = [(st, 0) for st in [initial_state(config)]]
    # phase 0 = before unsafe, 1 = unsafe available, 2 = after (must stay clean)
    seen: set[tuple] = set()
    for _slot in range(1, horizon + 1):
        nxt = []
        for st, phase in frontier:
            for oc in engine.cached_outcomes(st):
                if oc.events:
                    raise ProfileShapeError("left side emits channel events")
                if oc.dead:
                    if phase == 2:
                        raise ProfileShapeError("dead after the unsafe window closed")
                    continue
                if oc.unsafe:
                    if phase == 2:
                        raise ProfileShapeError("unsafe window is not contiguous")
                    p2 = 1
                else:
                    p2 = phase if phase == 0 else 2
                if oc.succ is not None:
                    key = (oc.succ.key(), p2)
                    if key not in seen:
                        seen.add(key)
                        nxt.append((oc.succ, p2))
        frontier = nxt


def _hold_summary(
    config: SystemConfig, horizon: int, first_enabled_exactly: bool
) -> HoldSummary:
    """One shared sweep computing, for every candidate first-unsafe slot f,
    the dead-slot set and horizon-survival of runs holding unsafe from f on.

    The prefix layers (before the hold starts) are computed once: with
    ``first_enabled_exactly`` unsafe availability is forbidden before f
    (left-side extraction); otherwise it is unconstrained (right-side
    matching).  Channel events disqualify a run everywhere.
    """
    eng = SymbolicEngine(config)
    deads: dict[int | None, set[int]] = {}
    survives: dict[int | None, bool] = {}
    fail_slots: dict[int | None, int | None] = {}

    # prefix layers: entering slot k+1 after k constrained-silent slots
    prefix: list[list] = [_merge_layer([initial_state(config)])]
    prefix_dead: set[int] = set()
    for slot in range(1, horizon + 1):
        nxt = []
        for st in prefix[-1]:
            for oc in eng.cached_outcomes(st):
                if oc.events:
                    continue
                if oc.dead:
                    prefix_dead.add(slot)
                    continue
                if first_enabled_exactly and oc.unsafe:
                    continue
                if oc.succ is not None:
                    nxt.append(oc.succ)
        prefix.append(_merge_layer(nxt))
        if not prefix[-1]:
            break

    survives[None] = len(prefix) > horizon and bool(prefix[horizon])
    deads[None] = prefix_dead
    fail_slots[None] = None if survives[None] else len(prefix) - 1

    max_f = len(prefix) - 1
    for f in range(1, max_f + 1):
        frontier = prefix[f - 1]
        f_deads: set[int] = set()
        fail: int | None = None
        for slot in range(f, horizon + 1):
            nxt = []
            for st in frontier:
                for oc in eng.cached_outcomes(st):
                    if oc.events:
                        continue
                    if oc.dead:
                        if slot > f:
                            f_deads.add(slot)
                        continue
                    if not oc.unsafe:
                        continue
                    if oc.succ is not None:
                        nxt.append(oc.succ)
            frontier = _merge_layer(nxt)
            if not frontier:
                fail = slot
                break
        deads[f] = f_deads
        survives[f] = bool(frontier)
        fail_slots[f] = fail
    return HoldSummary(deads, survives, fail_slots)


def lhs_hold_profiles(config: SystemConfig, horizon: int) -> set[HoldProfile]:
    """Extract the (f, d) couplings of a chanless left side."""
    eng = SymbolicEngine(config)
    _audit_contiguous(eng, config, horizon)
    return _hold_summary(config, horizon, first_enabled_exactly=True).profiles()


def rhs_summary(config: SystemConfig, horizon: int) -> HoldSummary:
    return _hold_summary(config, horizon, first_enabled_exactly=False)


def _rhs_first_failure(
    summary: HoldSummary, missing: set[HoldProfile]
) -> int | None:
    """Earliest slot at which some unmatched left profile prefix dies."""
    worst: int | None = None
    for p in missing:
        if p.d is not None and summary.realizes(HoldProfile(p.f, None)):
            # the hold itself is fine; only the dead at slot d is missing
            slot = p.d
        else:
            slot = summary.fail_slots.get(p.f)
            if slot is None:
                slot = p.d if p.d is not None else None
        if slot is not None and (worst is None or slot < worst):
            worst = slot
    return worst


# ---------------------------------------------------------------------------
# Trace preorder
# ---------------------------------------------------------------------------


def trace_preorder(
    lhs: SystemConfig,
    rhs: SystemConfig,
    budget: ExplorationBudget,
    force_grid: bool = False,
) -> PreorderResult:
    """Weak observable-trace inclusion up to the horizon.

    Interval-exact when the symbolic engine supports both sides and the
    left side fits a supported shape; exhaustive-grid otherwise (with grid
    verdicts labelled as such).  ``force_grid`` pins the grid route so that
    comparisons across several systems share one discretisation.
    """
    horizon = budget.horizon
    if force_grid:
        return _preorder_grid(lhs, rhs, budget)
    try:
        rhs_ok, rhs_reach = reach_silent(rhs, horizon)
        if rhs_ok:
            lhs_reach = sym_reach(lhs, horizon)
            if lhs_reach.approx:
                raise UnsupportedModel("; ".join(lhs_reach.approx[:1]))
            bad = lhs_reach.bad_slots()
            if not bad:
                return PreorderResult(True, "interval-exact")
            m, n = _finite_window(lhs_reach, horizon)
            ev = next(e for e in lhs_reach.bad_events() if e.slot == m)
            cex = ("tick",) * (m - 1) + ((ev.kind, ev.name),)
            return PreorderResult(False, "interval-exact", cex, m, n)
        if not rhs_reach.approx:
            # exact engines on both sides; the right side can misbehave
            return _preorder_vs_nonsilent(lhs, rhs, horizon)
    except (UnsupportedModel, ProfileShapeError, StateCapError):
        pass
    return _preorder_grid(lhs, rhs, budget)


def _preorder_vs_nonsilent(
    lhs: SystemConfig, rhs: SystemConfig, horizon: int
) -> PreorderResult:
    profiles = lhs_hold_profiles(lhs, horizon)  # raises on unsupported shapes
    summary = rhs_summary(rhs, horizon)
    missing = sorted(
        (p for p in profiles if not summary.realizes(p)),
        key=lambda q: (q.f or 0, q.d if q.d is not None else 10**9),
    )
    if not missing:
        return PreorderResult(True, "interval-exact")
    m = _rhs_first_failure(summary, set(missing))
    witness = missing[0]
    cex = ("hold-profile", witness.f, witness.d)
    # the window end on this route: last slot at which some profile stays
    # unmatchable; divergences that persist to the horizon are permanent
    ends = [p.d if p.d is not None else horizon for p in missing]
    last = max(ends)
    n: int | str
    if last >= horizon - 1:
        n = INF_WINDOW
    elif horizon - last < RESIDUAL_MARGIN:
        n = UNKNOWN
    else:
        n = last
    return PreorderResult(False, "interval-exact", cex, m, n)


def _preorder_grid(
    lhs: SystemConfig, rhs: SystemConfig, budget: ExplorationBudget
) -> PreorderResult:
    left = enumerate_bounded(lhs, budget)
    right = enumerate_bounded(rhs, budget)
    holds, witness, div_slot = profiles_included(left, right)
    if holds:
        return PreorderResult(True, "exhaustive-grid")
    n = _grid_n_prime(lhs, rhs, budget, div_slot)
    cex = _profile_to_trace(witness)
    return PreorderResult(False, "exhaustive-grid", cex, div_slot, n)


def _profile_to_trace(p: Profile | None) -> tuple | None:
    if p is None:
        return None
    out: list[tuple] = []
    for events, unsafe in p.records:
        out.extend(events)
        if unsafe:
            out.append(("unsafe",))
        out.append(("tick",))
    if p.end == ("D",):
        out.append(("dead",))
    return tuple(out)


def _grid_n_prime(
    lhs: SystemConfig,
    rhs: SystemConfig,
    budget: ExplorationBudget,
    m_prime: int | None,
) -> int | str:
    """Least n >= m' such that every lhs residual after n ticks is
    trace-subsumed by some rhs residual at equal depth."""
    horizon = budget.horizon
    start = m_prime if m_prime is not None else 1
    for n in range(start, horizon + 1):
        rem = replace(budget, horizon=horizon - n)
        try:
            lres = residuals_at(lhs, budget, n)
            rres = residuals_at(rhs, budget, n)
        except StateCapError:
            return UNKNOWN
        if not lres:
            n_found = n
            break
        rsets = [enumerate_bounded(r, rem) for r in rres]
        ok = True
        for l in lres:
            lset = enumerate_bounded(l, rem)
            if not any(profiles_included(lset, rs)[0] for rs in rsets):
                ok = False
                break
        if ok:
            n_found = n
            break
    else:
        return INF_WINDOW
    if horizon - n_found < RESIDUAL_MARGIN:
        return UNKNOWN
    return n_found


def timed_preorder(
    lhs: SystemConfig, rhs: SystemConfig, budget: ExplorationBudget
) -> PreorderResult:
    """trace_preorder plus the divergence window (m', n')."""
    return trace_preorder(lhs, rhs, budget)


# ---------------------------------------------------------------------------
# Tolerance / vulnerability
# ---------------------------------------------------------------------------


def check_tolerance(
    m: SystemConfig,
    attack: Term,
    attack_defs: Defs,
    budget: ExplorationBudget,
    alarm_channels: frozenset[str] | None = None,
    force_grid: bool = False,
) -> ToleranceVerdict:
    """Tolerant iff the composition is trace-included in the system alone;
    otherwise vulnerable with the timed window and the attack taxonomy."""
    if not is_honest(m.process, m.defs):
        raise ValueError("the target system must be honest")
    comp = compose_attack(m, attack, attack_defs)
    pre = trace_preorder(comp, m, budget, force_grid=force_grid)
    if pre.holds:
        return ToleranceVerdict(True, pre.method)
    lethal, stealthy = _taxonomy(
        comp, budget, "exhaustive-grid" if force_grid else pre.method, alarm_channels
    )
    permanent = pre.n_prime == INF_WINDOW
    return ToleranceVerdict(
        False, pre.method, pre.m_prime, pre.n_prime, lethal, permanent, stealthy
    )


def _taxonomy(
    comp: SystemConfig,
    budget: ExplorationBudget,
    method: str,
    alarm_channels: frozenset[str] | None,
) -> tuple[bool, bool]:
    """(lethal, stealthy): lethal iff dead is reachable; stealthy iff an
    incorrect physical state is reachable with no alarm output before it."""
    if method == "interval-exact":
        try:
            reach = sym_reach(comp, budget.horizon)
            dead_slots = sorted({e.slot for e in reach.events if e.kind == "dead"})
            lethal = bool(dead_slots)
            bad_slots = sorted(
                {e.slot for e in reach.events if e.kind in ("dead", "unsafe")}
            )
            stealthy = False
            for s in bad_slots:
                reqs = [SlotRequirement() for _ in range(s - 1)]
                reqs.append(SlotRequirement(dead=True))
                if constrained_walk(comp, reqs)[0]:
                    stealthy = True
                    break
                reqs[-1] = SlotRequirement(unsafe=True)
                if constrained_walk(comp, reqs)[0]:
                    stealthy = True
                    break
            return lethal, stealthy
        except (UnsupportedModel, ProfileShapeError, StateCapError):
            pass
    obs = enumerate_bounded(comp, budget)
    lethal = any(p.end == ("D",) for p in obs.profiles)
    stealthy = False
    for p in obs.profiles:
        bad = p.dead_slot()
        u = p.unsafe_slots()
        if u:
            bad = min(u) if bad is None else min(bad, min(u))
        if bad is None:
            continue
        if all(not ev for ev, _ in p.records[: bad - 1]):
            stealthy = True
            break
    return lethal, stealthy


# ---------------------------------------------------------------------------
# Widening bisections
# ---------------------------------------------------------------------------


def xi_tolerance(
    m: SystemConfig,
    var: str,
    horizon: int = 40,
    tol: float = 1e-3,
    cap: float = 50.0,
) -> tuple[float, float]:
    """Bracket of the largest uniform widening of ``var``'s uncertainty
    under which the widened system stays trace-included in the original.
    The original must be sound (silent), so inclusion reduces to silence of
    the widened system."""
    ok, _ = reach_silent(m, horizon)
    if not ok:
        raise ValueError("xi-tolerance needs a sound (silent) system")

    def P(eta: float) -> bool:
        silent, _ = reach_silent(widen_uncertainty(m, {var: eta}), horizon)
        return silent

    return _sup_bracket(P, tol, cap)


def _sup_bracket(P, tol: float, cap: float) -> tuple[float, float]:
    """Bracket sup{x >= 0 : P holds on [0, x]} by doubling + bisection."""
    if not P(0.0):
        return (0.0, 0.0)
    hi = tol * 8
    while P(hi):
        hi *= 2
        if hi > cap:
            return (cap, math.inf)
    lo = 0.0 if hi == tol * 8 else hi / 2
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if P(mid):
            lo = mid
        else:
            hi = mid
    return (lo, hi)


def _inf_bracket(P, tol: float, cap: float) -> tuple[float, float] | None:
    """Bracket inf{x > 0 : P(x)} (P monotone increasing in x)."""
    hi = tol * 8
    while not P(hi):
        hi *= 2
        if hi > cap:
            return None
    lo = 0.0 if hi == tol * 8 else hi / 2
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if P(mid):
            hi = mid
        else:
            lo = mid
    return (lo, hi)


def definitive_impact(
    m: SystemConfig,
    attack: Term,
    attack_defs: Defs,
    var: str,
    horizon: int = 60,
    tol: float = 1e-2,
    cap: float = 50.0,
) -> ImpactReport:
    """Smallest uncertainty widening of the system (in the given variable)
    that trace-dominates the system under attack: bisection on the
    inclusion predicate, which is monotone in the widening."""
    comp = compose_attack(m, attack, attack_defs)
    profiles = lhs_hold_profiles(comp, horizon)

    def P(xi: float) -> bool:
        summary = rhs_summary(widen_uncertainty(m, {var: xi}), horizon)
        return all(summary.realizes(p) for p in profiles)

    bracket = _inf_bracket(P, tol, cap)
    if bracket is None:
        return ImpactReport("definitive", var, cap, math.inf, tol, exceeded_cap=True)
    return ImpactReport("definitive", var, bracket[0], bracket[1], tol)


def pointwise_impact(
    m: SystemConfig,
    attack: Term,
    attack_defs: Defs,
    var: str,
    at_slot: int,
    horizon: int = 60,
    tol: float = 1e-2,
    cap: float = 50.0,
) -> ImpactReport:
    """Smallest widening for which the composition's first divergence from
    the widened system sits exactly at the given slot."""
    comp = compose_attack(m, attack, attack_defs)
    profiles = lhs_hold_profiles(comp, horizon)

    def first_div(xi: float) -> int | None:
        summary = rhs_summary(widen_uncertainty(m, {var: xi}), horizon)
        missing = {p for p in profiles if not summary.realizes(p)}
        if not missing:
            return None
        return _rhs_first_failure(summary, missing)

    def P(xi: float) -> bool:
        d = first_div(xi)
        return d is None or d >= at_slot

    bracket = _inf_bracket(P, tol, cap)
    if bracket is None:
        return ImpactReport(
            "pointwise", var, cap, math.inf, tol, at_slot=at_slot, exceeded_cap=True
        )
    d = first_div(bracket[1])
    if d != at_slot:
        return ImpactReport(
            "pointwise", var, bracket[0], bracket[1], tol, at_slot=at_slot,
            none_at_slot=True,
        )
    return ImpactReport("pointwise", var, bracket[0], bracket[1], tol, at_slot=at_slot)

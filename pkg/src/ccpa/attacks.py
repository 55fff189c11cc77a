"""Attack-class machinery: schedule inference from an attack's own
transitions, the weaker-than ordering, and synthesis of the most powerful
attack of a class.
"""

from __future__ import annotations

from dataclasses import dataclass

from .expr import Num
from .lts import DivergenceError, PStep, process_steps
from .model import Activity, AttackClass, SlotSet
from .process import (
    Definition,
    Defs,
    NIL,
    ReadDev,
    Term,
    WriteDev,
    mk_call,
    mk_choice,
    mk_guarded,
    mk_par,
    mk_tick,
    subst_term,
)


def infer_class(
    attack: Term,
    defs: Defs,
    horizon: int,
    palette: tuple[float, ...] = (0.0, 1.0, -1.0),
) -> AttackClass:
    """Explore the attack in isolation and collect, per malicious activity,
    the set of time slots at which some trace performs it.

    Read binders branch over the finite palette (a value outside it could
    in principle enable a slot the inference misses; see the module notes).
    The result is truncated at the horizon and flagged when the attack can
    still act there.
    """
    schedule: dict[Activity, set[int]] = {}
    truncated = False
    seen: set[tuple[int, int]] = set()
    frontier: list[tuple[Term, int]] = [(attack, 1)]
    while frontier:
        term, slot = frontier.pop()
        key = (id(term), slot)
        if key in seen:
            continue
        seen.add(key)
        if slot > horizon:
            if any(s.kind in ("hread", "hwrite") for s in process_steps(term, defs)):
                truncated = True
            continue
        for s in process_steps(term, defs):
            if s.kind == "hread":
                schedule.setdefault((s.name, "read"), set()).add(slot)
                for v in palette:
                    frontier.append((s.close_with(v), slot))
            elif s.kind == "hwrite":
                schedule.setdefault((s.name, "write"), set()).add(slot)
                frontier.append((s.residual, slot))
            elif s.kind == "tick":
                frontier.append((s.residual, slot + 1))
            elif s.kind in ("out", "recv", "read", "write", "tau", "tau_dev"):
                raise ValueError(
                    f"attack performs a non-malicious action ({s.kind})"
                )
    return AttackClass(
        {a: SlotSet.of(slots) for a, slots in schedule.items()}, truncated
    )


# ---------------------------------------------------------------------------
# Top attacker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttackBundle:
    """A standalone attack term with the definitions it needs."""

    term: Term
    defs: Defs


_counter = [0]


def top_attacker(
    cls: AttackClass, palette: tuple[float, ...] = (1.0, -1.0)
) -> AttackBundle:
    """The most powerful attack of a finite class: the parallel composition,
    over scheduled activities, of single-activity attackers that in every
    scheduled slot nondeterministically either exercise the activity (and
    may repeat it within the slot) or skip ahead.  Malicious writes range
    over the palette; the synthesised recursion is time-unguarded.
    """
    defs: dict[str, Definition] = {}
    parts: list[Term] = []
    _counter[0] += 1
    tag = _counter[0]
    for dev, dirn in cls.activities():
        slots = cls.get((dev, dirn))
        if slots.tail_from is not None:
            raise ValueError("top attacker needs a finite (truncated) class")
        sup = max(slots.finite)
        base = f"_top{tag}_{'r' if dirn == 'read' else 'w'}_{dev}"

        def name(k: int) -> str:
            return f"{base}_{k}"

        for k in range(sup, 0, -1):
            nxt: Term = mk_call(name(k + 1)) if k < sup else NIL
            if slots.contains(k):
                again = mk_call(name(k))
                if dirn == "read":
                    act: Term = mk_guarded(
                        ReadDev(dev, "x", hacked=True), again, nxt
                    )
                else:
                    act = None
                    for v in sorted(palette, reverse=True):
                        g = mk_guarded(WriteDev(dev, Num(v), hacked=True), again, nxt)
                        act = g if act is None else mk_choice(g, act)
                body = mk_choice(act, mk_tick(nxt))
            elif k < sup:
                body = mk_tick(mk_call(name(k + 1)))
            else:
                body = NIL
            defs[name(k)] = Definition(
                name(k), (), body, time_unguarded=True, is_attack=True
            )
        if sup >= 1:
            defs[name(sup + 1)] = Definition(
                name(sup + 1), (), NIL, time_unguarded=True, is_attack=True
            )
        parts.append(mk_call(name(1)))
    if not parts:
        return AttackBundle(NIL, {})
    term = parts[0]
    for p in parts[1:]:
        term = mk_par(term, p)
    return AttackBundle(term, defs)

"""Randomised generators for the soundness-criteria and trace-lifting
harnesses: attack classes, class-respecting attacks, and small hostile
process soups for the preemption audit."""

from __future__ import annotations

import numpy as np

from ccpa.attacks import infer_class, top_attacker
from ccpa.expr import BinOp, Cmp, Name, Num
from ccpa.model import Activity, AttackClass, SlotSet, SystemConfig, weaker
from ccpa.process import (
    NIL,
    ReadDev,
    Term,
    WriteDev,
    mk_guarded,
    mk_ifelse,
    mk_par,
    mk_tick,
)


def random_class(
    rng: np.random.Generator, devices: list[str], max_slot: int = 8
) -> AttackClass:
    schedule: dict[Activity, SlotSet] = {}
    for dev in devices:
        for dirn in ("read", "write"):
            if rng.random() < 0.5:
                continue
            k = int(rng.integers(1, 4))
            slots = {int(s) + 1 for s in rng.choice(max_slot, size=k, replace=False)}
            schedule[(dev, dirn)] = SlotSet.of(slots)
    return AttackClass(schedule)


def weaken(rng: np.random.Generator, cls: AttackClass) -> AttackClass:
    """A random subclass: drop activities and slots."""
    schedule: dict[Activity, SlotSet] = {}
    for act, slots in cls.schedule.items():
        if slots.is_empty() or rng.random() < 0.25:
            continue
        keep = {s for s in slots.finite if rng.random() < 0.75}
        if keep:
            schedule[act] = SlotSet.of(keep)
    return AttackClass(schedule)


def attack_of_class(
    rng: np.random.Generator, cls: AttackClass, palette: tuple[float, ...]
) -> Term:
    """A closed attack term whose class is (pointwise at most) ``cls``:
    per-activity chains of scheduled try-once prefixes with random skips,
    writes drawn from the palette, occasionally guarded by a read binder."""
    parts: list[Term] = []
    for (dev, dirn), slots in sorted(cls.schedule.items()):
        if slots.is_empty():
            continue
        sup = max(slots.finite)
        term: Term = NIL
        for k in range(sup, 0, -1):
            nxt = term
            if slots.contains(k) and rng.random() < 0.85:
                if dirn == "read":
                    body = mk_tick(nxt)
                    if rng.random() < 0.4:
                        # branch on the stolen value
                        c = float(rng.choice(palette))
                        body = mk_ifelse(
                            Cmp(">", Name("x"), Num(c)), mk_tick(nxt), mk_tick(nxt)
                        )
                    term = mk_guarded(ReadDev(dev, "x", hacked=True), body, nxt)
                else:
                    v = Num(float(rng.choice(palette)))
                    term = mk_guarded(
                        WriteDev(dev, v, hacked=True), mk_tick(nxt), nxt
                    )
            else:
                term = mk_tick(nxt) if k < sup or term is not NIL else NIL
        parts.append(term)
    if not parts:
        return NIL
    out = parts[0]
    for p in parts[1:]:
        out = mk_par(out, p)
    return out


def random_hostile_soup(
    rng: np.random.Generator, sensors: list[str], actuators: list[str]
) -> Term:
    """2-4 parallel single-prefix components mixing genuine and malicious
    device accesses, for the preemption audit."""
    comps: list[Term] = []
    devices = [(s, True) for s in sensors] + [(a, False) for a in actuators]
    for _ in range(int(rng.integers(2, 5))):
        dev, is_sensor = devices[int(rng.integers(len(devices)))]
        hacked = bool(rng.random() < 0.5)
        reading = bool(rng.random() < 0.5)
        if reading:
            if not hacked and not is_sensor:
                reading = False  # genuine reads target sensors only
        else:
            if not hacked and is_sensor:
                reading = True
        if reading:
            pfx = ReadDev(dev, "x", hacked=hacked)
        else:
            pfx = WriteDev(dev, Num(float(rng.integers(-2, 3))), hacked=hacked)
        cont = mk_tick(NIL) if rng.random() < 0.5 else NIL
        comps.append(mk_guarded(pfx, cont, NIL))
    out = comps[0]
    for c in comps[1:]:
        out = mk_par(out, c)
    return out


def window_of(verdict) -> tuple[float, float]:
    """(m, n) with infinities for permanent/unknown ends."""
    m = float(verdict.m_prime) if verdict.m_prime is not None else float("inf")
    n = verdict.n_prime
    if isinstance(n, str):
        n = float("inf")
    return m, float(n)

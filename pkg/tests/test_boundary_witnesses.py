"""Boundary behaviours of the case study that pin the exact vulnerability
windows and impact threshold.  Each value is established through two
independent routes: the interval engine and an explicitly scripted run of
the concrete sampled semantics.  The acceptance suite encodes reference
targets that differ at four of these boundaries; these witnesses document
why the derived values are what they are.
"""

from __future__ import annotations

from dataclasses import replace

import pytest

from ccpa import casestudy
from ccpa.lts import ExplorationBudget
from ccpa.model import compose_attack, widen_uncertainty
from ccpa.symbolic import SlotRequirement, can_exhibit, sym_reach

from conftest import ScriptedMode, drive


class TestDosWindowStart:
    """The one-shot actuator attack at m = 9: the steal-slot stress is
    provably 0 (temp after 7 ticks is at most 9.8), so the first unsafe
    slot is 14, one later than the reference target m+4."""

    def test_unsafe_at_13_unreachable(self, engine_model, engine_sys):
        comp = compose_attack(engine_sys, casestudy.build("a_dos", m=9), engine_model.defs)
        reqs = [SlotRequirement() for _ in range(12)] + [SlotRequirement(unsafe=True)]
        assert not can_exhibit(comp, reqs)

    def test_unsafe_at_14_reachable(self, engine_model, engine_sys):
        comp = compose_attack(engine_sys, casestudy.build("a_dos", m=9), engine_model.defs)
        # the check slot lands on 14 as well, so the first unsafe comes with
        # a forced alarm in the same slot
        alarm = ("out", "alarm", 1001.0)
        reqs = [SlotRequirement() for _ in range(13)] + [
            SlotRequirement(events=(alarm,), unsafe=True)
        ]
        assert can_exhibit(comp, reqs)
        r = sym_reach(comp, 16)
        assert min(r.bad_slots()) == 14

    def test_m12_window_starts_at_16(self, engine_model, engine_sys):
        comp = compose_attack(engine_sys, casestudy.build("a_dos", m=12), engine_model.defs)
        r = sym_reach(comp, 20)
        assert min(r.bad_slots()) == 16  # = m + 4

    def test_concrete_witness_for_14(self, engine_model, engine_sys):
        # max heat (+0.4 noise per tick) reaches 11.2 at slot 9; the write
        # is stolen there and stress counts 1..5 over slots 10..14
        comp = compose_attack(engine_sys, casestudy.build("a_dos", m=9), engine_model.defs)
        # midpoint reads suffice: the first sensed value above 10 comes at
        # slot 9 (temp 11.2), exactly when the attack listens
        mode = ScriptedMode({}, {s: 0.4 for s in range(1, 15)})
        log, _ = drive(comp, ExplorationBudget(horizon=15), mode, 15)
        unsafe_slots = [s for s, a, _ in log if a.kind == "unsafe"]
        assert unsafe_slots and min(unsafe_slots) == 14
        rules = {r for _, _, r in log}
        assert "ActWriteUnsec" not in rules  # the command was intercepted


class TestOffsetWindowEnd:
    """The offset attack for n >= 10: a cooling cycle may stop at a
    temperature just above 9.9 and re-trigger with stress pinned at 5,
    extending the unsafe window to n+10 (the reference target says n+7)."""

    def test_interval_windows(self, engine_model, engine_sys):
        for n in (10, 12):
            comp = compose_attack(
                engine_sys, casestudy.build("a_offset", n=n), engine_model.defs
            )
            r = sym_reach(comp, n + 16)
            bad = r.bad_slots()
            assert min(bad) == 14
            assert max(bad) == n + 10, (n, bad)

    def test_n9_window_is_14_to_15(self, engine_model, engine_sys):
        comp = compose_attack(
            engine_sys, casestudy.build("a_offset", n=9), engine_model.defs
        )
        r = sym_reach(comp, 25)
        assert r.bad_slots() == [14, 15]

    def test_concrete_resonance_witness(self, engine_model, engine_sys):
        # slots 1..9 heat +1.4 except one +0.9 step: temp_10 = 12.1 with the
        # attack still masking; slot 10 sensed-offset 10.0 (no trigger);
        # temp_11 = 13.5 triggers; cooling drops 0.6 x4 then 1.0: stop at
        # 10.1; reheat to 11.5; one more forced cycle keeps stress at 5
        # through slot 20.
        comp = compose_attack(
            engine_sys, casestudy.build("a_offset", n=10), engine_model.defs
        )
        noises = {s: 0.4 for s in range(1, 20)}
        noises[9] = -0.1  # temp 12.1 at slot 10
        noises[15] = 0.0  # last cooled drop is -1.0: temp 10.1 at slot 16
        # reads default to the exact value; two slots need steering:
        # slot 10 the attack must read 12.0 (feeding 10.0, no trigger) and
        # the slot-16 check must sense 10.0 (stop, no alarm)
        reads = {10: 12.0, 16: 10.0}
        log, _ = drive(
            comp,
            ExplorationBudget(horizon=21),
            ScriptedMode(reads, noises),
            21,
            prefer_rules=("HSensRead",),
        )
        unsafe_slots = sorted({s for s, a, _ in log if a.kind == "unsafe"})
        assert 20 in unsafe_slots, unsafe_slots
        assert min(unsafe_slots) == 14


class TestImpactThreshold:
    """Trace inclusion of the frozen-sensor composition in the widened
    system holds from a total uncertainty just above 3.95 (two cooled
    ticks dive from 9.9 below zero), far below the reference target 8.9."""

    def test_cold_dive_witness_at_total_4(self, engine_sys):
        wide = widen_uncertainty(engine_sys, {"temp": 3.6})  # total 4.0
        reqs = [SlotRequirement(unsafe=(14 <= s <= 36)) for s in range(1, 37)]
        reqs.append(SlotRequirement(dead=True))
        assert can_exhibit(wide, reqs)

    def test_no_dive_at_total_3_9(self, engine_sys):
        wide = widen_uncertainty(engine_sys, {"temp": 3.5})  # total 3.9
        reqs = [SlotRequirement(unsafe=(14 <= s <= 36)) for s in range(1, 37)]
        reqs.append(SlotRequirement(dead=True))
        assert not can_exhibit(wide, reqs)

    def test_concrete_cold_dive(self, engine_sys):
        # total uncertainty 4.0 (noise bound 4): climb 0 -> 5 -> 9.95, hold
        # at 9.95 (noise -1), then trigger the cooling and dive two cooled
        # ticks of -5 each: 9.95 -> 4.95 -> -0.05, dead
        wide = widen_uncertainty(engine_sys, {"temp": 3.6})
        noises = {1: 4.0, 2: 3.95, 13: -4.0, 14: -4.0}
        noises.update({s: -1.0 for s in range(3, 13)})  # hold at 9.95
        reads = {13: 10.05}  # the only sensed value above 10: the trigger
        log, cur = drive(
            wide, ExplorationBudget(horizon=16), ScriptedMode(reads, noises), 16
        )
        kinds = [a.kind for _, a, _ in log]
        assert "dead" in kinds
        dead_slot = next(s for s, a, _ in log if a.kind == "dead")
        unsafe_slots = {s for s, a, _ in log if a.kind == "unsafe"}
        assert dead_slot == 15
        assert {9, 10, 11, 12, 13, 14} <= unsafe_slots

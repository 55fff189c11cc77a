"""Interval engine: exactness against the concrete executor, soundness of
the abstraction, guard-split bookkeeping and the constrained walks."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from ccpa import casestudy
from ccpa.expr import Cmp, Lit, Name, Num, SymScope, SymValue, branch_on_guard
from ccpa.intervals import Interval, union_all
from ccpa.lts import ExplorationBudget, run_sampled
from ccpa.model import compose_attack, widen_uncertainty
from ccpa.symbolic import (
    SlotRequirement,
    can_exhibit,
    initial_state,
    sym_reach,
)


class TestGuardSplitting:
    def test_partition_on_state_variable(self):
        # guard x > 9.9 over x in [8, 12]: children partition at 9.9
        scope = SymScope({"x": SymValue.of_symbol(("var", "x"))},
                         lambda s: Interval.closed(8.0, 12.0))
        branches = branch_on_guard(Cmp(">", Name("x"), Num(9.9)), scope)
        by_val = {v: conds for v, conds in branches}
        (sym, iv_true) = by_val[True][0]
        (_, iv_false) = by_val[False][0]
        assert iv_true.lo == pytest.approx(9.9) and iv_true.lo_open
        assert iv_false.hi == pytest.approx(9.9) and not iv_false.hi_open
        # no overlap beyond a point, no gap
        assert iv_false.touches(iv_true)
        assert iv_false.intersect(iv_true) is None

    def test_decided_guard_does_not_split(self):
        scope = SymScope({"x": SymValue.of_symbol(("var", "x"))},
                         lambda s: Interval.closed(0.0, 1.0))
        branches = branch_on_guard(Cmp(">", Name("x"), Num(9.9)), scope)
        assert branches == [(False, [])]


class TestEngineReach:
    def test_exact_envelope_matches_extreme_search(self, engine_sys):
        # pre-cooling slots grow linearly; extreme concrete runs attain the
        # symbolic bounds exactly
        r = sym_reach(engine_sys, 7)
        for k in range(1, 8):
            states = r.layers[k]
            hull = union_all([st.var("temp") for st in states])
            assert len(hull) == 1
            assert hull[0].lo == pytest.approx(0.6 * k, abs=1e-9)
            assert hull[0].hi == pytest.approx(1.4 * k, abs=1e-9)

    def test_zero_uncertainty_degenerates_to_points(self, engine_sys):
        env = replace(engine_sys.env, uncertainty={"temp": 0.0, "stress": 0.0})
        cfg = replace(engine_sys, env=env)
        r = sym_reach(cfg, 9)
        for layer in r.layers[:9]:
            for st in layer:
                assert st.var("temp").is_point()

    def test_soundness_against_sampled_runs(self, engine_sys):
        r = sym_reach(engine_sys, 40)
        budget = ExplorationBudget(horizon=40)
        for seed in range(300):
            tr = run_sampled(engine_sys, budget, seed)
            by_depth: dict[int, dict] = {}
            for step in tr.steps:
                if step.action.kind == "tick":
                    by_depth[step.config.clock] = step.config.env.state
            for depth, state in by_depth.items():
                layer = r.layers[depth]
                assert any(
                    all(st.var(x).contains(v) for x, v in state.items())
                    for st in layer
                ), (seed, depth, state)

    def test_extreme_sampled_runs_also_contained(self, engine_sys):
        r = sym_reach(engine_sys, 30)
        budget = ExplorationBudget(horizon=30)
        for seed in range(50):
            tr = run_sampled(engine_sys, budget, seed, extreme=True)
            for step in tr.steps:
                if step.action.kind != "tick":
                    continue
                layer = r.layers[step.config.clock]
                state = step.config.env.state
                assert any(
                    all(st.var(x).contains(v) for x, v in state.items())
                    for st in layer
                )


class TestCanExhibit:
    def test_engine_never_unsafe(self, engine_sys):
        reqs = [SlotRequirement() for _ in range(13)] + [SlotRequirement(unsafe=True)]
        assert not can_exhibit(engine_sys, reqs)

    def test_freeze_unsafe_at_14(self, engine_model, engine_sys):
        comp = compose_attack(
            engine_sys, casestudy.build("a_freeze"), engine_model.defs
        )
        reqs = [SlotRequirement() for _ in range(13)] + [SlotRequirement(unsafe=True)]
        assert can_exhibit(comp, reqs)

    def test_widened_unsafe_at_16(self, engine_sys):
        wide = widen_uncertainty(engine_sys, {"temp": 0.1})  # total 0.5
        reqs = [SlotRequirement() for _ in range(15)] + [SlotRequirement(unsafe=True)]
        assert can_exhibit(wide, reqs)

    def test_freeze_dead_at_37(self, engine_model, engine_sys):
        comp = compose_attack(
            engine_sys, casestudy.build("a_freeze"), engine_model.defs
        )
        reqs = [SlotRequirement(unsafe=(14 <= s <= 36)) for s in range(1, 37)]
        reqs.append(SlotRequirement(dead=True))
        assert can_exhibit(comp, reqs)

    def test_freeze_not_dead_at_36(self, engine_model, engine_sys):
        comp = compose_attack(
            engine_sys, casestudy.build("a_freeze"), engine_model.defs
        )
        reqs = [SlotRequirement() for _ in range(35)] + [SlotRequirement(dead=True)]
        assert not can_exhibit(comp, reqs)


class TestSecuredDevices:
    def test_attacks_cannot_touch_secured_devices(self, engine_model):
        secured = casestudy.engine_system(secured=True)
        for name, params in [
            ("a_dos", {"m": 9}),
            ("a_freeze", {}),
            ("a_offset", {"n": 12}),
        ]:
            comp = compose_attack(
                secured, casestudy.build(name, **params), engine_model.defs
            )
            r = sym_reach(comp, 30)
            assert not r.bad_events(), name

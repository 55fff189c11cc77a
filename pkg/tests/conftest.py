"""Shared fixtures: the bundled engine model, three tiny synthetic plants
for the randomised theorem harnesses, and a scripted-run driver that
executes a planned concrete trace through the sampled semantics."""

from __future__ import annotations

import numpy as np
import pytest

from ccpa import casestudy
from ccpa.intervals import Interval
from ccpa.lang import parse_model
from ccpa.lts import ExplorationBudget, Mode, system_steps
from ccpa.model import SystemConfig

SYNTHETIC_TEXT = """
// Tank: bounded level with a refill valve.
env TankEnv {
  var level = 5 unc 0.5;
  act valve = off;
  sensor lv err 0.25 <- level;
  evolve { level' = level + (if valve == on then 1 else -1) + noise(level); }
  inv level >= 0 && level <= 10;
  safe level <= 9;
}
proc TankCtrl = read lv(x) .
  if x < 3 then { write valve(on) . tick . TankCtrl }
  else { if x > 7 then { write valve(off) . tick . TankCtrl } else tick.TankCtrl }
system TankSys = TankEnv [secured {}] |> TankCtrl

// Pulse: a deterministic counter that beats on a channel every third slot.
env PulseEnv {
  var count = 0 unc 0;
  act mode = off;
  sensor cnt err 0 <- count;
  evolve { count' = if mode == on then min(4, count + 1) else 0; }
  inv count <= 4;
  safe count <= 3;
}
proc Pulser = read cnt(x) .
  if x >= 2 then { beat!1 . write mode(off) . tick . Pulser }
  else { write mode(on) . tick . Pulser }
system PulseSys = PulseEnv [secured {}] |> Pulser

// Duo: a fan-cooled heat variable with a zero-error sensor.
env DuoEnv {
  var heat = 0 unc 0.25;
  act fan = off;
  sensor ht err 0 <- heat;
  evolve { heat' = heat + (if fan == on then -1 else 1) + noise(heat); }
  inv heat >= -2 && heat <= 8;
  safe heat <= 6;
}
proc DuoCtrl = read ht(x) .
  if x > 4 then { write fan(on) . tick . DuoCtrl }
  else { write fan(off) . tick . DuoCtrl }
system DuoSys = DuoEnv [secured {}] |> DuoCtrl
"""


@pytest.fixture(scope="session")
def engine_model():
    return casestudy.load()


@pytest.fixture(scope="session")
def engine_sys(engine_model):
    return casestudy.engine_system()


@pytest.fixture(scope="session")
def synthetic_model():
    return parse_model(SYNTHETIC_TEXT, "<synthetic>")


@pytest.fixture(scope="session")
def synthetic_systems(synthetic_model):
    return {
        name: synthetic_model.system(name)
        for name in ("TankSys", "PulseSys", "DuoSys")
    }


class ScriptedMode(Mode):
    """Resolves sensor reads and tick noises from slot-addressed plans, so
    steps that are constructed but not chosen cannot desynchronise the
    script.  ``reads[slot]`` is the measured value for any sensor read
    resolved in that slot; ``noises[slot]`` the noise of the tick that ends
    it.  Unplanned slots read the interval midpoint and tick with zero
    noise.  The driver keeps ``slot`` current."""

    def __init__(self, reads: dict[int, float], noises: dict[int, float],
                 noise_var: str = "temp"):
        self.reads = dict(reads)
        self.noises = dict(noises)
        self.noise_var = noise_var
        self.slot = 1

    def sensor_values(self, iv: Interval) -> list[float]:
        v = self.reads.get(self.slot)
        if v is not None and iv.contains(v):
            return [v]
        return [(iv.lo + iv.hi) / 2]

    def recv_values(self, chan):
        return [0.0]

    def tick_noises(self, env):
        noise = {x: 0.0 for x in env.var_names}
        v = self.noises.get(self.slot)
        if v is not None:
            noise[self.noise_var] = v
        for x, nv in noise.items():
            if abs(nv) > env.uncertainty[x] + 1e-9:
                raise AssertionError(
                    f"scripted noise {nv} for {x} exceeds bound {env.uncertainty[x]}"
                )
        return [noise]


def drive(
    config: SystemConfig,
    budget: ExplorationBudget,
    mode: Mode,
    slots: int,
    prefer_rules: tuple[str, ...] = (),
):
    """Deterministically walk the sampled semantics: at each point take the
    first step whose rule matches a preference (else the first sorted step),
    recording (slot, action, rule) for every step taken."""
    from ccpa.lts import _step_sort_key

    log = []
    cur = config
    ticks = 0
    guard = 0
    unsafe_slot = -1
    while ticks < slots:
        guard += 1
        if guard > 100 * slots + 1000:
            raise RuntimeError("scripted drive did not advance")
        if hasattr(mode, "slot"):
            mode.slot = cur.slot
        steps = sorted(system_steps(cur, budget, mode), key=_step_sort_key)
        if not steps:
            break
        chosen = None
        unsafe_steps = [s for s in steps if s.action.kind == "unsafe"]
        if unsafe_steps and unsafe_slot != cur.slot:
            chosen = unsafe_steps[0]
            unsafe_slot = cur.slot
        if chosen is None:
            for pref in prefer_rules:
                for st in steps:
                    if st.rule == pref:
                        chosen = st
                        break
                if chosen:
                    break
        if chosen is None:
            non_unsafe = [s for s in steps if s.action.kind != "unsafe"]
            chosen = non_unsafe[0] if non_unsafe else steps[0]
        log.append((cur.slot, chosen.action, chosen.rule))
        if chosen.action.kind == "tick":
            ticks += 1
        if chosen.action.kind == "dead":
            break
        cur = chosen.next
    return log, cur

"""Quantifying attack success chances: the per-slot interception census,
the duration sweep, and the warm-started offset attack's alarm rate."""

import numpy as np

from ccpa.montecarlo import (
    engine_isolation_census,
    engine_offset_alarms,
    plateau_onset,
    wilson,
)

RUNS, HORIZON = 5000, 700
writes, _ = engine_isolation_census(RUNS, HORIZON, seed=1)
rates = writes[:, 1:HORIZON + 1].mean(axis=0)

print(f"post-transient interception rate: {rates[400:].mean():.3f}")
print(f"transient settles around slot:    {plateau_onset(rates)}")

print("\nduration sweep (iterated interception from slot 400):")
for ln in (1, 2, 3, 5, 8, 10):
    rate = writes[:, 400:400 + ln].any(axis=1).mean()
    lo, hi = wilson(int(rate * RUNS), RUNS)
    print(f"  {ln:2d} slots: {rate:.3f}  [{lo:.3f}, {hi:.3f}]")

alarm = engine_offset_alarms(RUNS, 300, 8, 5.0, 100, seed=1)
print(f"\noffset attack (n=8, k=5) alarm rate: {alarm.mean():.3f}")

"""Widening analyses: how much extra uncertainty the engine tolerates
before its behaviour becomes distinguishable, and the smallest widening
that dominates the frozen-sensor attack (its definitive impact)."""

from ccpa import casestudy
from ccpa.verdicts import definitive_impact, xi_tolerance

model = casestudy.load()
sys_cfg = casestudy.engine_system()

lo, hi = xi_tolerance(sys_cfg, "temp", horizon=40)
print(f"uncertainty-widening tolerance of temp: [{lo:.4f}, {hi:.4f}]")

rep = definitive_impact(
    sys_cfg, casestudy.build("a_freeze"), model.defs, "temp", horizon=60
)
print(f"definitive impact of the frozen sensor: [{rep.lo:.3f}, {rep.hi:.3f}]")
print("(what pins the threshold: from just above 9.9, two cooled ticks of")
print(" -(1 + total uncertainty) cross zero once the total exceeds 3.95)")

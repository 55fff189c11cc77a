"""The attack catalog: infer each attack's class, synthesise the most
powerful attack of that class, and decide tolerance / vulnerability with
timed windows and the taxonomy."""

from ccpa import casestudy
from ccpa.attacks import infer_class, top_attacker
from ccpa.lts import ExplorationBudget
from ccpa.process import term_to_str
from ccpa.verdicts import check_tolerance

model = casestudy.load()
sys_cfg = casestudy.engine_system()
budget = ExplorationBudget(horizon=60, palette=model.palette())

for name, params in [
    ("a_dos", {"m": 5}),
    ("a_dos", {"m": 12}),
    ("a_offset", {"n": 9}),
    ("a_freeze", {}),
]:
    attack = casestudy.build(name, **params)
    cls = infer_class(attack, model.defs, 60, model.palette())
    verdict = check_tolerance(sys_cfg, attack, model.defs, budget)
    print(f"{name}{params}")
    print(f"  class:   {cls}")
    print(f"  verdict: {verdict.render()}")

cls = infer_class(casestudy.build("a_dos", m=9), model.defs, 30, model.palette())
top = top_attacker(cls)
print("\nmost powerful attack of", cls)
print(" ", term_to_str(top.term))

secured = casestudy.engine_system(secured=True)
v = check_tolerance(secured, casestudy.build("a_freeze"), model.defs, budget)
print("\nfrozen sensor vs secured devices:", v.render())

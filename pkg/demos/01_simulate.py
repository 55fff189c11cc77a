"""A first walk through the engine case study: parse the bundled model,
run it sampled, and watch the cooling cycle regulate the temperature."""

from ccpa import casestudy
from ccpa.lts import ExplorationBudget, run_sampled

model = casestudy.load()
sys_cfg = casestudy.engine_system()

trace = run_sampled(sys_cfg, ExplorationBudget(horizon=40), seed=42)

print("observable actions:", sorted({a.kind for a in trace.actions}))
print("\nslot temp   stress cool")
for step in trace.steps:
    if step.action.kind == "tick":
        env = step.config.env
        cool = "on" if env.actuators["cool"] < 0 else "off"
        print(f"{step.config.slot:3}  {env.state['temp']:6.2f}  "
              f"{int(env.state['stress'])}     {cool}")

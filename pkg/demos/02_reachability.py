"""Exact interval reachability: prove the engine sound over 200 slots and
recover the cooling-trigger temperature envelopes with their open/closed
endpoints."""

from ccpa import casestudy
from ccpa.intervals import union_all
from ccpa.symbolic import sym_reach

reach = sym_reach(casestudy.engine_system(), 200)

print("bad events (dead/unsafe/output):", reach.bad_slots() or "none")

on = [e for e in reach.events_of("devwrite")
      if e.name == "cool" and e.value.const < 0]
off = [e for e in reach.events_of("devwrite")
       if e.name == "cool" and e.value.const >= 0]

print("temp when cooling turns on :",
      ", ".join(str(iv) for iv in union_all([e.state.var("temp") for e in on])))
print("temp when cooling turns off:",
      ", ".join(str(iv) for iv in union_all([e.state.var("temp") for e in off])))

print("\nreachable states per tick depth (first 15):",
      [len(l) for l in reach.layers[:15]])

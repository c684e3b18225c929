"""Turn a control problem into a stochastic shortest path problem and back."""
import numpy as np

from possearch import gen
from possearch.bellman import value_iterate
from possearch.ssp import from_ssp, solve_ssp, to_ssp

inst = gen.routing_example()
conv = to_ssp(inst)
model = conv.ssp

# the middle state has three actions: idle and its two inputs
v = "x1"
for act in model.actions[model.index[v]]:
    print(f"{v} {act.label:>4}: cost {act.cost:.1f}, next {np.round(act.probs, 3)}")

sol = solve_ssp(model)
p = value_iterate(inst).p
print("SSP values:    ", np.round(sol.J[:-1], 9))
print("control values:", np.round(p, 9))

back, names = from_ssp(model)
print("round trip states:", names)
print("round trip values:", np.round(value_iterate(back).p, 9))

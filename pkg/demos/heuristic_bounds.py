"""Watch the upper and lower bounds close in on the optimum."""
import numpy as np

from possearch import gen
from possearch.bellman import value_iterate
from possearch.heuristics import bound_trajectory, init_heuristics, rate_bound
from possearch.model import Policy

inst = gen.routing_example(k_hat=Policy.idle(3))
p = value_iterate(inst, tol=1e-13).p
pair = init_heuristics(inst)
up, lo = bound_trajectory(inst, pair, 20)

print(" k   upper.x0   lower.x0   gap")
for k in (0, 1, 2, 5, 10, 20):
    u, l = up[k] @ inst.x0, lo[k] @ inst.x0
    print(f"{k:2d}  {u:9.5f}  {l:9.5f}  {u - l:.2e}")
print(f"optimum    {p @ inst.x0:9.5f}")

params = rate_bound(inst, pair)
curve, informative = params.curve(p, 20)
print(f"delta = {params.delta:.4f}, beta = {params.beta:.4f}")
print("steps where the rate bound says something:", np.flatnonzero(informative).tolist())

"""Solve the three-state routing example three ways and compare.

Value iteration, exhaustive policy search and exact evaluation of the
extracted policy should all give the same cost vector.
"""
import numpy as np

from possearch import gen
from possearch.bellman import brute_force_solve, evaluate_policy, value_iterate
from possearch.model import validate

inst = gen.routing_example()
print("checks:", "ok" if validate(inst).ok else validate(inst).failed())

vi = value_iterate(inst)
print(f"value iteration: p = {np.round(vi.p, 6)} after {vi.iterations} steps")
print("greedy policy:", vi.policy.to_list(), "(-1 means idle)")

oracle = brute_force_solve(inst)
print(f"enumeration over {oracle.iterations} policies: p = {np.round(oracle.p, 6)}")

exact = evaluate_policy(inst, vi.policy)
print("cost of the greedy policy:", np.round(exact, 6))
print(f"optimal cost from x0 = {inst.x0.tolist()}: {vi.value(inst.x0):.6f}")

"""Heuristic search on a 25-compound waste-processing plant.

Every compound can be burned at high cost or converted into other compounds
cheaply.  Starting from the all-burn policy, the search only solves the
problem on the compounds it actually needs.
"""
import time

from possearch import gen
from possearch.bellman import value_iterate
from possearch.search import run_search

inst = gen.chemical_plant(7)
start = time.perf_counter()
state = run_search(inst, gamma=1.05)
elapsed = time.perf_counter() - start

print("iter  |S|   upper     lower     next")
for row in state.trace:
    nxt = "" if row.selected_state is None else row.selected_state
    print(f"{row.iteration:4d}  {row.cardinality:3d}  {row.upper_total:8.4f}  {row.lower_total:8.4f}  {nxt}")

opt = value_iterate(inst).value(inst.x0)
print(f"stopped ({state.stop_reason}) after {elapsed * 1e3:.0f} ms with ratio {state.ratio:.4f}")
print(f"certified cost {state.upper_total:.4f}, true optimum {opt:.4f}")
print(f"states in S: {len(state.S)} of {inst.n}")

"""Expand a system whose closed loop can grow mass into a level skeleton.

Raising the middle state's self-transfer to 0.8 lets its idle column carry
mass 1.2, which has no direct SSP reading.  Copies of each state at levels
1..K carry scaled costs, and the value at level k should be k times the
value at level 1 until truncation at K starts to bite.
"""
from possearch import gen
from possearch.errors import NotSubstochastic
from possearch.ssp import check_level_scaling, expand_skeleton, solve_ssp, to_ssp

inst = gen.overloaded_example()
try:
    to_ssp(inst)
except NotSubstochastic as exc:
    print("direct conversion refused:", exc)

skel = expand_skeleton(inst, K_max=16)
_, dist, _ = skel.base_levels[(1, "idle")]
print("idle action of x1 at level 1:")
for (w, lev), p in sorted(dist.items()):
    print(f"  -> x{w}@{lev} with probability {p:.6f}")

J = solve_ssp(skel.ssp).J
idx = skel.ssp.index
for k in (1, 2, 3, 4, 5):
    vals = [J[idx[skel.level_state(v, k)]] for v in range(inst.n)]
    print(f"level {k}: " + ", ".join(f"{x:.6f}" for x in vals))

report = check_level_scaling(skel, max_level=5)
print(f"max relative deviation from linear scaling: {report.max_deviation:.2e}")
print(f"mean and mass residuals: {report.mean_residual:.1e}, {report.mass_residual:.1e}")

"""Bellman operator, value iteration and exact policy evaluation.

For a cost vector ``p`` the Bellman operator is

    T(p) = s + A^T p + sum_i min{r_i + B_i^T p, 0} E_i

where the minimum runs over the entries of the block ``r_i + B_i^T p`` and
zero.  Its least nonnegative fixed point is the optimal cost vector, and a
greedy policy at that fixed point is optimal.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import Infeasible, NoConvergence, TooLarge, UnstablePolicy
from .model import IDLE, TOL, Policy, ProblemInstance, expand_policy, is_stable

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
ENUMERATION_CAP = 10**6


@dataclass(frozen=True, eq=False)
class SolveResult:
    p: np.ndarray
    policy: Policy
    iterations: int
    residual: float

    def value(self, x0) -> float:
        return float(self.p @ np.asarray(x0, dtype=float))

    def to_dict(self) -> dict:
        return {
            "p": self.p.tolist(),
            "policy": self.policy.to_list(),
            "iterations": self.iterations,
            "residual": self.residual,
        }


def reduced_costs(instance: ProblemInstance, p) -> np.ndarray:
    """``r + B^T p``, one entry per input column."""
    return instance.r + instance.B.T @ p


def block_minima(instance: ProblemInstance, q) -> np.ndarray:
    """Per-block ``min{q_i, 0}``; zero for blocks without inputs."""
    z = np.zeros(instance.n)
    nonempty = np.flatnonzero(np.asarray(instance.partition) > 0)
    if nonempty.size:
        z[nonempty] = np.minimum(np.minimum.reduceat(q, instance.offsets[nonempty]), 0.0)
    return z


def bellman_apply(instance: ProblemInstance, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    z = block_minima(instance, reduced_costs(instance, p))
    return instance.s + instance.A.T @ p + instance.E.T @ z


def greedy_choice(instance: ProblemInstance, q, i: int) -> int:
    """Lowest-index minimizing column of block ``i`` if its reduced cost is negative."""
    block = q[instance.block(i)]
    if block.size == 0:
        return IDLE
    j = int(np.argmin(block))
    return j if block[j] < 0 else IDLE


def extract_policy(instance: ProblemInstance, p) -> Policy:
    q = reduced_costs(instance, np.asarray(p, dtype=float))
    return Policy(greedy_choice(instance, q, i) for i in range(instance.n))


def bellman_residual(instance: ProblemInstance, p) -> float:
    p = np.asarray(p, dtype=float)
    return float(np.max(np.abs(bellman_apply(instance, p) - p)))


def value_iterate(
    instance: ProblemInstance,
    p0=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SolveResult:
    """Iterate the Bellman operator until the max-norm change is at most ``tol``.

    Starting from ``p0 = 0`` the iterates increase monotonically to the
    optimal cost.  Raises :class:`NoConvergence` if the iterates blow up or
    the iteration cap is reached, which happens when no policy has finite
    cost.
    """
    p = np.zeros(instance.n) if p0 is None else np.array(p0, dtype=float)
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            new = bellman_apply(instance, p)
        if not np.all(np.isfinite(new)):
            raise NoConvergence(f"iterates diverged after {it} steps; optimal cost is infinite")
        delta = float(np.max(np.abs(new - p)))
        p = new
        if delta <= tol:
            break
    else:
        raise NoConvergence(
            f"no convergence within {max_iter} iterations (last change {delta:.3e}); "
            "optimal cost may be infinite"
        )
    return SolveResult(p, extract_policy(instance, p), it, bellman_residual(instance, p))


def evaluate_policy(instance: ProblemInstance, policy: Policy) -> np.ndarray:
    """Cost vector of a stationary policy: ``(I - (A+BK))^{-T} (s + K^T r)``."""
    _, closed, stage = expand_policy(instance, policy)
    if not is_stable(closed):
        raise UnstablePolicy(f"closed loop of policy {policy.to_list()} is not Schur stable")
    return np.linalg.solve(np.eye(instance.n) - closed.T, stage)


def enumerate_policies(instance: ProblemInstance):
    return (Policy(c) for c in itertools.product(*[[IDLE, *range(mi)] for mi in instance.partition]))


def brute_force_solve(instance: ProblemInstance, cap: int = ENUMERATION_CAP) -> SolveResult:
    """Exhaustive search over all stationary policies.

    Independent of the Bellman operator: every stable policy is evaluated by a
    linear solve and the elementwise minimum is returned together with a
    policy attaining it in every state.
    """
    count = int(np.prod([mi + 1 for mi in instance.partition], dtype=float))
    if count > cap:
        raise TooLarge(f"{count} policies exceed the enumeration cap {cap}")
    policies, costs = [], []
    for policy in enumerate_policies(instance):
        try:
            costs.append(evaluate_policy(instance, policy))
        except UnstablePolicy:
            continue
        policies.append(policy)
    if not costs:
        raise Infeasible("no stabilizing policy exists")
    costs = np.array(costs)
    p = costs.min(axis=0)
    gaps = np.max(np.abs(costs - p), axis=1)
    best = int(np.argmin(gaps))
    if gaps[best] > TOL * (1.0 + float(np.max(p))):
        raise RuntimeError("no single policy attains the elementwise minimal cost")
    return SolveResult(p, policies[best], count, bellman_residual(instance, p))


def check_lp_form(instance: ProblemInstance, p, tol: float = TOL) -> bool:
    """True iff ``p >= 0`` and ``p`` satisfies the Bellman equation with equality."""
    p = np.asarray(p, dtype=float)
    scale = tol * (1.0 + float(np.max(np.abs(p))))
    return bool(np.all(p >= -scale) and bellman_residual(instance, p) <= scale)


def is_lp_feasible(instance: ProblemInstance, p, tol: float = TOL) -> bool:
    """True iff ``p >= 0`` and ``p <= T(p)``, i.e. ``p`` is feasible for the LP."""
    p = np.asarray(p, dtype=float)
    scale = tol * (1.0 + float(np.max(np.abs(p))))
    return bool(np.all(p >= -scale) and np.all(p <= bellman_apply(instance, p) + scale))

"""Heuristic search over a growing set of states.

The search keeps a set ``S`` of states on which the Bellman equation is
solved exactly, while every state outside ``S`` keeps its heuristic value.
Two local problems are solved per iteration:

* the upper one uses the initial stabilizing policy for every block outside
  ``S`` and the upper heuristic as boundary value,
* the lower one lets every block choose its best action and uses the lower
  heuristic as boundary value.

Mass that leaves ``S`` is frozen at the outside state it reaches.  The
state added next maximizes ``(h_upper - h_lower) * (x_upper + x_lower)``
over the outside states, where the ``x`` are the absorbed masses under the
two local policies.  The search stops when ``g_upper.x0 <= gamma g_lower.x0``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .bellman import DEFAULT_MAX_ITER, DEFAULT_TOL, block_minima, reduced_costs
from .errors import DivergentMass, MissingInitialPolicy, NoConvergence
from .heuristics import HeuristicPair, init_heuristics
from .model import IDLE, Policy, ProblemInstance, feedback_matrix, spectral_radius

UPPER = "upper"
LOWER = "lower"
POWER_CAP = 10_000


def _mask(n: int, S) -> np.ndarray:
    if isinstance(S, np.ndarray) and S.dtype == bool:
        return S.copy()
    mask = np.zeros(n, dtype=bool)
    mask[list(S)] = True
    return mask


def local_dynamics(instance: ProblemInstance, S) -> np.ndarray:
    """``A`` with every column outside ``S`` replaced by the unit vector."""
    mask = _mask(instance.n, S)
    A_S = instance.A.copy()
    for i in np.flatnonzero(~mask):
        A_S[:, i] = 0.0
        A_S[i, i] = 1.0
    return A_S


class LocalSolution(NamedTuple):
    g: np.ndarray
    policy: Policy
    iterations: int


def _block_values(instance, q, choice):
    z = np.zeros(instance.n)
    for l, c in choice.items():
        if c != IDLE:
            z[l] = q[instance.offsets[l] + c]
    return z


def _forced_choices(instance, mask, mode, fixed):
    """Blocks whose action is not minimized: the initial policy outside ``S`` in
    upper mode, and certified actions everywhere else."""
    forced = dict(fixed or {})
    if mode == UPPER:
        for l in np.flatnonzero(~mask):
            forced[int(l)] = instance.k_hat[l]
    return forced


def _local_step(instance, mask, boundary, forced, forced_idx, g):
    q = reduced_costs(instance, g)
    z = block_minima(instance, q)
    if forced:
        z[forced_idx] = _block_values(instance, q, forced)[forced_idx]
    new = instance.s + instance.A.T @ g + instance.E.T @ z
    return np.where(mask, new, boundary)


def _local_policy(instance, g, forced) -> Policy:
    q = reduced_costs(instance, g)
    choice = []
    for l in range(instance.n):
        if l in forced:
            choice.append(forced[l])
            continue
        block = q[instance.block(l)]
        j = int(np.argmin(block)) if block.size else IDLE
        choice.append(j if block.size and block[j] < 0 else IDLE)
    return Policy(choice)


def local_solve(
    instance: ProblemInstance,
    S,
    pair: HeuristicPair,
    mode: str = UPPER,
    g0=None,
    fixed: Optional[dict] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> LocalSolution:
    """Solve the Bellman equation on ``S`` with frozen values outside.

    ``g0`` warm-starts the iteration; its outside entries are overwritten with
    the boundary values.  ``fixed`` maps blocks to certified actions that are
    used instead of minimizing.
    """
    if mode not in (UPPER, LOWER):
        raise ValueError(f"mode must be {UPPER!r} or {LOWER!r}")
    if mode == UPPER and instance.k_hat is None:
        raise MissingInitialPolicy("upper local problem needs the initial policy")
    mask = _mask(instance.n, S)
    boundary = np.asarray(pair.h_upper if mode == UPPER else pair.h_lower, dtype=float)
    g = boundary.copy() if g0 is None else np.where(mask, np.asarray(g0, dtype=float), boundary)
    forced = _forced_choices(instance, mask, mode, fixed)
    forced_idx = np.array(sorted(forced), dtype=int)
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            new = _local_step(instance, mask, boundary, forced, forced_idx, g)
        if not np.all(np.isfinite(new)):
            raise NoConvergence(f"{mode} local iteration diverged after {it} steps")
        delta = float(np.max(np.abs(new - g)))
        g = new
        if delta <= tol:
            break
    else:
        raise NoConvergence(f"{mode} local iteration did not converge in {max_iter} steps")
    return LocalSolution(g, _local_policy(instance, g, forced), it)


def local_closed_loop(instance: ProblemInstance, S, policy: Policy) -> np.ndarray:
    """``A_S + B K`` with the input effect kept only on columns inside ``S``."""
    mask = _mask(instance.n, S)
    BK = instance.B @ feedback_matrix(instance, policy)
    BK[:, ~mask] = 0.0
    return local_dynamics(instance, mask) + BK


class Absorption(NamedTuple):
    x: np.ndarray
    divergent: bool


def absorption_limit(instance: ProblemInstance, S, policy: Policy, x0=None) -> Absorption:
    """Limit of ``(A_S + B K)^k x0``: zero on ``S``, absorbed mass outside.

    Uses the absorbing-chain formula ``x_out = x0_out + R (I - Q)^{-1} x0_S``.
    If the block ``Q`` on ``S`` is not stable the limit does not exist; a
    truncated power iterate is returned instead and ``divergent`` is set.
    """
    mask = _mask(instance.n, S)
    x0 = instance.x0 if x0 is None else np.asarray(x0, dtype=float)
    M = local_closed_loop(instance, mask, policy)
    inside, outside = np.flatnonzero(mask), np.flatnonzero(~mask)
    Q = M[np.ix_(inside, inside)]
    if spectral_radius(Q) < 1.0 - 1e-9:
        y = np.linalg.solve(np.eye(inside.size) - Q, x0[inside])
        x = np.zeros(instance.n)
        x[outside] = x0[outside] + M[np.ix_(outside, inside)] @ y
        return Absorption(x, False)
    warnings.warn("absorption limit does not exist; using a truncated iterate", DivergentMass, stacklevel=2)
    x = x0.copy()
    limit = 1e12 * max(1.0, float(np.abs(x0).sum()))
    for _ in range(POWER_CAP):
        nxt = M @ x
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).sum() > limit:
            break
        x = nxt
    return Absorption(x, True)


def select_next(instance: ProblemInstance, S, pair: HeuristicPair, x_up, x_low) -> int:
    mask = _mask(instance.n, S)
    if mask.all():
        raise ValueError("search set already covers every state")
    score = pair.gap * (np.asarray(x_up) + np.asarray(x_low))
    score = np.where(mask, -np.inf, score)
    return int(np.argmax(score))


def fixable_actions(instance: ProblemInstance, S, g_lower, g_upper) -> dict:
    """Actions that are optimal for every cost vector in the box ``[g_lower, g_upper]``.

    Action ``a`` dominates ``b`` when ``(r_a - r_b) + max_g (B_a - B_b)^T g <= 0``
    over the box; the maximum takes the upper corner where the difference is
    positive and the lower corner elsewhere.  Idle counts as an action with
    zero cost and zero column and comes first in the tie order.
    """
    lo = np.asarray(g_lower, dtype=float)
    hi = np.asarray(g_upper, dtype=float)
    states = range(instance.n) if S is None else np.flatnonzero(_mask(instance.n, S))
    out = {}
    for i in states:
        mi = instance.partition[i]
        if mi == 0:
            continue
        cols = instance.B[:, instance.block(i)]
        cols = np.column_stack([np.zeros(instance.n), cols])
        costs = np.concatenate([[0.0], instance.r[instance.block(i)]])
        for a in range(mi + 1):
            diff = cols[:, [a]] - cols
            worst = (costs[a] - costs) + np.clip(diff, 0, None).T @ hi + np.clip(diff, None, 0).T @ lo
            worst[a] = 0.0
            if np.all(worst <= 0.0):
                out[int(i)] = IDLE if a == 0 else a - 1
                break
    return out


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    cardinality: int
    upper_total: float
    lower_total: float
    selected_state: Optional[int]


@dataclass(frozen=True, eq=False)
class Snapshot:
    iteration: int
    in_S: np.ndarray
    g_upper: np.ndarray
    g_lower: np.ndarray


@dataclass(frozen=True, eq=False)
class SearchState:
    S: tuple
    g_upper: np.ndarray
    g_lower: np.ndarray
    policy_upper: Policy
    policy_lower: Policy
    iteration: int
    trace: tuple
    pair: HeuristicPair
    gamma: float
    stop_reason: str
    fixed: dict = field(default_factory=dict)
    divergent: tuple = ()
    snapshots: tuple = ()

    @property
    def upper_total(self) -> float:
        return self.trace[-1].upper_total

    @property
    def lower_total(self) -> float:
        return self.trace[-1].lower_total

    @property
    def ratio(self) -> float:
        return self.upper_total / self.lower_total

    def summary(self) -> dict:
        return {
            "gamma": self.gamma,
            "iterations": self.iteration,
            "stop_reason": self.stop_reason,
            "S": list(self.S),
            "upper_total": self.upper_total,
            "lower_total": self.lower_total,
            "ratio": self.ratio,
            "g_upper": self.g_upper.tolist(),
            "g_lower": self.g_lower.tolist(),
            "policy_upper": self.policy_upper.to_list(),
            "policy_lower": self.policy_lower.to_list(),
            "fixed_actions": {str(k): v for k, v in sorted(self.fixed.items())},
            "divergent_iterations": list(self.divergent),
        }


def run_search(
    instance: ProblemInstance,
    gamma: float = 1.0,
    pair: Optional[HeuristicPair] = None,
    fix_actions: bool = False,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    snapshots: bool = False,
) -> SearchState:
    """Grow ``S`` from the support of ``x0`` until the bounds are within ``gamma``.

    On return ``g_upper.x0 <= gamma * g_lower.x0`` unless ``S`` covers every
    state, in which case both bounds equal the optimal cost up to ``tol``.
    """
    if gamma < 1.0:
        raise ValueError("gamma must be at least 1")
    x0 = instance.x0
    if np.any(x0 < 0) or not np.any(x0 > 0):
        raise ValueError("x0 must be nonnegative and nonzero")
    if instance.k_hat is None:
        raise MissingInitialPolicy("heuristic search needs an initial stabilizing policy")
    pair = init_heuristics(instance) if pair is None else pair
    n = instance.n
    mask = x0 > 0
    g_up = pair.h_upper.copy()
    g_lo = pair.h_lower.copy()
    pol_up = instance.k_hat
    pol_lo = Policy.idle(n)
    trace = [TraceRow(0, int(mask.sum()), float(g_up @ x0), float(g_lo @ x0), None)]
    snaps, divergent, fixed = [], [], {}
    iteration = 0
    stop = "initial"
    while trace[-1].upper_total > gamma * trace[-1].lower_total:
        iteration += 1
        up = local_solve(instance, mask, pair, UPPER, g_up, fixed, tol, max_iter)
        lo = local_solve(instance, mask, pair, LOWER, g_lo, fixed, tol, max_iter)
        g_up, g_lo, pol_up, pol_lo = up.g, lo.g, up.policy, lo.policy
        if fix_actions:
            fixed.update(fixable_actions(instance, mask, g_lo, g_up))
        if snapshots:
            snaps.append(Snapshot(iteration, mask.copy(), g_up.copy(), g_lo.copy()))
        upper_total, lower_total = float(g_up @ x0), float(g_lo @ x0)
        if upper_total <= gamma * lower_total or mask.all():
            stop = "ratio" if upper_total <= gamma * lower_total else "full_space"
            trace.append(TraceRow(iteration, int(mask.sum()), upper_total, lower_total, None))
            break
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DivergentMass)
            x_up = absorption_limit(instance, mask, pol_up)
            x_lo = absorption_limit(instance, mask, pol_lo)
        if x_up.divergent or x_lo.divergent:
            divergent.append(iteration)
        j = select_next(instance, mask, pair, x_up.x, x_lo.x)
        trace.append(TraceRow(iteration, int(mask.sum()), upper_total, lower_total, j))
        mask[j] = True
    return SearchState(
        S=tuple(int(i) for i in np.flatnonzero(mask)),
        g_upper=g_up,
        g_lower=g_lo,
        policy_upper=pol_up,
        policy_lower=pol_lo,
        iteration=iteration,
        trace=tuple(trace),
        pair=pair,
        gamma=float(gamma),
        stop_reason=stop,
        fixed=dict(fixed),
        divergent=tuple(divergent),
        snapshots=tuple(snaps),
    )


def _fmt(v) -> str:
    return repr(float(v))


def write_trace_csv(path, state: SearchState) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "cardinality_S", "upper_total", "lower_total", "selected_state"])
        for row in state.trace:
            sel = "" if row.selected_state is None else row.selected_state
            w.writerow([row.iteration, row.cardinality, _fmt(row.upper_total), _fmt(row.lower_total), sel])


def write_snapshot_csv(path, snap: Snapshot, pair: HeuristicPair, p=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "in_S", "g_upper", "g_lower", "h_upper", "h_lower", "p_optional"])
        for i in range(len(snap.in_S)):
            w.writerow([
                i,
                int(snap.in_S[i]),
                _fmt(snap.g_upper[i]),
                _fmt(snap.g_lower[i]),
                _fmt(pair.h_upper[i]),
                _fmt(pair.h_lower[i]),
                "" if p is None else _fmt(p[i]),
            ])

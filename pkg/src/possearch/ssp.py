"""Stochastic shortest path problems and their correspondence with the
positive control problems.

A control problem with ``E = I`` whose closed loops are all column
substochastic maps to an SSP whose states are the coordinates of ``x`` plus
one absorbing goal.  Each state's actions are "idle" and one action per
input column; the transition of an action is the matching column of
``A + BK``, topped up with goal mass, and its cost is ``s_v + r_a``.

When a column sums to more than one, a finite SSP cannot carry the extra
mass.  :func:`expand_skeleton` replicates each state into levels ``v_k``
whose cost is ``k`` times the base cost, so that a transition to level
``k`` represents ``k`` units of mass, and truncates the levels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .bellman import DEFAULT_MAX_ITER
from .errors import NoConvergence, NotSubstochastic, ZeroCostNonGoal
from .model import TOL, ProblemInstance, check_positivity, check_substochastic

GOAL = "goal"
PROB_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SspAction:
    label: str
    cost: float
    probs: np.ndarray


@dataclass(frozen=True, eq=False)
class SspInstance:
    """Finite SSP: ``actions[v]`` lists the actions of ``states[v]``."""

    states: tuple
    goal: frozenset
    actions: tuple
    initial: Optional[str] = None
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        states = tuple(self.states)
        goal = frozenset(self.goal)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "index", {name: i for i, name in enumerate(states)})
        if len(self.index) != len(states):
            raise ValueError("state names must be unique")
        if not goal or not goal <= set(states):
            raise ValueError("goal must be a non-empty subset of the states")
        if self.initial is not None and self.initial not in self.index:
            raise ValueError(f"unknown initial state {self.initial!r}")
        goal_idx = [self.index[g] for g in goal]
        actions = []
        for v, acts in zip(states, self.actions):
            acts = tuple(acts)
            if not acts:
                raise ValueError(f"state {v!r} has no actions")
            for a in acts:
                p = a.probs
                if p.shape != (len(states),) or np.any(p < -PROB_TOL) or abs(p.sum() - 1.0) > PROB_TOL:
                    raise ValueError(f"transition of ({v!r}, {a.label!r}) is not a probability vector")
                if v in goal and abs(p[goal_idx].sum() - 1.0) > PROB_TOL:
                    raise ValueError(f"goal state {v!r} is not absorbing")
            actions.append(acts)
        if len(actions) != len(states):
            raise ValueError("one action list per state is required")
        object.__setattr__(self, "actions", tuple(actions))

    def cost(self, v: str, label: str) -> float:
        return self._action(v, label).cost

    def transition(self, v: str, label: str) -> np.ndarray:
        return self._action(v, label).probs

    def _action(self, v, label):
        for a in self.actions[self.index[v]]:
            if a.label == label:
                return a
        raise KeyError((v, label))


def _goal_action(n_states: int, goal_index: int) -> SspAction:
    probs = np.zeros(n_states)
    probs[goal_index] = 1.0
    return SspAction("stay", 0.0, probs)


def state_names(n: int) -> list:
    return [f"x{i}" for i in range(n)]


def action_label(j: int) -> str:
    return "idle" if j < 0 else f"u{j}"


def _require_identity_E(instance: ProblemInstance) -> None:
    if not np.array_equal(instance.E, np.eye(instance.n)):
        raise ValueError("SSP construction needs E = I; apply normalize_E first")


def action_columns(instance: ProblemInstance, v: int):
    """``(label, column of A + BK, input cost)`` for every action of state ``v``."""
    out = [(action_label(-1), instance.A[:, v].copy(), 0.0)]
    blk = instance.block(v)
    for j, (col, r) in enumerate(zip(instance.B[:, blk].T, instance.r[blk])):
        out.append((action_label(j), instance.A[:, v] + col, float(r)))
    return out


class SspConversion(NamedTuple):
    ssp: SspInstance
    states: list


def to_ssp(instance: ProblemInstance, tol: float = TOL) -> SspConversion:
    """SSP with one state per coordinate of ``x`` plus the goal ``"goal"``."""
    _require_identity_E(instance)
    pos = check_positivity(instance, tol)
    if not pos.ok:
        raise ValueError(f"closed loop can turn negative: {pos.witness}")
    sub = check_substochastic(instance, tol)
    if not sub.ok:
        bad = np.flatnonzero(sub.worst_sums > 1 + tol).tolist()
        raise NotSubstochastic(f"states {bad} have actions with column sum above one; use expand_skeleton")
    n = instance.n
    names = state_names(n) + [GOAL]
    actions = []
    for v in range(n):
        acts = []
        for label, col, r in action_columns(instance, v):
            probs = np.zeros(n + 1)
            probs[:n] = np.clip(col, 0.0, None)
            probs[n] = max(0.0, 1.0 - probs[:n].sum())
            acts.append(SspAction(label, float(instance.s[v]) + r, probs))
        actions.append(acts)
    actions.append([_goal_action(n + 1, n)])
    support = np.flatnonzero(instance.x0 > 0)
    initial = names[int(support[0])] if support.size else None
    return SspConversion(SspInstance(names, {GOAL}, actions, initial), names[:n])


def from_ssp(ssp: SspInstance) -> tuple:
    """Control problem with ``E = I`` whose optimal cost equals the SSP's.

    Each state's cheapest action (lowest index on ties) becomes the
    autonomous dynamics; every other action becomes one input column holding
    the difference of transitions, with the difference of costs as input
    cost.  Returns the instance and the names of its states.
    """
    keep = [i for i, v in enumerate(ssp.states) if v not in ssp.goal]
    names = [ssp.states[i] for i in keep]
    n = len(keep)
    A = np.zeros((n, n))
    B_cols, r, s, partition = [], [], np.zeros(n), []
    for col, i in enumerate(keep):
        acts = ssp.actions[i]
        costs = [a.cost for a in acts]
        if min(costs) <= 0:
            raise ZeroCostNonGoal(f"state {ssp.states[i]!r} has an action with zero cost")
        base = int(np.argmin(costs))
        base_t = acts[base].probs[keep]
        A[:, col] = base_t
        s[col] = costs[base]
        others = [a for k, a in enumerate(acts) if k != base]
        partition.append(len(others))
        for a in others:
            B_cols.append(a.probs[keep] - base_t)
            r.append(a.cost - costs[base])
    B = np.column_stack(B_cols) if B_cols else np.zeros((n, 0))
    x0 = np.zeros(n)
    if ssp.initial is not None and ssp.initial not in ssp.goal:
        x0[names.index(ssp.initial)] = 1.0
    instance = ProblemInstance(
        partition=tuple(partition), A=A, B=B, E=np.eye(n), s=s, r=np.array(r), x0=x0
    )
    return instance, names


class SspSolution(NamedTuple):
    J: np.ndarray
    policy: tuple
    iterations: int


def _stack(ssp: SspInstance):
    P, C, starts = [], [], []
    for acts in ssp.actions:
        starts.append(len(C))
        for a in acts:
            P.append(a.probs)
            C.append(a.cost)
    return np.array(P), np.array(C), np.array(starts)


def solve_ssp(ssp: SspInstance, tol: float = 1e-10, max_iter: int = DEFAULT_MAX_ITER) -> SspSolution:
    """Value iteration ``J(v) = min_a [C(v,a) + T(v,a) . J]`` with ``J = 0`` on the goal."""
    P, C, starts = _stack(ssp)
    goal = np.array([v in ssp.goal for v in ssp.states])
    J = np.zeros(len(ssp.states))
    for it in range(1, max_iter + 1):
        q = C + P @ J
        new = np.where(goal, 0.0, np.minimum.reduceat(q, starts))
        if not np.all(np.isfinite(new)):
            raise NoConvergence("SSP value iteration diverged")
        delta = float(np.max(np.abs(new - J)))
        J = new
        if delta <= tol:
            break
    else:
        raise NoConvergence(f"SSP value iteration did not converge in {max_iter} steps")
    q = C + P @ J
    policy = []
    for k, acts in enumerate(ssp.actions):
        seg = q[starts[k]:starts[k] + len(acts)]
        policy.append(acts[int(np.argmin(seg))].label)
    return SspSolution(J, tuple(policy), it)


# ---------------------------------------------------------------------------
# skeleton expansion for super-stochastic columns


def level_split(mass: float) -> list:
    """Two-point level distribution ``[(level, weight)]`` with mean ``mass``."""
    lo = math.floor(mass)
    if abs(mass - round(mass)) <= 1e-12:
        return [(int(round(mass)), 1.0)]
    hi = lo + 1
    w_lo = hi - mass
    return [(lo, w_lo), (hi, 1.0 - w_lo)]


@dataclass(frozen=True, eq=False)
class SkeletonSsp:
    ssp: SspInstance
    levels: int
    base_states: list
    base_levels: dict
    clamped: dict
    mean_residual: float
    mass_residual: float

    def level_state(self, v: int, k: int) -> str:
        return f"{self.base_states[v]}@{k}"


def expand_skeleton(instance: ProblemInstance, K_max: int = 16, tol: float = TOL) -> SkeletonSsp:
    """Truncated level expansion of a control problem with ``E = I``.

    For an action whose column ``t`` has mass ``m > 1`` each target ``w``
    receives probability ``t_w / m`` spread over levels ``floor(m)`` and
    ``ceil(m)`` with mean ``m``, so that ``sum_k k t_{w_k} = t_w`` and the
    probabilities sum to one.  Level ``k`` copies scale costs by ``k`` and
    send the mass of level ``l`` targets to level ``k l``.  Targets beyond
    ``K_max`` are clamped to ``K_max``; the clamped probability is recorded.
    Without super-stochastic columns a single level is produced.
    """
    _require_identity_E(instance)
    pos = check_positivity(instance, tol)
    if not pos.ok:
        raise ValueError(f"closed loop can turn negative: {pos.witness}")
    n = instance.n
    base = state_names(n)

    # base-level redefinition: (v, label) -> (cost, {(w, level): prob}, goal prob)
    base_levels = {}
    mean_err = mass_err = 0.0
    any_super = False
    for v in range(n):
        for label, col, r in action_columns(instance, v):
            t = np.clip(col, 0.0, None)
            mass = float(t.sum())
            dist = {}
            if mass <= 1.0 + tol:
                for w in np.flatnonzero(t):
                    dist[(int(w), 1)] = float(t[w])
                goal_p = max(0.0, 1.0 - mass)
            else:
                any_super = True
                split = level_split(mass)
                for w in np.flatnonzero(t):
                    for lev, wt in split:
                        dist[(int(w), lev)] = dist.get((int(w), lev), 0.0) + float(t[w]) / mass * wt
                goal_p = 0.0
            for w in range(n):
                got = sum(lev * p for (ww, lev), p in dist.items() if ww == w)
                mean_err = max(mean_err, abs(got - t[w]))
            mass_err = max(mass_err, abs(sum(dist.values()) + goal_p - 1.0))
            base_levels[(v, label)] = (float(instance.s[v]) + r, dist, goal_p)

    levels = K_max if any_super else 1
    names = [f"{base[v]}@{k}" for k in range(1, levels + 1) for v in range(n)] + [GOAL]
    index = {name: i for i, name in enumerate(names)}
    N = len(names)
    clamped = {}
    actions = []
    for k in range(1, levels + 1):
        for v in range(n):
            acts = []
            for label, _, _ in action_columns(instance, v):
                cost, dist, goal_p = base_levels[(v, label)]
                probs = np.zeros(N)
                lost = 0.0
                for (w, lev), p in dist.items():
                    target = k * lev
                    if target > levels:
                        lost += p
                        target = levels
                    probs[index[f"{base[w]}@{target}"]] += p
                probs[index[GOAL]] += goal_p
                if lost > 0:
                    clamped[(k, v, label)] = lost
                acts.append(SspAction(label, k * cost, probs))
            actions.append(acts)
    actions.append([_goal_action(N, index[GOAL])])
    support = np.flatnonzero(instance.x0 > 0)
    initial = f"{base[int(support[0])]}@1" if support.size else None
    ssp = SspInstance(names, {GOAL}, actions, initial)
    return SkeletonSsp(ssp, levels, base, base_levels, clamped, mean_err, mass_err)


@dataclass(frozen=True)
class ScalingReport:
    max_deviation: float
    per_level: dict
    levels_checked: list
    truncation_mass: float
    mean_residual: float
    mass_residual: float

    def to_dict(self) -> dict:
        return {
            "max_deviation": float(self.max_deviation),
            "per_level": {str(k): float(v) for k, v in sorted(self.per_level.items())},
            "levels_checked": list(self.levels_checked),
            "truncation_mass": self.truncation_mass,
            "mean_residual": float(self.mean_residual),
            "mass_residual": float(self.mass_residual),
        }


def check_level_scaling(skeleton: SkeletonSsp, tol: float = 1e-12, max_level: Optional[int] = None) -> ScalingReport:
    """Compare ``J(v_k)`` with ``k J(v_1)`` on the truncated skeleton.

    Only levels ``k <= K_max / 2`` whose own transitions were not clamped are
    checked; the deviation is relative to ``max(1, k J(v_1))``.
    """
    sol = solve_ssp(skeleton.ssp, tol=tol)
    idx = skeleton.ssp.index
    n = len(skeleton.base_states)
    clamped_levels = {k for (k, _, _) in skeleton.clamped}
    top = skeleton.levels // 2 if skeleton.levels > 1 else 1
    if max_level is not None:
        top = min(top, max_level)
    checked = [k for k in range(1, top + 1) if k not in clamped_levels]
    per_level = {}
    for k in checked:
        dev = 0.0
        for v in range(n):
            j1 = sol.J[idx[skeleton.level_state(v, 1)]]
            jk = sol.J[idx[skeleton.level_state(v, k)]]
            dev = max(dev, abs(jk - k * j1) / max(1.0, k * j1))
        per_level[k] = dev
    return ScalingReport(
        max(per_level.values(), default=0.0),
        per_level,
        checked,
        float(sum(skeleton.clamped.values())),
        skeleton.mean_residual,
        skeleton.mass_residual,
    )


# ---------------------------------------------------------------------------
# JSON file format


def ssp_to_dict(ssp: SspInstance) -> dict:
    actions = {}
    for v, acts in zip(ssp.states, ssp.actions):
        actions[v] = [
            {
                "label": a.label,
                "cost": a.cost,
                "transition": {ssp.states[w]: float(a.probs[w]) for w in np.flatnonzero(a.probs)},
            }
            for a in acts
        ]
    return {
        "states": list(ssp.states),
        "goal": [v for v in ssp.states if v in ssp.goal],
        "initial": ssp.initial,
        "actions": actions,
    }


def ssp_from_dict(d: dict) -> SspInstance:
    states = list(d["states"])
    index = {v: i for i, v in enumerate(states)}
    goal = set(d["goal"])
    records = d.get("actions", {})
    actions = []
    for v in states:
        acts = []
        for rec in records.get(v, []):
            probs = np.zeros(len(states))
            for w, p in rec["transition"].items():
                if w not in index:
                    raise ValueError(f"transition of state {v!r} targets unknown state {w!r}")
                probs[index[w]] += float(p)
            if abs(probs.sum() - 1.0) > PROB_TOL:
                raise ValueError(f"probabilities of ({v!r}, {rec['label']!r}) sum to {probs.sum()!r}")
            acts.append(SspAction(str(rec["label"]), float(rec["cost"]), probs))
        if not acts and v in goal:
            acts.append(SspAction("stay", 0.0, np.eye(len(states))[index[v]]))
        actions.append(acts)
    return SspInstance(states, goal, actions, d.get("initial"))


def dumps_ssp(ssp: SspInstance) -> str:
    return json.dumps(ssp_to_dict(ssp), indent=2) + "\n"


def load_ssp(path) -> SspInstance:
    with open(path) as fh:
        return ssp_from_dict(json.load(fh))

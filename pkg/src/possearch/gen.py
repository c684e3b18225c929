"""Seeded instance generators and the textbook fixtures.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` and is
drawn in a fixed order, so a configuration always yields the same instance
on every platform.

Two input-budget conventions are supported.  With ``budget="A"`` the
budget matrix is ``E = A`` and each input column is ``d - e_i``: actuating
block ``i`` reroutes the mass about to flow into state ``i`` according to
``d``.  With ``budget="identity"`` the budget matrix is ``E = I`` and each
column is ``d - A[:, i]``: actuating block ``i`` replaces the outflow of
state ``i`` by ``d``.  In both cases ``d >= 0`` with ``sum(d) <= 1`` keeps
every closed loop nonnegative, and ``d = 0`` is a disposal action.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .bellman import evaluate_policy, value_iterate
from .model import IDLE, Policy, ProblemInstance, make_instance

COND_LIMIT = 1e10


@dataclass(frozen=True)
class GenConfig:
    n: int
    actions_per_state: Union[int, Sequence[int]] = 2
    density: float = 0.3
    seed: int = 0
    state_cost_range: tuple = (1.0, 2.0)
    disposal_cost_range: tuple = (5.0, 10.0)
    routing_cost_range: tuple = (0.1, 1.0)
    column_mass_range: tuple = (0.5, 0.95)
    stable_open_loop: bool = True
    with_disposal: bool = True
    budget: str = "A"
    x0: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        for name in ("state_cost_range", "disposal_cost_range", "routing_cost_range", "column_mass_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be a positive interval")
        if self.column_mass_range[1] > 1:
            raise ValueError("column_mass_range must stay within (0, 1]")
        if self.budget not in ("A", "identity"):
            raise ValueError("budget must be 'A' or 'identity'")
        if len(self.profile) != self.n or min(self.profile) < 0:
            raise ValueError("actions_per_state must give a nonnegative count per state")

    @property
    def profile(self) -> tuple:
        if isinstance(self.actions_per_state, (int, np.integer)):
            return (int(self.actions_per_state),) * self.n
        return tuple(int(m) for m in self.actions_per_state)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _sparse_mass(rng, n, density, mass):
    """Nonnegative vector with random support (never empty) summing to ``mass``."""
    support = rng.random(n) < density
    if not support.any():
        support[rng.integers(n)] = True
    w = rng.random(n) * support
    w[support] += 1e-3
    return w / w.sum() * mass


def _draw_A(rng, cfg: GenConfig, overload: int) -> np.ndarray:
    n = cfg.n
    for _ in range(1000):
        mask = rng.random((n, n)) < cfg.density
        if cfg.budget == "A":
            np.fill_diagonal(mask, True)
        empty = ~mask.any(axis=0)
        mask[rng.integers(n, size=n)[empty], np.flatnonzero(empty)] = True
        W = rng.random((n, n)) * mask + 1e-3 * mask
        mass = rng.uniform(*cfg.column_mass_range, size=n)
        if not cfg.stable_open_loop:
            mass[overload] = 1.2
        A = W / W.sum(axis=0) * mass
        if cfg.budget != "A" or np.linalg.cond(A) <= COND_LIMIT:
            return A
    raise RuntimeError("could not draw a well-conditioned dynamics matrix")


def random_instance(cfg: GenConfig) -> ProblemInstance:
    rng = _rng(cfg.seed)
    n, profile = cfg.n, cfg.profile
    actuated = [i for i in range(n) if profile[i] > 0]
    overload = actuated[0] if actuated else 0
    A = _draw_A(rng, cfg, overload)
    E = A.copy() if cfg.budget == "A" else np.eye(n)
    cols, r = [], []
    for i in range(n):
        for j in range(profile[i]):
            disposal = cfg.with_disposal and j == 0
            if disposal:
                d = np.zeros(n)
                r.append(rng.uniform(*cfg.disposal_cost_range))
            else:
                d = _sparse_mass(rng, n, cfg.density, rng.uniform(*cfg.column_mass_range))
                r.append(rng.uniform(*cfg.routing_cost_range))
            base = np.eye(n)[:, i] if cfg.budget == "A" else A[:, i]
            cols.append(d - base)
    B = np.column_stack(cols) if cols else np.zeros((n, 0))
    s = rng.uniform(*cfg.state_cost_range, size=n)
    if cfg.x0 is not None:
        x0 = np.asarray(cfg.x0, dtype=float)
    else:
        x0 = np.zeros(n)
        support = rng.choice(n, size=min(2, n), replace=False)
        x0[support] = rng.uniform(0.5, 1.0, size=support.size)
    k_hat = None
    if cfg.with_disposal:
        k_hat = Policy(0 if m > 0 else IDLE for m in profile)
    return ProblemInstance(partition=profile, A=A, B=B, E=E, s=s, r=np.array(r), x0=x0, k_hat=k_hat)


def chemical_plant(seed: int = 7, n: int = 25, **overrides) -> ProblemInstance:
    """Waste-disposal plant: every compound can be burned (first input, costly,
    column ``-e_i``) or converted (second input); the all-burn policy is the
    initial policy and makes the closed loop zero.  Initial waste sits on the
    second and third compounds."""
    if n < 3:
        raise ValueError("the plant needs at least three compounds")
    x0 = np.zeros(n)
    x0[1], x0[2] = 0.7, 0.8
    cfg = dict(n=n, actions_per_state=2, density=0.3, seed=seed, with_disposal=True, budget="A", x0=x0)
    cfg.update(overrides)
    return random_instance(GenConfig(**cfg))


def routing_example(k_hat=None) -> ProblemInstance:
    """Three-state routing example with a two-input middle state.

    The open loop is stable, so ``Policy.idle(3)`` is a valid ``k_hat``.
    """
    A = [[0.4, 0.0, 0.0], [0.0, 0.6, 0.0], [0.4, 0.4, 0.4]]
    B = [[-0.4, 0.3, 0.0, 0.2], [0.4, -0.6, -0.5, 0.2], [0.0, 0.3, 0.0, -0.4]]
    return make_instance(A, B, (1, 2, 1), s=[1.0, 1.0, 1.0], r=[1.0] * 4, x0=[2.0, 0.0, 1.0], k_hat=k_hat)


def overloaded_example(k_hat=None) -> ProblemInstance:
    """The routing example with the middle state's self-transfer raised to 0.8."""
    A = [[0.4, 0.0, 0.0], [0.0, 0.8, 0.0], [0.4, 0.4, 0.4]]
    return routing_example(k_hat).replace(A=A)


# ---------------------------------------------------------------------------
# fictitious release valves


class FictitiousInfo(NamedTuple):
    actions: dict
    costs: dict
    bound: float


def valve_columns(instance: ProblemInstance) -> np.ndarray:
    """Column ``i`` is the input that cancels all flow controlled by block ``i``."""
    return -np.linalg.solve(instance.E.T, instance.A.T).T


def add_fictitious_actions(instance: ProblemInstance, region, penalty_factor: float, bound: Optional[float] = None):
    """Add a costly release valve to every block whose flow leaves ``region``.

    Block ``i`` controls the flow ``(A E^{-1})[:, i] E_i^T``; a valve cancels
    it.  When ``region`` covers every state each block gets a valve.  The valve
    costs ``penalty_factor * bound`` per unit of cancelled mass, where
    ``bound`` is an upper bound on the optimal costs (by default the largest
    cost of the initial policy, or of the optimum when there is none), so it
    is never strictly profitable when the bound is valid.
    """
    if penalty_factor <= 1:
        raise ValueError("penalty_factor must exceed 1")
    n = instance.n
    inside = np.zeros(n, dtype=bool)
    inside[list(region)] = True
    V = valve_columns(instance)
    flow = -V
    if inside.all():
        valves = list(range(n))
    else:
        valves = []
        for i in range(n):
            leaves = np.any(np.abs(flow[~inside, i]) > 0) and np.any(instance.E[i, inside] > 0)
            if leaves:
                valves.append(i)
    if bound is None:
        if instance.k_hat is not None:
            bound = float(np.max(evaluate_policy(instance, instance.k_hat)))
        else:
            bound = float(np.max(value_iterate(instance).p))

    cols, r, partition, k_hat, actions, costs = [], [], [], [], {}, {}
    old_k = instance.k_hat
    for i in range(n):
        blk = instance.block(i)
        cols.extend(instance.B[:, blk].T)
        r.extend(instance.r[blk])
        mi = instance.partition[i]
        choice = IDLE if old_k is None else old_k[i]
        if i in valves:
            out_mass = float(np.clip(flow[:, i], 0, None).sum())
            cost = penalty_factor * bound * (out_mass if out_mass > 0 else 1.0)
            cols.append(V[:, i])
            r.append(cost)
            actions[i], costs[i] = mi, cost
            choice = mi
            mi += 1
        partition.append(mi)
        k_hat.append(choice)
    B = np.column_stack(cols) if cols else np.zeros((n, 0))
    augmented = instance.replace(partition=tuple(partition), B=B, r=np.array(r), k_hat=Policy(k_hat))
    return augmented, FictitiousInfo(actions, costs, bound)


def fictitious_used(info: FictitiousInfo, policy: Policy) -> list:
    """States whose policy entry is a fictitious valve."""
    return [i for i, a in sorted(info.actions.items()) if policy[i] == a]

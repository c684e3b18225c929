"""Linear upper and lower bounds on the optimal cost.

An upper bound comes from any stabilizing policy (its exact cost), a lower
bound from the state cost ``s``.  Both improve monotonically under the
Bellman operator when they are consistent.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bellman import bellman_apply, evaluate_policy
from .errors import BetaUndefined, MissingInitialPolicy
from .model import TOL, ProblemInstance


@dataclass(frozen=True, eq=False)
class HeuristicPair:
    h_upper: np.ndarray
    h_lower: np.ndarray

    def __post_init__(self):
        up = np.array(self.h_upper, dtype=float)
        lo = np.array(self.h_lower, dtype=float)
        if up.shape != lo.shape:
            raise ValueError("bounds must have equal length")
        if not (np.all(np.isfinite(up)) and np.all(np.isfinite(lo))):
            raise ValueError("bounds must be finite")
        if np.any(lo < -TOL) or np.any(lo > up + TOL * (1 + np.abs(up))):
            raise ValueError("bounds must satisfy 0 <= h_lower <= h_upper")
        up.setflags(write=False)
        lo.setflags(write=False)
        object.__setattr__(self, "h_upper", up)
        object.__setattr__(self, "h_lower", lo)

    @property
    def gap(self) -> np.ndarray:
        return self.h_upper - self.h_lower


def init_heuristics(instance: ProblemInstance) -> HeuristicPair:
    """Upper bound from the initial stabilizing policy, lower bound ``s``."""
    if instance.k_hat is None:
        raise MissingInitialPolicy("the instance carries no initial stabilizing policy")
    return HeuristicPair(evaluate_policy(instance, instance.k_hat), instance.s.copy())


def _scale(h, tol):
    return tol * (1.0 + float(np.max(np.abs(h))))


def check_consistent_lower(instance: ProblemInstance, h, tol: float = TOL) -> bool:
    h = np.asarray(h, dtype=float)
    return bool(np.all(h <= bellman_apply(instance, h) + _scale(h, tol)))


def check_consistent_upper(instance: ProblemInstance, h, tol: float = TOL) -> bool:
    h = np.asarray(h, dtype=float)
    return bool(np.all(h >= bellman_apply(instance, h) - _scale(h, tol)))


def improve(instance: ProblemInstance, pair: HeuristicPair, k: int = 1) -> HeuristicPair:
    up, lo = pair.h_upper, pair.h_lower
    for _ in range(k):
        up = bellman_apply(instance, up)
        lo = bellman_apply(instance, lo)
    return HeuristicPair(up, lo)


def bound_trajectory(instance: ProblemInstance, pair: HeuristicPair, k: int):
    """Arrays of shape ``(k + 1, n)`` holding the upper and lower iterates."""
    up = [np.asarray(pair.h_upper, dtype=float)]
    lo = [np.asarray(pair.h_lower, dtype=float)]
    for _ in range(k):
        up.append(bellman_apply(instance, up[-1]))
        lo.append(bellman_apply(instance, lo[-1]))
    return np.array(up), np.array(lo)


def write_bounds_csv(path, upper: np.ndarray, lower: np.ndarray) -> None:
    n = upper.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + [f"h_upper_{i}" for i in range(n)] + [f"h_lower_{i}" for i in range(n)])
        for k, (u, l) in enumerate(zip(upper, lower)):
            w.writerow([k] + [repr(float(v)) for v in u] + [repr(float(v)) for v in l])


@dataclass(frozen=True)
class RateBoundParams:
    """``delta`` with ``h_lower >= delta h_upper`` and ``beta`` with
    ``A^T h_upper <= beta s`` and ``B^T h_upper <= beta r``."""

    delta: float
    beta: float

    def factor(self, k):
        """Multiplier of ``p`` in the predicted lower bound after ``k`` steps."""
        k = np.asarray(k, dtype=float)
        with np.errstate(over="ignore", divide="ignore"):
            return 1.0 - (1.0 - self.delta) / (1.0 - 1.0 / self.beta) ** k

    def curve(self, p, kmax: int):
        """Bound vectors for ``k = 0..kmax`` and a mask of informative steps.

        A step is informative when its factor lies in ``[0, 1]``; otherwise
        the bound says nothing.
        """
        f = self.factor(np.arange(kmax + 1))
        informative = (f >= 0.0) & (f <= 1.0)
        return np.outer(f, np.asarray(p, dtype=float)), informative


def rate_bound(instance: ProblemInstance, pair: HeuristicPair, tol: float = TOL) -> RateBoundParams:
    up, lo = pair.h_upper, pair.h_lower

    pos = up > 0
    ratios = np.where(pos, lo / np.where(pos, up, 1.0), 1.0)
    delta = float(min(1.0, ratios.min())) if ratios.size else 1.0

    beta = 1.0 + tol
    a_ratio = (instance.A.T @ up) / instance.s
    if a_ratio.size:
        beta = max(beta, float(a_ratio.max()))
    b_side = instance.B.T @ up
    r = instance.r
    undefined = np.flatnonzero((r <= 0) & (b_side > tol))
    if undefined.size:
        raise BetaUndefined(f"inputs {undefined.tolist()} have zero cost but positive B^T h_upper")
    costly = r > 0
    if np.any(costly):
        beta = max(beta, float(np.max(b_side[costly] / r[costly])))
    return RateBoundParams(delta, beta)

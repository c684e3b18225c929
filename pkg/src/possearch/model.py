"""Problem data for positive linear systems with linear cost.

A problem instance describes the dynamics ``x(t+1) = A x(t) + B u(t)`` with
running cost ``s.x + r.u`` and per-state input budgets
``sum(u_i) <= E_i . x``, ``u >= 0``.  The inputs are partitioned into one
block per state; block ``i`` has ``partition[i]`` columns (possibly zero).

A :class:`Policy` picks, for every block, either no actuation (``IDLE``) or
full actuation of exactly one column.  Expanding it gives a feedback matrix
``K`` whose block ``i`` carries ``E_i`` in the row of the chosen column.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import BadAction, DimensionError, NonPositiveTransformedCost, SingularE

IDLE = -1
TOL = 1e-9
E_COND_LIMIT = 1e12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Policy:
    """One action per state: ``IDLE`` or a 0-based column index in the block."""

    choice: tuple

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(int(c) for c in self.choice))

    def __len__(self):
        return len(self.choice)

    def __iter__(self):
        return iter(self.choice)

    def __getitem__(self, i):
        return self.choice[i]

    @classmethod
    def idle(cls, n: int) -> "Policy":
        return cls((IDLE,) * n)

    def to_list(self) -> list:
        return list(self.choice)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    partition: tuple
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    s: np.ndarray
    r: np.ndarray
    x0: np.ndarray
    k_hat: Optional[Policy] = None
    offsets: np.ndarray = field(init=False, repr=False, compare=False)
    owner: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        partition = tuple(int(m) for m in self.partition)
        if any(m < 0 for m in partition):
            raise DimensionError("partition entries must be nonnegative")
        n = len(partition)
        if n == 0:
            raise DimensionError("state dimension must be positive")
        m = sum(partition)
        object.__setattr__(self, "partition", partition)
        A = _frozen(self.A)
        B = np.array(self.B, dtype=float)
        if B.size == 0:
            B = np.zeros((n, m))
        B.setflags(write=False)
        for name, arr, shape in (
            ("A", A, (n, n)),
            ("B", B, (n, m)),
            ("E", _frozen(self.E), (n, n)),
            ("s", _frozen(self.s), (n,)),
            ("r", _frozen(self.r).reshape(-1), (m,)),
            ("x0", _frozen(self.x0), (n,)),
        ):
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if self.k_hat is not None:
            k_hat = self.k_hat if isinstance(self.k_hat, Policy) else Policy(self.k_hat)
            check_policy(self, k_hat)
            object.__setattr__(self, "k_hat", k_hat)
        offsets = np.concatenate([[0], np.cumsum(partition)]).astype(int)
        owner = np.repeat(np.arange(n), partition)
        offsets.setflags(write=False)
        owner.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "owner", owner)

    @property
    def n(self) -> int:
        return len(self.partition)

    @property
    def m(self) -> int:
        return int(self.offsets[-1])

    def block(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def replace(self, **changes) -> "ProblemInstance":
        kw = dict(partition=self.partition, A=self.A, B=self.B, E=self.E,
                  s=self.s, r=self.r, x0=self.x0, k_hat=self.k_hat)
        kw.update(changes)
        return ProblemInstance(**kw)


@dataclass(frozen=True, eq=False)
class CostVector:
    """Nonnegative cost vector ``p``; the cost of a state ``x`` is ``p.x``."""

    p: np.ndarray

    def __post_init__(self):
        p = _frozen(self.p)
        if not np.all(np.isfinite(p)) or np.any(p < -TOL):
            raise ValueError("cost vector must be finite and nonnegative")
        object.__setattr__(self, "p", p)

    def value(self, x) -> float:
        return float(self.p @ np.asarray(x, dtype=float))


def check_policy(instance: ProblemInstance, policy: Policy) -> None:
    if len(policy) != instance.n:
        raise BadAction(f"policy has {len(policy)} entries, expected {instance.n}")
    for i, (c, mi) in enumerate(zip(policy, instance.partition)):
        if c != IDLE and not 0 <= c < mi:
            raise BadAction(f"state {i}: action {c} not in IDLE or 0..{mi - 1}")


class ClosedLoop(NamedTuple):
    K: np.ndarray
    closed: np.ndarray
    stage_cost: np.ndarray


def feedback_matrix(instance: ProblemInstance, policy: Policy) -> np.ndarray:
    check_policy(instance, policy)
    K = np.zeros((instance.m, instance.n))
    for i, c in enumerate(policy):
        if c != IDLE:
            K[instance.offsets[i] + c] = instance.E[i]
    return K


def expand_policy(instance: ProblemInstance, policy: Policy) -> ClosedLoop:
    """Feedback matrix, closed-loop matrix ``A + BK`` and stage cost ``s + K^T r``."""
    K = feedback_matrix(instance, policy)
    return ClosedLoop(K, instance.A + instance.B @ K, instance.s + K.T @ instance.r)


def in_feedback_set(instance: ProblemInstance, K: np.ndarray) -> bool:
    """True iff every block of ``K`` is nonnegative with column sums ``E_i`` or zero."""
    if np.any(K < 0):
        return False
    for i in range(instance.n):
        colsum = K[instance.block(i)].sum(axis=0)
        if not (np.array_equal(colsum, instance.E[i]) or not colsum.any()):
            return False
    return True


def spectral_radius(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_stable(M: np.ndarray, tol: float = TOL) -> bool:
    return spectral_radius(M) < 1.0 - tol


# ---------------------------------------------------------------------------
# standing assumptions


class PositivityResult(NamedTuple):
    ok: bool
    worst: np.ndarray
    witness: Optional[tuple]


def check_positivity(instance: ProblemInstance, tol: float = TOL) -> PositivityResult:
    """Elementwise positivity of ``A + BK`` for every ``K`` in the feedback set.

    Each entry ``(p, q)`` is minimized independently over the per-block action
    choices.  On failure the witness is ``(p, q, policy)`` for the most
    negative entry.
    """
    n, E = instance.n, instance.E
    worst = instance.A.copy()
    argmins = np.full((instance.n, n), IDLE)  # per block, best row-wise action
    for i in range(n):
        cols = instance.B[:, instance.block(i)]
        if cols.shape[1] == 0:
            continue
        bmin = cols.min(axis=1)
        argmins[i] = np.where(bmin < 0, cols.argmin(axis=1), IDLE)
        worst = worst + np.outer(np.minimum(bmin, 0.0), E[i])
    ok = bool(np.all(worst >= -tol))
    witness = None
    if not ok:
        p, q = np.unravel_index(int(np.argmin(worst)), worst.shape)
        choice = [int(argmins[i, p]) if E[i, q] > 0 else IDLE for i in range(n)]
        witness = (int(p), int(q), Policy(choice))
    return PositivityResult(ok, worst, witness)


class SubstochasticResult(NamedTuple):
    ok: bool
    worst_sums: np.ndarray


def check_substochastic(instance: ProblemInstance, tol: float = TOL) -> SubstochasticResult:
    """Worst-case column sums of ``A + BK`` over the feedback set are at most one."""
    sums = instance.A.sum(axis=0).copy()
    colmass = instance.B.sum(axis=0)
    for i in range(instance.n):
        block = colmass[instance.block(i)]
        if block.size:
            sums += max(0.0, float(block.max())) * instance.E[i]
    return SubstochasticResult(bool(np.all(sums <= 1.0 + tol)), sums)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    mandatory: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.mandatory)

    def failed(self) -> list:
        return [c.name for c in self.checks if c.mandatory and not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "mandatory": c.mandatory, "detail": c.detail}
                for c in self.checks
            ],
        }


def e_condition(instance: ProblemInstance) -> float:
    with np.errstate(all="ignore"):
        c = float(np.linalg.cond(instance.E))
    return c if np.isfinite(c) else float("inf")


def validate(instance: ProblemInstance, tol: float = TOL) -> ValidationReport:
    checks = [Check("dimensions", True, True, f"n={instance.n}, m={instance.m}")]

    def sign(name, arr, strict=False):
        bad = np.flatnonzero(arr.reshape(-1) <= tol) if strict else np.flatnonzero(arr.reshape(-1) < -tol)
        detail = "" if bad.size == 0 else f"violating entries {bad.tolist()}"
        checks.append(Check(name, bad.size == 0, True, detail))

    sign("s_positive", instance.s, strict=True)
    sign("r_nonnegative", instance.r)
    sign("E_nonnegative", instance.E)
    sign("x0_nonnegative", instance.x0)

    cond = e_condition(instance)
    checks.append(Check("E_invertible", cond <= E_COND_LIMIT, True, f"cond={cond:.3e}"))

    pos = check_positivity(instance, tol)
    detail = ""
    if pos.witness is not None:
        p, q, pol = pos.witness
        detail = f"entry ({p},{q}) reaches {pos.worst[p, q]:.6g} under policy {pol.to_list()}"
    checks.append(Check("closed_loop_positive", pos.ok, True, detail))

    sub = check_substochastic(instance, tol)
    checks.append(Check("closed_loop_substochastic", sub.ok, False,
                        f"max worst column sum {float(sub.worst_sums.max()):.6g}"))

    if instance.k_hat is None:
        checks.append(Check("k_hat_present", False, False, "no initial policy"))
    else:
        checks.append(Check("k_hat_present", True, False))
        rho = spectral_radius(expand_policy(instance, instance.k_hat).closed)
        checks.append(Check("k_hat_stable", rho < 1 - tol, True, f"spectral radius {rho:.6g}"))
    return ValidationReport(tuple(checks))


def normalize_E(instance: ProblemInstance) -> ProblemInstance:
    """Change coordinates to ``xh = E x`` so that the budget matrix becomes ``I``.

    The optimal cost vectors are related by ``ph = E^{-T} p``, so
    ``ph . xh0 == p . x0``.  Policies keep their action indices.
    """
    if np.array_equal(instance.E, np.eye(instance.n)):
        return instance
    if e_condition(instance) > E_COND_LIMIT:
        raise SingularE(f"E is numerically singular (cond {e_condition(instance):.3e})")
    E = instance.E
    Einv = np.linalg.inv(E)
    s_hat = np.linalg.solve(E.T, instance.s)
    if np.any(s_hat <= TOL):
        warnings.warn(
            f"transformed state cost has nonpositive entries {np.flatnonzero(s_hat <= TOL).tolist()}",
            NonPositiveTransformedCost,
            stacklevel=2,
        )
    return instance.replace(
        A=E @ instance.A @ Einv,
        B=E @ instance.B,
        E=np.eye(instance.n),
        s=s_hat,
        x0=E @ instance.x0,
    )


# ---------------------------------------------------------------------------
# JSON file format


def problem_to_dict(instance: ProblemInstance) -> dict:
    d = {
        "n": instance.n,
        "partition": list(instance.partition),
        "A": instance.A.tolist(),
        "B": instance.B.tolist(),
        "E": instance.E.tolist(),
        "s": instance.s.tolist(),
        "r": instance.r.tolist(),
        "x0": instance.x0.tolist(),
    }
    if instance.k_hat is not None:
        d["k_hat"] = instance.k_hat.to_list()
    return d


def problem_from_dict(d: dict) -> ProblemInstance:
    missing = [k for k in ("n", "partition", "A", "B", "E", "s", "r", "x0") if k not in d]
    if missing:
        raise DimensionError(f"problem file is missing keys {missing}")
    if int(d["n"]) != len(d["partition"]):
        raise DimensionError(f"n={d['n']} but partition has {len(d['partition'])} entries")
    k_hat = d.get("k_hat")
    return ProblemInstance(
        partition=d["partition"],
        A=d["A"],
        B=d["B"],
        E=d["E"],
        s=d["s"],
        r=d["r"],
        x0=d["x0"],
        k_hat=None if k_hat is None else Policy(k_hat),
    )


def dumps_problem(instance: ProblemInstance) -> str:
    return json.dumps(problem_to_dict(instance), indent=2) + "\n"


def load_problem(path) -> ProblemInstance:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))


def save_problem(instance: ProblemInstance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_problem(instance))


def make_instance(
    A,
    B,
    partition: Sequence[int],
    s,
    r,
    x0=None,
    E=None,
    k_hat=None,
) -> ProblemInstance:
    """Convenience constructor with ``E = I`` and ``x0 = 0`` defaults."""
    n = len(partition)
    return ProblemInstance(
        partition=tuple(partition),
        A=A,
        B=B,
        E=np.eye(n) if E is None else E,
        s=s,
        r=r,
        x0=np.zeros(n) if x0 is None else x0,
        k_hat=k_hat,
    )

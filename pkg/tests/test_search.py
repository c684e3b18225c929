import warnings

import numpy as np
import pytest

from possearch import gen
from possearch.bellman import brute_force_solve, extract_policy
from possearch.errors import DivergentMass, MissingInitialPolicy
from possearch.heuristics import HeuristicPair, improve, init_heuristics
from possearch.model import IDLE, Policy, make_instance
from possearch.search import (
    LOWER,
    UPPER,
    absorption_limit,
    fixable_actions,
    local_closed_loop,
    local_dynamics,
    local_solve,
    run_search,
    select_next,
    write_snapshot_csv,
    write_trace_csv,
)

from instances import disposal_instance


def chain():
    A = [[0.5, 0.0], [0.5, 0.3]]
    return make_instance(A, np.zeros((2, 0)), (0, 0), s=[1.0, 1.0], r=[], x0=[1.0, 0.0], k_hat=Policy.idle(2))


def test_local_dynamics():
    inst = chain()
    np.testing.assert_array_equal(local_dynamics(inst, [0, 1]), inst.A)
    np.testing.assert_array_equal(local_dynamics(inst, []), np.eye(2))
    np.testing.assert_array_equal(local_dynamics(inst, [0]), [[0.5, 0.0], [0.5, 1.0]])


def test_full_set_upper_solve_is_global_optimum():
    inst = gen.routing_example(Policy.idle(3))
    pair = init_heuristics(inst)
    sol = local_solve(inst, [0, 1, 2], pair, UPPER, tol=1e-13)
    np.testing.assert_allclose(sol.g, brute_force_solve(inst).p, atol=1e-10)


def test_single_state_closed_form():
    inst = chain()
    pair = HeuristicPair([3.0, 5.0], [1.0, 1.0])
    sol = local_solve(inst, [0], pair, UPPER, tol=1e-14)
    assert sol.g[0] == pytest.approx((1.0 + 0.5 * 5.0) / (1 - 0.5))
    assert sol.g[1] == 5.0


def test_boundary_is_frozen():
    inst = disposal_instance(3)
    pair = init_heuristics(inst)
    S = np.flatnonzero(inst.x0 > 0)
    out = np.setdiff1d(np.arange(inst.n), S)
    up = local_solve(inst, S, pair, UPPER)
    lo = local_solve(inst, S, pair, LOWER)
    np.testing.assert_array_equal(up.g[out], pair.h_upper[out])
    np.testing.assert_array_equal(lo.g[out], pair.h_lower[out])
    assert all(up.policy[i] == inst.k_hat[i] for i in out)


def test_first_iteration_sandwich_on_small_plant():
    inst = gen.chemical_plant(7, n=6)
    p = brute_force_solve(inst).p
    pair = init_heuristics(inst)
    S = np.flatnonzero(inst.x0 > 0)
    up = local_solve(inst, S, pair, UPPER)
    lo = local_solve(inst, S, pair, LOWER)
    assert np.all(lo.g[S] <= p[S] + 1e-9)
    assert np.all(p[S] <= up.g[S] + 1e-9)


def test_upper_mode_requires_policy():
    inst = gen.routing_example()
    pair = HeuristicPair([5.0] * 3, [1.0] * 3)
    with pytest.raises(MissingInitialPolicy):
        local_solve(inst, [0], pair, UPPER)
    with pytest.raises(ValueError):
        local_solve(inst, [0], pair, "sideways")


def test_absorption_chain():
    res = absorption_limit(chain(), [0], Policy.idle(2))
    np.testing.assert_allclose(res.x, [0.0, 1.0], atol=1e-15)
    assert not res.divergent


def test_absorption_full_set_vanishes():
    res = absorption_limit(chain(), [0, 1], Policy.idle(2))
    np.testing.assert_array_equal(res.x, 0.0)


def test_absorption_matches_power_iteration():
    inst = gen.random_instance(gen.GenConfig(n=4, seed=11, budget="identity", with_disposal=False))
    pol = extract_policy(inst, brute_force_solve(inst).p)
    S = [0, 2]
    M = local_closed_loop(inst, S, pol)
    x = inst.x0.copy()
    for _ in range(5000):
        x = M @ x
    np.testing.assert_allclose(absorption_limit(inst, S, pol).x, x, atol=1e-9)


def test_absorption_divergent_flag():
    inst = make_instance([[1.2]], np.zeros((1, 0)), (0,), s=[1.0], r=[], x0=[1.0])
    with pytest.warns(DivergentMass):
        res = absorption_limit(inst, [0], Policy.idle(1))
    assert res.divergent and np.all(np.isfinite(res.x))


def test_select_next_ties_and_single_candidate():
    inst = disposal_instance(0)
    n = inst.n
    flat = HeuristicPair(np.ones(n), np.ones(n))
    assert select_next(inst, [1], flat, np.ones(n), np.ones(n)) == 0
    gap = HeuristicPair(np.full(n, 2.0), np.ones(n))
    mass = np.zeros(n)
    mass[n - 1] = 0.3
    assert select_next(inst, [0], gap, mass, np.zeros(n)) == n - 1
    with pytest.raises(ValueError):
        select_next(inst, range(n), gap, mass, mass)


def test_chemical_plant_first_selection():
    state = run_search(gen.chemical_plant(7), gamma=1.05)
    assert state.trace[1].selected_state == 14


def test_search_routing_example_exact():
    inst = gen.routing_example(Policy.idle(3))
    p = brute_force_solve(inst).p
    state = run_search(inst, gamma=1.0)
    assert state.upper_total == pytest.approx(p @ inst.x0, abs=1e-8)
    np.testing.assert_allclose(state.g_upper[[0, 2]], p[[0, 2]], atol=1e-8)


def test_optimal_initial_policy_certifies_immediately():
    # disposal of everything is optimal when routing is expensive
    inst = gen.random_instance(gen.GenConfig(n=4, seed=5, disposal_cost_range=(0.01, 0.02), routing_cost_range=(5, 6)))
    p = brute_force_solve(inst).p
    np.testing.assert_allclose(p, init_heuristics(inst).h_upper, atol=1e-12)
    state = run_search(inst, gamma=1.0)
    assert state.upper_total <= p @ inst.x0 + 1e-8


def test_loose_gamma_stops_early():
    inst = gen.chemical_plant(7)
    state = run_search(inst, gamma=10.0)
    assert state.iteration <= 1
    assert state.stop_reason in ("initial", "ratio")


@pytest.mark.parametrize("seed", range(8))
def test_trace_is_monotone_and_sandwiches(seed):
    inst = disposal_instance(seed)
    p = brute_force_solve(inst).p
    state = run_search(inst, gamma=1.0)
    ups = [row.upper_total for row in state.trace]
    los = [row.lower_total for row in state.trace]
    assert np.all(np.diff(ups) <= 1e-12) and np.all(np.diff(los) >= -1e-12)
    v = p @ inst.x0
    assert all(lo <= v + 1e-8 <= up + 2e-8 for up, lo in zip(ups, los))


def test_gamma_below_one_rejected():
    with pytest.raises(ValueError):
        run_search(gen.chemical_plant(7), gamma=0.9)


def test_fix_actions_certified_box():
    inst = gen.routing_example()
    p = brute_force_solve(inst).p
    assert fixable_actions(inst, None, p, p) == {i: c for i, c in enumerate(extract_policy(inst, p))
                                                  if inst.partition[i] > 0}
    assert fixable_actions(inst, None, np.zeros(3), np.full(3, 1e6)) == {}


def test_fix_actions_subset_of_optimum():
    inst = gen.routing_example(Policy.idle(3))
    pair = improve(inst, init_heuristics(inst), 2)
    opt = brute_force_solve(inst).policy
    fixed = fixable_actions(inst, None, pair.h_lower, pair.h_upper)
    assert all(opt[i] == a for i, a in fixed.items())


@pytest.mark.parametrize("seed", range(5))
def test_fix_actions_keeps_guarantee(seed):
    inst = disposal_instance(seed)
    p = brute_force_solve(inst).p
    state = run_search(inst, gamma=1.05, fix_actions=True)
    assert state.g_upper @ inst.x0 <= 1.05 * (p @ inst.x0) + 1e-8


def test_csv_outputs(tmp_path):
    inst = gen.chemical_plant(7)
    state = run_search(inst, gamma=1.05, snapshots=True)
    write_trace_csv(tmp_path / "trace.csv", state)
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert rows[0] == "iteration,cardinality_S,upper_total,lower_total,selected_state"
    assert len(rows) == len(state.trace) + 1
    assert len(state.snapshots) == state.iteration
    write_snapshot_csv(tmp_path / "snap.csv", state.snapshots[0], state.pair)
    snap = (tmp_path / "snap.csv").read_text().splitlines()
    assert snap[0] == "state,in_S,g_upper,g_lower,h_upper,h_lower,p_optional"
    assert len(snap) == inst.n + 1


def test_no_divergence_warning_escapes():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_search(disposal_instance(1), gamma=1.0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from possearch import gen
from possearch.bellman import (
    bellman_apply,
    bellman_residual,
    brute_force_solve,
    check_lp_form,
    evaluate_policy,
    extract_policy,
    is_lp_feasible,
    value_iterate,
)
from possearch.errors import Infeasible, NoConvergence, TooLarge, UnstablePolicy
from possearch.model import IDLE, Policy, expand_policy, make_instance

from instances import small_instance

EX1_P = np.array([25 / 9, 80 / 27, 5 / 3])


def scalar(a=0.5, s=1.0):
    return make_instance([[a]], np.zeros((1, 0)), (0,), s=[s], r=[], x0=[1.0])


def test_zero_costs_map_to_state_cost():
    inst = gen.routing_example()
    np.testing.assert_array_equal(bellman_apply(inst, np.zeros(3)), inst.s)


def test_routing_example_closed_form():
    # idle in states 1 and 3 gives p3 = 1/0.6, p1 = (1 + 0.4 p3)/0.6; state 2
    # uses its second input: p2 = 2 + 0.1 p2 + 0.4 p3
    res = value_iterate(gen.routing_example())
    np.testing.assert_allclose(res.p, EX1_P, atol=1e-9)
    assert res.policy == Policy((IDLE, 1, IDLE))


def test_routing_example_fixed_point_against_oracle():
    inst = gen.routing_example()
    p = brute_force_solve(inst).p
    np.testing.assert_allclose(bellman_apply(inst, p), p, atol=1e-9)
    np.testing.assert_allclose(value_iterate(inst).p, p, atol=1e-8)


def test_scalar_geometric_series():
    res = value_iterate(scalar())
    assert res.p[0] == pytest.approx(2.0, abs=1e-9)
    assert evaluate_policy(scalar(), Policy.idle(1))[0] == 2.0


def test_unstable_without_inputs_diverges():
    inst = make_instance(2 * np.eye(2), np.zeros((2, 0)), (0, 0), s=[1, 1], r=[])
    with pytest.raises(NoConvergence):
        value_iterate(inst)
    with pytest.raises(Infeasible):
        brute_force_solve(inst)


def test_warm_start_at_fixed_point():
    inst = gen.routing_example()
    p = brute_force_solve(inst).p
    res = value_iterate(inst, p0=p)
    assert res.iterations == 1
    assert res.residual <= 1e-12


def test_nonnegative_reduced_costs_give_idle():
    assert extract_policy(gen.routing_example(), np.zeros(3)) == Policy.idle(3)


def test_tie_goes_to_lower_index():
    B = np.array([[-1.0, -1.0]])
    inst = make_instance([[0.5]], B, (2,), s=[1.0], r=[0.1, 0.1])
    assert extract_policy(inst, [1.0]) == Policy((0,))


def test_extracted_policy_attains_oracle():
    inst = gen.routing_example()
    p = brute_force_solve(inst).p
    np.testing.assert_allclose(evaluate_policy(inst, extract_policy(inst, p)), p, atol=1e-9)


def test_all_disposal_cost():
    inst = gen.chemical_plant(7)
    stage = expand_policy(inst, inst.k_hat).stage_cost
    np.testing.assert_allclose(evaluate_policy(inst, inst.k_hat), stage, atol=1e-12)


def test_unstable_policy_rejected():
    with pytest.raises(UnstablePolicy):
        evaluate_policy(scalar(a=1.0), Policy.idle(1))


def test_oracle_counts_and_cap():
    inst = gen.routing_example()
    assert brute_force_solve(inst).iterations == 12
    with pytest.raises(TooLarge):
        brute_force_solve(inst, cap=11)


def test_single_policy_oracle():
    res = brute_force_solve(scalar())
    assert res.policy == Policy.idle(1)
    assert res.p[0] == pytest.approx(2.0)


def test_disposal_instances_are_feasible():
    for seed in range(20):
        inst = gen.random_instance(gen.GenConfig(n=4, seed=seed, stable_open_loop=False))
        brute_force_solve(inst)


def test_lp_form():
    inst = gen.routing_example()
    p = brute_force_solve(inst).p
    assert check_lp_form(inst, p)
    assert not check_lp_form(inst, np.zeros(3))
    assert not check_lp_form(inst, inst.s)
    assert is_lp_feasible(inst, inst.s)
    assert not is_lp_feasible(inst, 2 * p)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    a=st.lists(st.floats(0, 10), min_size=5, max_size=5),
    d=st.lists(st.floats(0, 10), min_size=5, max_size=5),
)
def test_operator_is_monotone(seed, a, d):
    inst = small_instance(seed)
    p = np.array(a[: inst.n])
    q = p + np.array(d[: inst.n])
    assert np.all(bellman_apply(inst, p) <= bellman_apply(inst, q) + 1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_iterates_from_zero_increase(seed):
    inst = small_instance(seed)
    p = np.zeros(inst.n)
    for _ in range(30):
        nxt = bellman_apply(inst, p)
        assert np.all(nxt >= p - 1e-12)
        p = nxt
    assert np.all(p <= value_iterate(inst).p + 1e-9)
    assert bellman_residual(inst, value_iterate(inst, tol=1e-12).p) <= 1e-11

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linf_ot.bottleneck import solve_bottleneck
from linf_ot.harness import generate_instance
from linf_ot.measures import Coupling, DiscreteMeasure, build_cost, support_set
from linf_ot.monotonicity import (
    BudgetExceeded,
    NotMonotoneError,
    check_c_cyclical_monotonicity,
    check_inf_cyclical_monotonicity,
    cycle_excess,
    invariance_residual,
    lemma_probability_bound,
    ld_upper_bound_probe,
    rate_functions,
)
from linf_ot.sinkhorn import solve

from oracles import rate_brute, worst_cycle


def _points_cost(xs, ys):
    mu = DiscreteMeasure.uniform(xs)
    nu = DiscreteMeasure.uniform(ys)
    return build_cost(mu, nu).entries


def _random_support(rng, n=5, m=5, size=6):
    c = rng.random((n, m))
    cells = rng.choice(n * m, size=size, replace=False)
    return [(int(k // m), int(k % m)) for k in cells], c


def test_singleton_support_passes():
    c = np.array([[3.0]])
    assert check_inf_cyclical_monotonicity([(0, 0)], c).passed
    assert check_c_cyclical_monotonicity([(0, 0)], c).passed


def test_parallel_pair_passes():
    c = _points_cost([[0, 0], [1, 0]], [[0, 1], [1, 1]])
    cert = check_inf_cyclical_monotonicity([(0, 0), (1, 1)], c, K=2)
    assert cert.passed and cert.witness is None
    assert "length <= 2" in cert.summary()


def test_crossing_pair_fails():
    c = _points_cost([[0, 0], [1, 0]], [[1, 0], [0, 0]])
    cert = check_inf_cyclical_monotonicity([(0, 0), (1, 1)], c, K=2)
    assert not cert.passed
    assert cert.witness.violation == pytest.approx(1.0)
    sq = check_c_cyclical_monotonicity([(0, 0), (1, 1)], c**2, K=2)
    assert not sq.passed
    assert (sq.witness.lhs, sq.witness.rhs) == (2.0, 0.0)


def test_monotone_matching_on_line_is_c_cm():
    xs = np.sort(np.random.default_rng(0).random(6))[:, None]
    ys = np.sort(np.random.default_rng(1).random(6))[:, None]
    c = _points_cost(xs, ys) ** 2
    supp = [(i, i) for i in range(6)]
    assert check_c_cyclical_monotonicity(supp, c, K=6).passed
    assert worst_cycle(supp, c, 6, "sum") <= 1e-12


def test_orthogonal_supports_any_plan_c_cm():
    inst = generate_instance("fig1")
    c = inst.cost().entries ** 2
    full = [(i, j) for i in range(8) for j in range(4)]
    assert check_c_cyclical_monotonicity(full, c, K=3).passed


def test_fig1_drawn_support_is_inf_cm():
    inst = generate_instance("fig1")
    rep = solve(inst.mu, inst.nu, inst.cost(), p=5, eps=1)
    # cells above 5% of the largest mass: the near-deterministic part of the plan
    supp = support_set(rep.coupling, rel_tau=5e-2)
    assert len(supp) == 16
    assert check_inf_cyclical_monotonicity(supp, inst.cost(), K=4).passed


def test_checkers_match_exhaustive_oracle(rng):
    for _ in range(30):
        supp, c = _random_support(rng)
        for mode, check in (("inf", check_inf_cyclical_monotonicity),
                            ("sum", check_c_cyclical_monotonicity)):
            cert = check(supp, c, K=4)
            worst = worst_cycle(supp, c, 4, mode)
            assert cert.passed == (worst <= 1e-9)
            if not cert.passed:
                assert cert.witness.violation == pytest.approx(worst, abs=1e-12)


def test_budget_guard(rng):
    supp, c = _random_support(rng, 8, 8, 30)
    with pytest.raises(BudgetExceeded):
        check_c_cyclical_monotonicity(supp, c, K=4, budget=100)


def test_squaring_flips_c_cm_but_not_inf_cm():
    # stored witness: x = 0, 1 and y = 2, 1 on the line
    c = _points_cost([[0.0], [1.0]], [[2.0], [1.0]])
    supp = [(0, 0), (1, 1)]
    assert check_c_cyclical_monotonicity(supp, c, K=2).passed
    assert not check_c_cyclical_monotonicity(supp, c**2, K=2).passed
    for f in (np.square, lambda t: t + 2, np.exp):
        assert check_inf_cyclical_monotonicity(supp, f(c), K=2).passed == \
            check_inf_cyclical_monotonicity(supp, c, K=2).passed


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_inf_cm_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    supp, c = _random_support(rng, 4, 4, 5)
    base = check_inf_cyclical_monotonicity(supp, c, K=3).passed
    for f in (np.square, lambda t: t + 2, np.exp):
        assert check_inf_cyclical_monotonicity(supp, f(c), K=3).passed == base


def test_invariance_residual_cases():
    mu = DiscreteMeasure.uniform([[0.0], [1.0]])
    nu = DiscreteMeasure.uniform([[0.0], [3.0]])
    c = build_cost(mu, nu).entries
    K = np.exp(-c**2)
    u, v = np.array([0.3, 0.9]), np.array([1.7, 0.2])
    g = u[:, None] * K * v[None, :]
    g /= g.sum()
    cycles = [[(0, 0), (1, 1)], [(0, 1), (1, 0)], [(0, 0), (1, 1), (0, 1)]]
    # the identity holds algebraically for any scaling form, marginals aside
    assert invariance_residual(Coupling(g, mu, nu), c, 2, 1.0, cycles) < 1e-14
    prod = Coupling.product(mu, nu)
    assert invariance_residual(prod, c, 2, 1.0, cycles) > 0.1
    with pytest.raises(ValueError):
        invariance_residual(Coupling(np.diag([0.5, 0.5]), mu, nu), c, 2, 1.0, cycles)


def test_probability_bound_cases(rng):
    mu = DiscreteMeasure(rng.random((4, 2)), rng.dirichlet(np.ones(4)))
    nu = DiscreteMeasure(rng.random((4, 2)), rng.dirichlet(np.ones(4)))
    c = build_cost(mu, nu)
    p, eps = 2.0, 0.05
    rep = solve(mu, nu, c, p=p, eps=eps, tol=1e-12)
    g = rep.coupling
    pb = lemma_probability_bound(g, c, p, eps, 2, 0.0, [[(0, 0)], [(1, 1)]], restrict=True)
    assert pb.bound == 1.0 and pb.holds
    empty = lemma_probability_bound(g, c, p, eps, 2, 1e6, [[(0, 0)], [(1, 1)]], restrict=True)
    assert empty.mass == 0.0 and empty.n_tuples == 0
    tup = ((0, 0), (1, 1))
    delta = cycle_excess(c, p, tup)
    if delta > 0:
        pb = lemma_probability_bound(g, c, p, eps, 2, delta, [[tup[0]], [tup[1]]])
        assert pb.mass <= pb.bound * (1 + 1e-6)
    with pytest.raises(ValueError):
        lemma_probability_bound(g, c, p, eps, 2, abs(delta) + 1.0, [[tup[0]], [tup[1]]])


def test_rate_functions_match_brute_force(rng):
    mu = DiscreteMeasure.uniform(rng.random((4, 2)))
    nu = DiscreteMeasure.uniform(rng.random((4, 2)))
    c = build_cost(mu, nu)
    res = solve_bottleneck(mu, nu, c)
    supp = res.support
    table = rate_functions(supp, c, K=3)
    for (i, j), it, ii in zip(table.queries.tolist(), table.i_tilde, table.i_inf):
        bt, bi = rate_brute(supp, c.entries, i, j, 3)
        assert it == pytest.approx(bt, abs=1e-15)
        assert ii == pytest.approx(bi, abs=1e-15)
    for i, j in supp:
        assert table.value(i, j, "i_inf") == pytest.approx(0.0, abs=1e-12)


def test_rate_functions_two_point_support_hand():
    c = np.array([[1.0, 2.0, 3.0], [2.0, 1.0, 2.0], [2.0, 4.0, 5.0]])
    supp = [(0, 0), (1, 1)]
    for K in (2, 3):
        table = rate_functions(supp, c, K=K)
        for (i, j), it, ii in zip(table.queries.tolist(), table.i_tilde, table.i_inf):
            assert (it, ii) == pytest.approx(rate_brute(supp, c, i, j, K))
    # at (2, 2): chain with (0, 0) gives 5 - max(2, 3), chain with (1, 1) gives 5 - max(4, 2)
    table = rate_functions(supp, c, K=2)
    assert table.value(2, 2) == 2.0
    assert table.value(2, 2, "i_inf") == 2.0


def test_rate_functions_nondecreasing_in_k(rng):
    supp, c = [(0, 0), (1, 1), (2, 2)], rng.random((3, 3))
    np.fill_diagonal(c, 0.0)
    t2 = rate_functions(supp, c, K=2).i_tilde
    t3 = rate_functions(supp, c, K=3).i_tilde
    t4 = rate_functions(supp, c, K=4).i_tilde
    assert np.all(t3 >= t2) and np.all(t4 >= t3)


def test_rate_functions_reject_non_monotone():
    c = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(NotMonotoneError):
        rate_functions([(0, 0), (1, 1)], c, K=2)


def test_rate_table_csv(tmp_path):
    c = np.array([[1.0, 3.0], [2.0, 1.5]])
    table = rate_functions([(0, 0), (1, 1)], c, K=2, provenance={"p": 50})
    table.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "i,j,i_tilde,i_inf,cap" and len(lines) == 5
    assert table.provenance == {"p": 50}


def test_ld_probe():
    # cost >= 1; cell (0, 1) is excluded from every optimal plan
    mu = DiscreteMeasure.uniform([[0.0], [0.1], [0.2], [0.3]])
    nu = DiscreteMeasure.uniform([[0.02], [0.11], [0.23], [0.34]])
    c = build_cost(mu, nu, shift=1.0)
    res = solve_bottleneck(mu, nu, c)
    table = rate_functions(res.support, c, K=3)
    reps = [solve(mu, nu, c, p=p, eps=1.0, tol=1e-9) for p in (4, 8, 12, 16)]
    cell = [(3, 0)]
    probe = ld_upper_bound_probe(reps, cell, table, c)
    assert probe.target < 0
    assert probe.passed
    assert np.all(np.diff(probe.trace) < 0)
    full = [(i, j) for i in range(4) for j in range(4)]
    probe = ld_upper_bound_probe(reps, full, table, c)
    np.testing.assert_allclose(probe.trace, 0.0, atol=1e-8)
    assert probe.passed
    on = ld_upper_bound_probe(reps, [res.support[0]], table, c)
    assert on.target == pytest.approx(0.0, abs=1e-12) and on.passed
    with pytest.raises(ValueError):
        ld_upper_bound_probe(reps, cell, table, build_cost(mu, nu))

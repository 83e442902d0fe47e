"""Acceptance criteria, one test each, every one printing a PASS/FAIL line.

Tolerances are the stated ones, unrelaxed. Criterion 4 is expected
to fail (see the note on that test).
"""
import math
import time

import numpy as np

from linf_ot.blockapprox import block_approximate, exact_winf, verify_entropy_bound, verify_winf_bound
from linf_ot.bottleneck import permutation_brute_force, solve_bottleneck
from linf_ot.harness import default_p_list, generate_instance, sweep
from linf_ot.measures import Coupling, DiscreteMeasure, build_cost, support_set
from linf_ot.monotonicity import (
    check_c_cyclical_monotonicity,
    check_inf_cyclical_monotonicity,
    cycle_excess,
    lemma_probability_bound,
    rate_functions,
)
from linf_ot.sinkhorn import EpsSchedule, degenerate_schedule_demo, solve

from oracles import rate_brute


def _nw_corner(a, b):
    a, b = list(a), list(b)
    g = np.zeros((len(a), len(b)))
    i = j = 0
    while i < len(a) and j < len(b):
        m = min(a[i], b[j])
        g[i, j] = m
        a[i] -= m
        b[j] -= m
        if a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return g


def test_criterion_1_oracle_agreement(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    mismatches = 0
    n_inst = 0
    for n in range(2, 9):
        for _ in range(15):
            mu = DiscreteMeasure.uniform(rng.random((n, 2)))
            nu = DiscreteMeasure.uniform(rng.random((n, 2)))
            c = build_cost(mu, nu)
            mismatches += solve_bottleneck(mu, nu, c).value != permutation_brute_force(c)
            n_inst += 1
    elapsed = time.perf_counter() - start
    verdict(1, mismatches == 0 and n_inst >= 100 and elapsed < 30,
            f"{n_inst} instances, {mismatches} mismatches, {elapsed:.1f}s")


def test_criterion_2_fig7_ground_truth(verdict):
    inst = generate_instance("fig7")
    res = solve_bottleneck(inst.mu, inst.nu, inst.cost())
    i, j = res.critical_pair
    x, y = inst.mu.points[i], inst.nu.points[j]
    dist = math.hypot(0.98214286 + 0.25, 0.53571429 + 0.1)
    ok = (abs(res.value - 1.38647347) <= 1e-6
          and np.allclose(x, [-0.25, -0.1], atol=1e-12)
          and np.allclose(y, [0.98214286, 0.53571429], atol=1e-8)
          and abs(dist - 1.3864735) <= 1e-7)
    verdict(2, ok, f"v_inf={res.value:.9f}, pair {x.tolist()} -> {np.round(y, 8).tolist()}, "
                   f"hand distance {dist:.8f}")


def test_criterion_3_sinkhorn_accuracy(verdict):
    fig1 = generate_instance("fig1")
    rep = solve(fig1.mu, fig1.nu, fig1.cost(), p=5, eps=1, tol=1e-5)
    cheb = generate_instance("fig3")
    rc = solve(cheb.mu, cheb.nu, cheb.cost(), p=5, eps=1, tol=1e-5)
    ok = (rep.converged and rep.iterations <= 1000 and max(rep.marginal_err_l1) < 1e-5
          and rc.converged and rc.iterations <= 600)
    verdict(3, ok, f"euclidean {rep.iterations} iterations, errors "
                   f"{max(rep.marginal_err_l1):.1e}; chebyshev {rc.iterations} iterations")


def test_criterion_4_inf_cm_selection(verdict):
    # Expected to fail. At tau = 1e-9 the fig1 support keeps 28 cells and contains
    # a genuine violating 2-cycle. Each of the 400 rows of fig4-top carries mass,
    # so no plan can put fewer than half of the 800 cells in its support.
    fig1 = generate_instance("fig1")
    rep = solve(fig1.mu, fig1.nu, fig1.cost(), p=5, eps=1, tol=1e-5)
    supp = support_set(rep.coupling, tau=1e-9)
    cert = check_inf_cyclical_monotonicity(supp, fig1.cost(), K=4)
    top = generate_instance("fig4-top")
    frac = {}
    for p in (2, 15):
        g = solve(top.mu, top.nu, top.cost(), p=p, eps=1, tol=1e-5).coupling
        frac[p] = len(support_set(g, tau=1e-9)) / g.entries.size
    a, b, c = cert.passed, frac[2] > 0.5, frac[15] < 0.05
    verdict(4, a and b and c,
            f"fig1 K=4 on {len(supp)} cells {'passes' if a else 'fails: ' + cert.summary()}; "
            f"fig4-top p=2 support {frac[2]:.1%} ({'ok' if b else 'not > 50%'}), "
            f"p=15 support {frac[15]:.1%} ({'ok' if c else 'not < 5%'})")


def test_criterion_5_degenerate_schedule(verdict):
    fig1 = generate_instance("fig1")
    c = fig1.cost()
    c = c.rescaled(0.5 / c.entries.max())
    recs = degenerate_schedule_demo(fig1.mu, fig1.nu, c, [5, 10, 15, 20])
    ent_ok = all(r.entropy <= r.bound + 1e-6 for r in recs)
    prod = np.outer(fig1.mu.weights, fig1.nu.weights)
    drift = np.abs(recs[-1].report.coupling.entries - prod).max()
    verdict(5, ent_ok and drift <= 1e-3,
            "entropy/bound " + ", ".join(f"p={r.p:g}: {r.entropy:.2e}/{r.bound:.2e}" for r in recs)
            + f"; p=20 distance to product {drift:.1e}")


def test_criterion_6_two_cycle_mass(verdict):
    rng = np.random.default_rng(6)
    mu = DiscreteMeasure(rng.random((4, 2)), rng.dirichlet(np.ones(4)))
    nu = DiscreteMeasure(rng.random((4, 2)), rng.dirichlet(np.ones(4)))
    c = build_cost(mu, nu)
    p, eps = 3.0, 0.05
    rep = solve(mu, nu, c, p=p, eps=eps, tol=1e-13)
    worst = 0.0
    n = 0
    while n < 50:
        (i1, i2), (j1, j2) = rng.choice(4, 2, replace=False), rng.choice(4, 2, replace=False)
        tup = ((int(i1), int(j1)), (int(i2), int(j2)))
        delta = cycle_excess(c, p, tup)
        if delta <= 0:
            continue
        pb = lemma_probability_bound(rep.coupling, c, p, eps, 2, delta, [[tup[0]], [tup[1]]])
        worst = max(worst, pb.mass / pb.bound)
        n += 1
    verdict(6, rep.converged and worst <= 1 + 1e-6,
            f"{n} 2-cycles, largest mass/bound ratio {worst:.9f}")


def test_criterion_7_rate_relation(verdict):
    rng = np.random.default_rng(7)
    n_inst, worst, oracle_err = 0, 0.0, 0.0
    while n_inst < 20:
        n, m = rng.integers(3, 6, size=2)
        mu = DiscreteMeasure.uniform(rng.random((n, 2)))
        nu = DiscreteMeasure.uniform(rng.random((m, 2)))
        c = build_cost(mu, nu)
        supp = solve_bottleneck(mu, nu, c).support
        if not check_inf_cyclical_monotonicity(supp, c, K=3).passed:
            continue
        table = rate_functions(supp, c, K=3)
        assert len(table.queries) == n * m
        worst = max(worst, np.abs(table.i_inf - np.maximum(0.0, table.i_tilde)).max())
        for (i, j), it, ii in zip(table.queries.tolist(), table.i_tilde, table.i_inf):
            bt, bi = rate_brute(supp, c.entries, i, j, 3)
            oracle_err = max(oracle_err, abs(it - bt), abs(ii - bi))
        n_inst += 1
    verdict(7, worst <= 1e-12 and oracle_err <= 1e-12,
            f"{n_inst} instances, max |I - max(0, I~)| = {worst:.1e}, brute-force gap {oracle_err:.1e}")


def test_criterion_8_block_approximation(verdict):
    rng = np.random.default_rng(8)
    fails = []
    worst_marg = 0.0
    for k in range(50):
        n, m = rng.integers(3, 10, size=2)
        d = int(rng.integers(1, 4))
        mu = DiscreteMeasure(rng.random((n, d)), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.random((m, d)) * 2, rng.dirichlet(np.ones(m)))
        g = Coupling(_nw_corner(mu.weights, nu.weights), mu, nu)
        for delta in (0.5, 0.2, 0.1, 0.05):
            ba = block_approximate(g, delta)
            e = ba.coupling.entries
            worst_marg = max(worst_marg, np.abs(e.sum(1) - mu.weights).max(),
                             np.abs(e.sum(0) - nu.weights).max())
            if not verify_entropy_bound(ba)[2] or not verify_winf_bound(ba, g)[2]:
                fails.append((k, delta))
    lifted_bad = 0
    for _ in range(20):
        mu = DiscreteMeasure.uniform(rng.random((3, 2)))
        nu = DiscreteMeasure.uniform(rng.random((3, 2)))
        g = Coupling.from_permutation(mu, nu, rng.permutation(3))
        for delta in (0.5, 0.2, 0.1, 0.05):
            ba = block_approximate(g, delta)
            cert = verify_winf_bound(ba, g)[0]
            lifted_bad += exact_winf(g, ba.coupling) > cert + 1e-12
    ok = not fails and worst_marg <= 1e-12 and lifted_bad == 0
    verdict(8, ok, f"200 block plans, marginal error {worst_marg:.1e}, {len(fails)} bound failures, "
                   f"{lifted_bad} lifted-bottleneck disagreements on 80 three-atom plans")


def test_criterion_9_fig7_sweep(verdict):
    start = time.perf_counter()
    res = sweep(generate_instance("fig7"), default_p_list(10, 172, 25),
                EpsSchedule.constant(500.0**2), 1.052460609, mode="logDomain")
    elapsed = time.perf_counter() - start
    gaps = res.gaps
    signs = np.sign(gaps)
    k = int(np.argmax(signs > 0))
    peak = int(np.argmax(gaps))
    pattern = (signs[0] < 0 and np.all(signs[:k] < 0) and np.all(signs[k:] > 0)
               and np.all(np.diff(gaps[peak:]) < 0) and peak < len(gaps) - 1)
    pg = res.p * gaps
    ok = (all(r.converged for r in res.records) and len(gaps) == 25 and pattern
          and np.all(np.abs(pg) <= 10) and elapsed < 600)
    verdict(9, ok, f"{k} negative gaps then {len(gaps) - k} positive, decreasing after p={res.p[peak]:.1f}; "
                   f"p*gap in [{pg.min():.2f}, {pg.max():.2f}]; {elapsed:.1f}s")


def test_criterion_10_transform_invariance(verdict):
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(20):
        n, m = rng.integers(3, 6, size=2)
        c = rng.random((n, m)) * 3
        cells = rng.choice(n * m, size=int(rng.integers(2, min(n, m) + 2)), replace=False)
        supp = [(int(q // m), int(q % m)) for q in cells]
        base = check_inf_cyclical_monotonicity(supp, c, K=3).passed
        for f in (np.square, lambda t: t + 2, np.exp):
            mismatches += check_inf_cyclical_monotonicity(supp, f(c), K=3).passed != base
    # stored witness: x = 0, 1 and y = 2, 1 on the line
    c = build_cost(DiscreteMeasure.uniform([[0.0], [1.0]]), DiscreteMeasure.uniform([[2.0], [1.0]])).entries
    supp = [(0, 0), (1, 1)]
    flips = (check_c_cyclical_monotonicity(supp, c, K=2).passed
             and not check_c_cyclical_monotonicity(supp, c**2, K=2).passed)
    verdict(10, mismatches == 0 and flips,
            f"20 supports x 3 transforms, {mismatches} verdict changes; c-cm witness flips: {flips}")

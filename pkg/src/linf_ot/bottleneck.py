"""
Exact bottleneck value ``v_inf = min_gamma max{c_ij : gamma_ij > 0}``.

The value is always one of the cost entries, so it is found by binary search
over the sorted distinct entries; each probe asks whether the transportation
problem restricted to the edges ``c_ij <= t`` is feasible, which is a
max-flow question.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .measures import Coupling, DiscreteMeasure, InstanceError, ess_sup

# weights are scaled to integers so the flow decision is exact
FLOW_SCALE = 10**12
MAX_BRUTE_FORCE = 10


@dataclass(frozen=True)
class BottleneckResult:
    value: float
    witness_plan: Coupling
    critical_pair: tuple[int, int]
    lower_value: float | None = None  # largest entry below ``value`` (proved infeasible)

    @property
    def support(self) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(self.witness_plan.entries > 0)
        return list(zip(ii.tolist(), jj.tolist()))

    def to_dict(self, mu=None, nu=None) -> dict:
        i, j = self.critical_pair
        d = {
            "value": self.value,
            "critical_pair": [i, j],
            "witness_support": [list(e) for e in self.support],
        }
        if mu is not None and nu is not None:
            d["critical_points"] = [mu.points[i].tolist(), nu.points[j].tolist()]
        return d


def _integer_weights(w: np.ndarray) -> list[int]:
    return [int(round(x * FLOW_SCALE)) for x in w]


def _max_flow(supply, demand, allowed: np.ndarray):
    """Max flow through the bipartite graph ``source -> i -> j -> sink``."""
    G = nx.DiGraph()
    n, m = allowed.shape
    for i in range(n):
        G.add_edge("s", ("r", i), capacity=supply[i])
    for j in range(m):
        G.add_edge(("c", j), "t", capacity=demand[j])
    ii, jj = np.nonzero(allowed)
    for i, j in zip(ii.tolist(), jj.tolist()):
        # no capacity attribute means unbounded
        G.add_edge(("r", i), ("c", j))
    value, flow = nx.maximum_flow(G, "s", "t")
    return value, flow


def threshold_feasible(mu, nu, cost, t: float, return_flow=False):
    """Can ``mu`` be transported to ``nu`` using only edges with ``c_ij <= t``?

    Weights are rounded to multiples of ``1 / FLOW_SCALE``; the answer is yes
    when the max flow misses the total by at most the accumulated rounding
    (one unit per atom).
    """
    c = cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)
    supply = _integer_weights(mu.weights)
    demand = _integer_weights(nu.weights)
    value, flow = _max_flow(supply, demand, c <= t)
    slack = mu.size + nu.size
    ok = value >= min(sum(supply), sum(demand)) - slack
    if return_flow:
        return ok, flow
    return ok


def _flow_to_plan(flow, n, m) -> np.ndarray:
    g = np.zeros((n, m))
    for i in range(n):
        for (_, j), f in flow[("r", i)].items():
            g[i, j] = f / FLOW_SCALE
    return g


def solve_bottleneck(mu: DiscreteMeasure, nu: DiscreteMeasure, cost) -> BottleneckResult:
    """Minimal essential supremum of the cost over all transport plans.

    Returns the value, a plan attaining it (some feasible flow on the edges
    ``c_ij <= v_inf``) and a cell of the plan's support where ``c = v_inf``.
    """
    c = cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)
    if c.shape != (mu.size, nu.size):
        raise InstanceError(f"cost shape {c.shape} does not match ({mu.size}, {nu.size})")
    values = np.unique(c)
    lo, hi = 0, len(values) - 1
    # feasible at values[hi] always
    while lo < hi:
        mid = (lo + hi) // 2
        if threshold_feasible(mu, nu, c, values[mid]):
            hi = mid
        else:
            lo = mid + 1
    t = float(values[lo])
    _, flow = threshold_feasible(mu, nu, c, t, return_flow=True)
    g = _flow_to_plan(flow, mu.size, nu.size)
    witness = Coupling(g, mu, nu)
    on_edge = (g > 0) & (c == t)
    if on_edge.any():
        masked = np.where(on_edge, g, -1.0)
        i, j = np.unravel_index(np.argmax(masked), g.shape)
    else:
        # only possible if the rounding slack absorbed the critical edge
        i, j = np.unravel_index(np.argmax(np.where(g > 0, c, -np.inf)), g.shape)
    return BottleneckResult(
        value=t,
        witness_plan=witness,
        critical_pair=(int(i), int(j)),
        lower_value=float(values[lo - 1]) if lo > 0 else None,
    )


def permutation_brute_force(cost, mu=None, nu=None) -> float:
    """``min_sigma max_i c[i, sigma(i)]`` by enumerating permutations.

    Only valid for square costs with uniform marginals; a partial assignment
    is abandoned as soon as its running max reaches the best value found.
    """
    c = cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)
    n, m = c.shape
    if n != m:
        raise InstanceError("brute force needs a square cost matrix")
    if n > MAX_BRUTE_FORCE:
        raise InstanceError(f"N={n} too large for enumeration (max {MAX_BRUTE_FORCE})")
    for meas in (mu, nu):
        if meas is not None and not np.allclose(meas.weights, 1.0 / n, rtol=0, atol=1e-12):
            raise InstanceError("brute force needs uniform marginals")
    rows = c.tolist()
    best = math.inf
    used = [False] * n

    def extend(i, running):
        nonlocal best
        if running >= best:
            return
        if i == n:
            best = running
            return
        row = rows[i]
        for j in range(n):
            if not used[j]:
                used[j] = True
                extend(i + 1, max(running, row[j]))
                used[j] = False

    extend(0, -math.inf)
    return float(best)


def permutation_brute_force_plain(cost) -> float:
    """Unpruned enumeration; kept as a second route for small tests."""
    c = np.asarray(cost, dtype=float)
    n = c.shape[0]
    return float(min(max(c[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n))))


def compute_m_gamma(gamma: Coupling, cost, v_inf: float, tol_eq: float = 1e-9,
                    tau: float = 0.0) -> tuple[float, bool]:
    """Largest mass on a support cell whose cost equals ``v_inf``.

    ``tol_eq`` is relative: a cell qualifies when
    ``|c_ij - v_inf| <= tol_eq * max(1, |v_inf|)``. Returns ``(m, found)``;
    ``m = 0`` and ``found = False`` when no support cell sits at ``v_inf``,
    which signals that ``gamma`` is not optimal.
    """
    c = cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)
    g = gamma.entries
    atol = tol_eq * max(1.0, abs(v_inf))
    if ess_sup(g, c, tau) > v_inf + atol:
        return 0.0, False
    mask = (g > tau) & (np.abs(c - v_inf) <= atol)
    if not mask.any():
        return 0.0, False
    return float(g[mask].max()), True

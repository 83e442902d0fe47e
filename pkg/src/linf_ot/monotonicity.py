"""
Cyclical monotonicity certificates, cyclical-invariance residuals and
bounded-length rate functions for finite supports.

Every certificate here is partial: cycles are enumerated only up to a cap
``K`` and the result records that cap.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measures import Coupling, SupportSet

VIOLATION_TOL = 1e-9
DEFAULT_BUDGET = 10_000_000


class BudgetExceeded(RuntimeError):
    """Cycle enumeration would visit more nodes than allowed."""


class NotMonotoneError(ValueError):
    """A support expected to be infinity-cyclically monotone is not."""


def _cost(cost) -> np.ndarray:
    return cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)


def _pairs(support) -> np.ndarray:
    if isinstance(support, SupportSet):
        return support.as_array()
    return np.asarray(list(support), dtype=int).reshape(-1, 2)


@dataclass(frozen=True)
class CycleWitness:
    indices: tuple
    lhs: float
    rhs: float

    @property
    def violation(self) -> float:
        return self.lhs - self.rhs

    def __str__(self):
        chain = " -> ".join(f"({i},{j})" for i, j in self.indices)
        return f"cycle {chain}: lhs={self.lhs:.12g} rhs={self.rhs:.12g} violation={self.violation:.3g}"


@dataclass(frozen=True)
class Certificate:
    """Result of a capped monotonicity check."""

    passed: bool
    witness: CycleWitness | None
    cap: int
    mode: str
    nodes: int

    @property
    def partial(self) -> bool:
        return True

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        s = f"{verdict} ({self.mode}-cyclical monotonicity, cycles of length <= {self.cap} only)"
        if self.witness is not None:
            s += f"\nworst {self.witness}"
        return s


def check_inf_cyclical_monotonicity(support, cost, K: int = 4, tol: float = VIOLATION_TOL,
                                    budget: int = DEFAULT_BUDGET) -> Certificate:
    """Search cycles of length ``<= K`` for ``max own cost > max shifted cost``.

    A violating cycle can be rotated so that it starts at an element carrying
    the largest own cost; the search therefore roots every chain at that
    element and cuts a chain as soon as its running shifted max leaves no
    room for a violation larger than the best one found. Cycles repeating
    an element split into shorter cycles, so only simple cycles are visited.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    S = _pairs(support)
    c = _cost(cost)
    s = len(S)
    own = c[S[:, 0], S[:, 1]]
    # swap[a, b] = c(x_a, y_b)
    swap = c[S[:, 0][:, None], S[:, 1][None, :]]
    own_l = own.tolist()
    swap_l = swap.tolist()
    order = np.argsort(-own, kind="stable").tolist()

    best = {"v": tol, "cycle": None, "rhs": None}
    nodes = 0

    def extend(chain, running, root_own):
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            raise BudgetExceeded(f"more than {budget} chains at K={K}")
        last = chain[-1]
        root = chain[0]
        if len(chain) >= 2:
            closing = max(running, swap_l[last][root])
            if root_own - closing > best["v"]:
                best["v"] = root_own - closing
                best["cycle"] = list(chain)
                best["rhs"] = closing
        if len(chain) == K:
            return
        row = swap_l[last]
        for b in range(s):
            if b in chain or own_l[b] > root_own:
                continue
            r = max(running, row[b])
            if root_own - r <= best["v"]:
                continue
            chain.append(b)
            extend(chain, r, root_own)
            chain.pop()

    for a in order:
        if own_l[a] <= best["v"]:
            # violation <= own max - 0 since costs are nonnegative
            continue
        extend([a], -math.inf, own_l[a])

    witness = None
    if best["cycle"] is not None:
        idx = tuple((int(S[a, 0]), int(S[a, 1])) for a in best["cycle"])
        witness = CycleWitness(idx, float(max(own[a] for a in best["cycle"])), float(best["rhs"]))
    return Certificate(witness is None, witness, K, "inf", nodes)


def check_c_cyclical_monotonicity(support, cost, K: int = 4, tol: float = VIOLATION_TOL,
                                  budget: int = DEFAULT_BUDGET) -> Certificate:
    """Search cycles of length ``<= K`` for ``sum own cost > sum shifted cost``.

    Each simple cycle is visited once, rooted at its smallest element.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    S = _pairs(support)
    c = _cost(cost)
    s = len(S)
    own_l = c[S[:, 0], S[:, 1]].tolist()
    swap_l = c[S[:, 0][:, None], S[:, 1][None, :]].tolist()

    best_v = tol
    best_cycle = None
    best_rhs = None
    nodes = 0

    def extend(chain, own_sum, swap_sum):
        nonlocal nodes, best_v, best_cycle, best_rhs
        nodes += 1
        if nodes > budget:
            raise BudgetExceeded(f"more than {budget} chains at K={K}")
        root, last = chain[0], chain[-1]
        if len(chain) >= 2:
            rhs = swap_sum + swap_l[last][root]
            if own_sum - rhs > best_v:
                best_v = own_sum - rhs
                best_cycle = list(chain)
                best_rhs = rhs
        if len(chain) == K:
            return
        row = swap_l[last]
        for b in range(root + 1, s):
            if b in chain:
                continue
            chain.append(b)
            extend(chain, own_sum + own_l[b], swap_sum + row[b])
            chain.pop()

    for a in range(s):
        extend([a], own_l[a], 0.0)

    witness = None
    if best_cycle is not None:
        idx = tuple((int(S[a, 0]), int(S[a, 1])) for a in best_cycle)
        witness = CycleWitness(idx, float(sum(own_l[a] for a in best_cycle)), float(best_rhs))
    return Certificate(witness is None, witness, K, "sum", nodes)


# -- entropic plans -------------------------------------------------------------

def _log_cycle_terms(log_dens, c_pow, eps, cycle):
    ii = np.array([i for i, _ in cycle])
    jj = np.array([j for _, j in cycle])
    jn = np.roll(jj, -1)
    lhs = log_dens[ii, jj].sum()
    rhs = -(c_pow[ii, jj].sum() - c_pow[ii, jn].sum()) / eps + log_dens[ii, jn].sum()
    return lhs, rhs


def random_cycles(shape, n_cycles: int, K: int = 2, seed=0) -> list:
    """Random cycles of lengths ``2..K`` over the cells of an ``N x M`` grid."""
    rng = np.random.default_rng(seed)
    n, m = shape
    out = []
    for _ in range(n_cycles):
        k = int(rng.integers(2, K + 1))
        out.append([(int(rng.integers(n)), int(rng.integers(m))) for _ in range(k)])
    return out


def invariance_residual(gamma: Coupling, cost, p: float, eps: float, cycles=100, K: int = 3,
                        seed=0) -> float:
    """Max relative defect of the multiplicative cycle identity for ``c^p``.

    For each cycle ``(i_t, j_t)``, compares ``prod d(i_t, j_t)`` with
    ``exp(-sum(c^p(i_t,j_t) - c^p(i_t,j_{t+1})) / eps) prod d(i_t, j_{t+1})``
    where ``d`` is the density of ``gamma`` against the product of its
    marginals. The comparison is done on logarithms, and the defect is taken
    relative to the larger side. ``cycles`` is either an explicit list or a
    number of random cycles to draw.
    """
    g = gamma.entries
    if np.any(g <= 0):
        raise ValueError("zero density: the identity needs a strictly positive plan")
    log_dens = np.log(gamma.density())
    c_pow = _cost(cost) ** p
    if isinstance(cycles, int):
        cycles = random_cycles(g.shape, cycles, K, seed)
    worst = 0.0
    for cyc in cycles:
        lhs, rhs = _log_cycle_terms(log_dens, c_pow, eps, cyc)
        worst = max(worst, float(-np.expm1(-abs(lhs - rhs))))
    return worst


@dataclass(frozen=True)
class ProbabilityBound:
    mass: float
    bound: float
    delta: float
    n_tuples: int

    @property
    def holds(self) -> bool:
        return self.mass <= self.bound


def cycle_excess(cost, p: float, tup) -> float:
    """``sum c^p(x_i, y_i) - sum c^p(x_i, y_{i+1})`` along a tuple of cells."""
    c = _cost(cost)
    ii = [i for i, _ in tup]
    jj = [j for _, j in tup]
    jn = jj[1:] + jj[:1]
    return float(sum(c[i, j] ** p for i, j in zip(ii, jj)) - sum(c[i, j] ** p for i, j in zip(ii, jn)))


def lemma_probability_bound(gamma: Coupling, cost, p: float, eps: float, k: int, delta: float,
                            box, restrict: bool = False) -> ProbabilityBound:
    """Mass of a set of ``k``-tuples of cells under the ``k``-fold product plan.

    ``box`` is a sequence of ``k`` collections of cells; the tuple set is
    their Cartesian product. Every tuple must have cycle excess (for
    ``c^p``) at least ``delta``; with ``restrict=True`` tuples below
    ``delta`` are dropped instead of rejected. For an entropic minimizer
    the mass is at most ``exp(-delta / eps)``.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    box = [list(b) for b in box]
    if len(box) != k:
        raise ValueError(f"box has {len(box)} factors, expected {k}")
    g = gamma.entries
    mass = 0.0
    count = 0
    for tup in itertools.product(*box):
        if cycle_excess(cost, p, tup) < delta:
            if restrict:
                continue
            raise ValueError(f"tuple {tup} has excess below delta={delta}")
        mass += float(np.prod([g[i, j] for i, j in tup]))
        count += 1
    return ProbabilityBound(mass, math.exp(-delta / eps), delta, count)


# -- rate functions ----------------------------------------------------------------

@dataclass
class RateFunctionTable:
    queries: np.ndarray     # (Q, 2) index pairs
    i_tilde: np.ndarray     # cyclic version
    i_inf: np.ndarray       # permutation version
    cap: int
    provenance: dict = field(default_factory=dict)

    def value(self, i, j, which="i_tilde") -> float:
        hit = np.nonzero((self.queries[:, 0] == i) & (self.queries[:, 1] == j))[0]
        if not hit.size:
            raise KeyError((i, j))
        return float(getattr(self, which)[hit[0]])

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "i_tilde", "i_inf", "cap"])
            for (i, j), a, b in zip(self.queries.tolist(), self.i_tilde, self.i_inf):
                w.writerow([i, j, repr(float(a)), repr(float(b)), self.cap])


def rate_functions(support, cost, K: int = 3, queries=None, check: bool = True,
                   provenance: dict | None = None) -> RateFunctionTable:
    """Capped rate functions at cells ``(x, y)`` of ``spt mu x spt nu``.

    ``i_tilde`` maximizes ``max own - max cyclically shifted`` over chains
    ``(x, y), e_2, ..., e_k`` with ``e_t`` drawn (with repetition) from the
    support and ``k <= K``; ``i_inf`` replaces the cyclic shift by every
    permutation of the chain.
    """
    c = _cost(cost)
    S = _pairs(support)
    if check:
        cert = check_inf_cyclical_monotonicity(S, c, K)
        if not cert.passed:
            raise NotMonotoneError(f"support fails the pre-check: {cert.witness}")
    if queries is None:
        n, m = c.shape
        queries = np.array([(i, j) for i in range(n) for j in range(m)], dtype=int)
    queries = np.asarray(queries, dtype=int).reshape(-1, 2)
    q_i, q_j = queries[:, 0], queries[:, 1]
    i_tilde = np.full(len(queries), -np.inf)
    i_inf = np.full(len(queries), -np.inf)
    for k in range(2, K + 1):
        chains = np.array(list(itertools.product(range(len(S)), repeat=k - 1)), dtype=int)
        # rows/cols: (Q, C, k)
        rows = np.concatenate(
            [np.broadcast_to(q_i[:, None, None], (len(queries), len(chains), 1)),
             np.broadcast_to(S[chains, 0][None], (len(queries), len(chains), k - 1))], axis=2)
        cols = np.concatenate(
            [np.broadcast_to(q_j[:, None, None], (len(queries), len(chains), 1)),
             np.broadcast_to(S[chains, 1][None], (len(queries), len(chains), k - 1))], axis=2)
        own = c[rows, cols].max(axis=2)
        shifted = c[rows, np.roll(cols, -1, axis=2)].max(axis=2)
        i_tilde = np.maximum(i_tilde, (own - shifted).max(axis=1))
        for sigma in itertools.permutations(range(k)):
            perm = c[rows, cols[:, :, list(sigma)]].max(axis=2)
            i_inf = np.maximum(i_inf, (own - perm).max(axis=1))
    return RateFunctionTable(queries, i_tilde, i_inf, K, dict(provenance or {}))


@dataclass
class LDProbe:
    p: np.ndarray
    trace: np.ndarray
    target: float
    slack: float

    @property
    def tail(self) -> np.ndarray:
        return self.trace[len(self.trace) - max(1, len(self.trace) // 3):]

    @property
    def passed(self) -> bool:
        return bool(np.all(self.tail <= self.target + self.slack))


def ld_upper_bound_probe(reports, cells, rate_table: RateFunctionTable, cost,
                         slack: float = 1e-2) -> LDProbe:
    """Trace ``(eps / p) log gamma_p(C)`` along solves at increasing ``p``.

    The target is ``-min_C i_tilde`` from ``rate_table``; the large-deviations
    upper bound says the trace eventually stays below it.
    """
    c = _cost(cost)
    if np.any(c < 1):
        raise ValueError("the probe assumes a cost bounded below by 1")
    cells = [tuple(int(v) for v in e) for e in cells]
    ps, trace = [], []
    for rep in sorted(reports, key=lambda r: r.p):
        g = rep.coupling.entries
        mass = float(sum(g[i, j] for i, j in cells))
        if mass <= 0:
            raise ValueError(f"cell has zero mass at p={rep.p}")
        ps.append(rep.p)
        trace.append(rep.eps / rep.p * math.log(mass))
    target = -min(rate_table.value(i, j) for i, j in cells)
    return LDProbe(np.array(ps), np.array(trace), target, slack)

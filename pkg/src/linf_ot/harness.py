"""
Experiment harness: named instances, convergence sweeps of ``v_p`` towards
``v_inf`` with fitted envelopes, and CSV/SVG output.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bottleneck import solve_bottleneck
from .measures import (
    Coupling,
    DiscreteMeasure,
    Instance,
    crude_entropy_bound,
    support_threshold,
)
from .sinkhorn import ConvergenceWarning, EpsSchedule, SolverConfig, solve

INSTANCE_NAMES = ("fig1", "fig3", "fig4-top", "fig4-mid", "fig4-bottom", "fig7")

_FIG1_MU = [(-2, 0), (-1.5, 0), (-1, 0), (-0.5, 0), (0.5, 0), (1, 0), (1.5, 0), (2, 0)]
_FIG1_NU = [(0, -1.367), (0, -0.867), (0, 0.867), (0, 1.367)]


def _grid(x_range, y_range, nx, ny):
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    return np.array([(x, y) for x in xs for y in ys])


def generate_instance(name: str) -> Instance:
    """Instances of the numerical experiments, built without randomness.

    ``fig4-*`` discretize squares/rectangles by tensor grids including the
    boundary; ``fig7`` uses the source grid ``x1 in {-0.25, ..., 0.125}``.
    """
    if name in ("fig1", "fig3"):
        metric = "euclidean" if name == "fig1" else "chebyshev"
        return Instance(DiscreteMeasure.uniform(_FIG1_MU), DiscreteMeasure.uniform(_FIG1_NU),
                        metric, name=name)
    if name in ("fig4-top", "fig4-mid"):
        mu = DiscreteMeasure.uniform(_grid((0, 1), (0, 1), 20, 20))
        pts = [(1.0, 2.0), (2.0, 1.0)]
        nu = DiscreteMeasure.uniform(pts) if name == "fig4-top" else DiscreteMeasure(pts, [0.1, 0.9])
        return Instance(mu, nu, "euclidean", name=name)
    if name == "fig4-bottom":
        mu = DiscreteMeasure.uniform(_grid((-0.25, 0.25), (-0.25, 0.25), 10, 10))
        nu = DiscreteMeasure.uniform(_grid((1.25, 1.5), (-0.5, 0.5), 10, 10))
        return Instance(mu, nu, "euclidean", name=name)
    if name == "fig7":
        mu = [(x1, x2) for x1 in (-0.25, -0.125, 0.0, 0.125) for x2 in (-0.1, 0.1)]
        start, end = np.array([0.625, 1.25]), np.array([1.25, 0.0])
        nu = [tuple(start + (end - start) * k / 7) for k in range(8)]
        return Instance(DiscreteMeasure.uniform(mu), DiscreteMeasure.uniform(nu), "euclidean",
                        name=name)
    raise KeyError(f"unknown instance {name!r}; expected one of {INSTANCE_NAMES}")


@dataclass
class SweepRecord:
    p: float
    eps: float
    v_p: float
    gap: float
    iterations: int
    converged: bool
    mode: str = ""


@dataclass
class BoundFit:
    """Envelope ``-A / p <= v_p - v_inf <= B exp(-beta p)``.

    ``A`` or ``B`` is ``None`` when no record has a gap of the needed sign.
    """

    A: float | None
    B: float | None
    beta: float
    beta_source: str = "fixed log(v_inf)"

    def lower(self, p):
        return None if self.A is None else -self.A / np.asarray(p, dtype=float)

    def upper(self, p):
        return None if self.B is None else self.B * np.exp(-self.beta * np.asarray(p, dtype=float))


@dataclass
class SweepResult:
    records: list[SweepRecord]
    fit: BoundFit
    v_inf: float
    scale: float = 1.0
    instance_name: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def p(self):
        return np.array([r.p for r in self.records])

    @property
    def gaps(self):
        return np.array([r.gap for r in self.records])


def default_p_list(p_min: float, p_max: float, n: int = 25) -> np.ndarray:
    return np.geomspace(p_min, p_max, n)


def fit_bounds(records, v_inf: float) -> BoundFit:
    """Least-squares envelope coefficients.

    ``log B`` is the mean of ``log(gap) + beta p`` over positive gaps (slope
    fixed to ``-beta = -log v_inf``); ``A`` minimizes ``sum (gap + A/p)^2``
    over negative gaps.
    """
    beta = math.log(v_inf)
    usable = [r for r in records if r.converged and np.isfinite(r.gap)]
    pos = [r for r in usable if r.gap > 0]
    neg = [r for r in usable if r.gap < 0]
    B = None
    if pos:
        B = float(np.exp(np.mean([math.log(r.gap) + beta * r.p for r in pos])))
    A = None
    if neg:
        inv = np.array([1.0 / r.p for r in neg])
        gap = np.array([r.gap for r in neg])
        A = float(max(0.0, -np.dot(gap, inv) / np.dot(inv, inv)))
    return BoundFit(A, B, beta)


def _solve_one(args):
    mu, nu, cost, p, eps, tol, max_iter, mode = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        rep = solve(mu, nu, cost, SolverConfig(p=p, eps=eps, tol=tol, max_iter=max_iter, mode=mode))
    return rep


def sweep(instance: Instance, p_list, schedule: EpsSchedule | None = None,
          target_v_inf: float | None = None, tol: float = 1e-5, max_iter: int = 50_000,
          mode: str = "auto", workers: int = 1) -> SweepResult:
    """Solve at every ``p`` and compare ``v_p = J_{p,eps_p}(gamma_p)`` with ``v_inf``.

    With ``target_v_inf`` the cost is multiplied by ``target / v_inf`` first,
    which moves the bottleneck value exactly onto the target.
    """
    p_list = [float(p) for p in p_list]
    if any(b <= a for a, b in zip(p_list, p_list[1:])):
        raise ValueError("p_list must be increasing")
    schedule = schedule or EpsSchedule.constant(1.0)
    mu, nu = instance.mu, instance.nu
    cost = instance.cost()
    v_inf = solve_bottleneck(mu, nu, cost).value
    scale = 1.0
    if target_v_inf is not None:
        scale = target_v_inf / v_inf
        cost = cost.rescaled(scale)
        v_inf = solve_bottleneck(mu, nu, cost).value
    jobs = [(mu, nu, cost, p, schedule(p), tol, max_iter, mode) for p in p_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_solve_one, jobs))
    else:
        reports = [_solve_one(j) for j in jobs]
    records = [
        SweepRecord(rep.p, rep.eps, rep.value, rep.value - v_inf, rep.iterations, rep.converged,
                    rep.mode)
        for rep in reports
    ]
    return SweepResult(records, fit_bounds(records, v_inf), v_inf, scale, instance.name,
                       {"crude_entropy_bound": crude_entropy_bound(mu, nu)})


def discrete_upper_bound(v_inf: float, entropy_bound: float, p, lam: float = 0.0):
    """``v_inf (1 + M / (1+lam)^p)^(1/p) - v_inf``, the gap bound from any optimal plan."""
    p = np.asarray(p, dtype=float)
    return v_inf * np.expm1(np.log1p(entropy_bound / (1.0 + lam) ** p) / p)


def envelope_violations(result: SweepResult, slack: float = 0.05) -> list[SweepRecord]:
    """Records whose gap leaves ``[-A/p, B e^{-beta p}]`` by more than ``slack`` (relative)."""
    out = []
    for r in result.records:
        if not r.converged:
            continue
        if r.gap > 0 and result.fit.B is not None:
            if r.gap > (1 + slack) * result.fit.upper(r.p):
                out.append(r)
        elif r.gap < 0 and result.fit.A is not None:
            if r.gap < (1 + slack) * result.fit.lower(r.p):
                out.append(r)
    return out


# -- output -----------------------------------------------------------------------

SWEEP_COLUMNS = ("p", "eps", "v_p", "gap", "iterations")


def sweep_csv(records) -> str:
    if not records:
        raise ValueError("no records to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS + ("converged",))
    for r in records:
        w.writerow([repr(r.p), repr(r.eps), repr(r.v_p), repr(r.gap), r.iterations, int(r.converged)])
    return buf.getvalue()


def plan_csv(gamma: Coupling) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "x", "y", "mass"])
    for (i, j), m in np.ndenumerate(gamma.entries):
        if m > 0:
            x = " ".join(repr(float(v)) for v in gamma.mu.points[i])
            y = " ".join(repr(float(v)) for v in gamma.nu.points[j])
            w.writerow([i, j, x, y, repr(float(m))])
    return buf.getvalue()


def arrow_levels(gamma: Coupling, draw_rel: float = 1e-2, dark_rel: float = 0.5):
    """Cells to draw as arrows: ``'black'`` for high mass, ``'gray'`` for lower mass.

    Masses are compared with the largest mass in the same source row, so a
    source split evenly between two targets gets two black arrows.
    """
    g = gamma.entries
    row_max = g.max(axis=1, keepdims=True)
    rel = np.divide(g, row_max, out=np.zeros_like(g), where=row_max > 0)
    tau = support_threshold(g)
    levels = {}
    for (i, j), r in np.ndenumerate(rel):
        if r >= dark_rel:
            levels[(i, j)] = "black"
        elif r >= draw_rel and g[i, j] > tau:
            levels[(i, j)] = "gray"
    return levels


def _plot_plan(gamma: Coupling, ax):
    mu, nu = gamma.mu, gamma.nu
    for (i, j), color in sorted(arrow_levels(gamma).items()):
        x, y = mu.points[i], nu.points[j]
        ax.annotate("", xy=y[:2], xytext=x[:2],
                    arrowprops=dict(arrowstyle="->", color=color, lw=1.0 if color == "black" else 0.6))
    ax.scatter(mu.points[:, 0], mu.points[:, 1], s=12 + 400 * mu.weights, color="tab:blue", zorder=3)
    ax.scatter(nu.points[:, 0], nu.points[:, 1], s=12 + 400 * nu.weights, color="tab:red", zorder=3)
    ax.set_aspect("equal")


def _plot_sweep(result: SweepResult, axes):
    p = result.p
    v = np.array([r.v_p for r in result.records])
    top, bottom = axes
    top.plot(p, v, color="tab:blue", label="v_p")
    top.axhline(result.v_inf, color="tab:orange", label="v_inf")
    top.legend()
    bottom.plot(p, result.gaps, color="tab:blue", label="v_p - v_inf")
    if result.fit.B is not None:
        bottom.plot(p, result.fit.upper(p), color="tab:green", label="B exp(-beta p)")
    if result.fit.A is not None:
        bottom.plot(p, result.fit.lower(p), color="tab:orange", label="-A / p")
    bottom.set_xlabel("p")
    bottom.legend()


def emit_figure(data, kind: str, csv_path=None, svg_path=None) -> list[Path]:
    """Write the raw series as CSV and a matplotlib SVG.

    ``kind`` is ``"plan"`` (``data`` a :class:`Coupling`) or ``"sweep"``
    (``data`` a :class:`SweepResult` or list of records). Nothing is written
    when there is no data.
    """
    if kind == "plan":
        if not isinstance(data, Coupling) or not np.any(data.entries > 0):
            raise ValueError("plan figure needs a nonzero coupling")
        text = plan_csv(data)
    elif kind == "sweep":
        records = data.records if isinstance(data, SweepResult) else list(data)
        if not records:
            raise ValueError("no records to plot")
        text = sweep_csv(records)
    else:
        raise ValueError(f"unknown figure kind {kind!r}")

    written = []
    if csv_path is not None:
        Path(csv_path).write_text(text)
        written.append(Path(csv_path))
    if svg_path is not None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        # fixed hash salt keeps repeated SVG output identical
        matplotlib.rcParams["svg.hashsalt"] = "linf-ot"
        if kind == "plan":
            fig, ax = plt.subplots(figsize=(5, 5))
            _plot_plan(data, ax)
        else:
            if not isinstance(data, SweepResult):
                raise ValueError("sweep SVG needs a SweepResult (fit and v_inf)")
            fig, axes = plt.subplots(2, 1, figsize=(6, 7), sharex=True)
            _plot_sweep(data, axes)
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(Path(svg_path))
    return written


def records_as_dicts(records) -> list[dict]:
    return [asdict(r) for r in records]

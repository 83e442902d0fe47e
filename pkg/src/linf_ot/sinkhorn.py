"""
Sinkhorn solvers for the entropic problem with powered cost ``c^p``.

The minimizer of ``J_{p,eps}`` coincides with the minimizer of
``<gamma, c^p> + eps * H(gamma | mu x nu)`` (raising to ``1/p`` is monotone),
which is a standard entropic transport problem. Two solvers are provided:
the classical scaling iteration on the Gibbs kernel ``exp(-c^p / eps)`` and
its log-domain counterpart, which stays finite when the kernel underflows.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .measures import (
    Coupling,
    DiscreteMeasure,
    InstanceError,
    entropy,
    eval_jpe,
    marginal_errors,
)

logger = logging.getLogger(__name__)

MODES = ("standard", "logDomain", "auto")
# exp(-x) underflows to a subnormal/zero past roughly this exponent
EXP_UNDERFLOW = 700.0
# largest tolerated round-off (in units of eps) on the reduced costs
PRECISION_LIMIT = 1e-3


class KernelUnderflowError(ArithmeticError):
    """The Gibbs kernel has a row or column that is identically zero."""


class ConvergenceWarning(UserWarning):
    pass


class PrecisionWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    p: float = 1.0
    eps: float = 1.0
    max_iter: int = 50_000
    tol: float = 1e-5
    mode: str = "auto"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class SolveReport:
    """Outcome of one entropic solve.

    ``log_u`` and ``log_v`` are the dual potentials divided by ``eps`` so that
    ``gamma_ij = mu_i nu_j exp(log_u_i + log_v_j - c_ij^p / eps)``.
    """

    coupling: Coupling
    value: float
    entropy_value: float
    iterations: int
    marginal_err_l1: tuple[float, float]
    marginal_err_max: tuple[float, float]
    converged: bool
    mode: str
    p: float
    eps: float
    log_u: np.ndarray = field(repr=False, default=None)
    log_v: np.ndarray = field(repr=False, default=None)
    history: list = field(repr=False, default_factory=list)
    dual_history: list = field(repr=False, default_factory=list)

    def to_dict(self, include_plan: bool = True) -> dict:
        d = {
            "p": self.p,
            "eps": self.eps,
            "mode": self.mode,
            "value": self.value,
            "entropy": self.entropy_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "marginal_err_l1": list(self.marginal_err_l1),
            "marginal_err_max": list(self.marginal_err_max),
        }
        if include_plan:
            d["coupling"] = self.coupling.to_dict()
        return d


def powered_cost(cost, p: float) -> np.ndarray:
    c = cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)
    return c**p


def _check_inputs(mu, nu, cost):
    c = cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)
    if c.shape != (mu.size, nu.size):
        raise InstanceError(f"cost shape {c.shape} does not match ({mu.size}, {nu.size})")
    if not np.all(np.isfinite(c)):
        raise InstanceError("cost entries must be finite")
    return c


def _trivial_report(mu, nu, cost, config, mode) -> SolveReport:
    # a single row or column pins the plan to mu x nu
    gamma = Coupling.product(mu, nu)
    errs = marginal_errors(gamma)
    return SolveReport(
        coupling=gamma,
        value=eval_jpe(gamma, cost, config.p, config.eps),
        entropy_value=entropy(gamma),
        iterations=0,
        marginal_err_l1=errs,
        marginal_err_max=marginal_errors(gamma, "max"),
        converged=True,
        mode=mode,
        p=config.p,
        eps=config.eps,
        log_u=np.zeros(mu.size),
        log_v=np.zeros(nu.size),
    )


def _finish(mu, nu, cost, config, mode, g, n_iter, log_u, log_v, history, dual) -> SolveReport:
    gamma = Coupling(g, mu, nu)
    errs = marginal_errors(gamma)
    converged = errs[0] <= config.tol and errs[1] <= config.tol
    if not converged:
        warnings.warn(
            f"Sinkhorn ({mode}) did not reach tol={config.tol:g} in {n_iter} "
            f"iterations (errors {errs[0]:.3g}, {errs[1]:.3g})",
            ConvergenceWarning,
        )
    return SolveReport(
        coupling=gamma,
        value=eval_jpe(gamma, cost, config.p, config.eps),
        entropy_value=entropy(gamma),
        iterations=n_iter,
        marginal_err_l1=errs,
        marginal_err_max=marginal_errors(gamma, "max"),
        converged=converged,
        mode=mode,
        p=config.p,
        eps=config.eps,
        log_u=log_u,
        log_v=log_v,
        history=history,
        dual_history=dual,
    )


def _history_value(g, c_pow, ref, eps):
    pos = g > 0
    return float(np.sum(g * c_pow) + eps * np.sum(g[pos] * np.log(g[pos] / ref[pos])))


def _dual_value(f, g, a, b, plan, eps):
    # block coordinate ascent on this concave dual is what Sinkhorn does
    return float(eps * (a @ f + b @ g - plan.sum() + 1.0))


def solve_standard(mu, nu, cost, config: SolverConfig, record_history=False) -> SolveReport:
    """Sinkhorn scaling on the kernel ``K = exp(-c^p / eps)``.

    Raises
    ------
    KernelUnderflowError
        If some row or column of ``K`` is identically zero.
    """
    c = _check_inputs(mu, nu, cost)
    if mu.size == 1 or nu.size == 1:
        return _trivial_report(mu, nu, cost, config, "standard")
    a, b = mu.weights, nu.weights
    c_pow = c**config.p
    K = np.exp(-c_pow / config.eps)
    if np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0):
        raise KernelUnderflowError(
            f"Gibbs kernel underflows (max c^p/eps = {c_pow.max() / config.eps:.3g})"
        )
    ref = np.outer(a, b)
    u = np.ones_like(a)
    v = np.ones_like(b)
    history, dual = [], []
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        u = a / (K @ v)
        v = b / (K.T @ u)
        row = u * (K @ v)
        col = v * (K.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise KernelUnderflowError("scaling vectors left the floating-point range")
        if record_history:
            plan = u[:, None] * K * v[None, :]
            history.append(_history_value(plan, c_pow, ref, config.eps))
            dual.append(_dual_value(np.log(u / a), np.log(v / b), a, b, plan, config.eps))
        if np.abs(row - a).sum() <= config.tol and np.abs(col - b).sum() <= config.tol:
            break
    g = u[:, None] * K * v[None, :]
    with np.errstate(divide="ignore"):
        log_u = np.log(u / a)
        log_v = np.log(v / b)
    return _finish(mu, nu, cost, config, "standard", g, n_iter, log_u, log_v, history, dual)


def solve_log_domain(mu, nu, cost, config: SolverConfig, record_history=False) -> SolveReport:
    """Log-domain Sinkhorn: potentials updated by log-sum-exp reductions.

    Works directly with ``c^p / eps``; finite for any finite cost, however
    large the ratio. Row and column minima are subtracted first (this leaves
    the minimizer unchanged) so the potentials stay small; a
    :class:`PrecisionWarning` is emitted when the reduced costs are too large
    for double precision to resolve unit differences.
    """
    c = _check_inputs(mu, nu, cost)
    if mu.size == 1 or nu.size == 1:
        return _trivial_report(mu, nu, cost, config, "logDomain")
    a, b = mu.weights, nu.weights
    log_a, log_b = np.log(a), np.log(b)
    c_pow = c**config.p
    if not np.all(np.isfinite(c_pow)):
        raise InstanceError(f"c^p overflows at p={config.p}")
    S = c_pow / config.eps
    shift_r = S.min(axis=1)
    if shift_r.max() * np.finfo(float).eps > PRECISION_LIMIT:
        warnings.warn(
            f"c^p/eps reaches {shift_r.max():.3g} on every row minimum; "
            "double precision cannot resolve the entropic plan (rescale the cost)",
            PrecisionWarning,
        )
    S = S - shift_r[:, None]
    shift_c = S.min(axis=0)
    S = S - shift_c[None, :]
    ref = np.outer(a, b)
    # gamma_ij = a_i b_j exp(f_i + g_j - S_ij) in reduced units
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    history, dual = [], []
    n_iter = 0

    def form_plan():
        return np.exp(log_a[:, None] + log_b[None, :] + f[:, None] + g[None, :] - S)

    for n_iter in range(1, config.max_iter + 1):
        f = -logsumexp(log_b[None, :] + g[None, :] - S, axis=1)
        g = -logsumexp(log_a[:, None] + f[:, None] - S, axis=0)
        log_row = f + logsumexp(log_b[None, :] + g[None, :] - S, axis=1)
        err_row = float(np.sum(a * np.abs(np.expm1(log_row))))
        log_col = g + logsumexp(log_a[:, None] + f[:, None] - S, axis=0)
        err_col = float(np.sum(b * np.abs(np.expm1(log_col))))
        if record_history:
            plan = form_plan()
            history.append(_history_value(plan, c_pow, ref, config.eps))
            dual.append(_dual_value(f + shift_r, g + shift_c, a, b, plan, config.eps))
        if err_row <= config.tol and err_col <= config.tol:
            # confirm on the materialized plan, whose rounding differs
            plan = form_plan()
            if (np.abs(plan.sum(axis=1) - a).sum() <= config.tol
                    and np.abs(plan.sum(axis=0) - b).sum() <= config.tol):
                break
    plan = form_plan()
    return _finish(mu, nu, cost, config, "logDomain", plan, n_iter,
                   f + shift_r, g + shift_c, history, dual)


def needs_log_domain(cost, config: SolverConfig) -> bool:
    c_pow = powered_cost(cost, config.p)
    if not np.all(np.isfinite(c_pow)):
        return True
    if c_pow.max() / config.eps > EXP_UNDERFLOW:
        return True
    K = np.exp(-c_pow / config.eps)
    return bool(np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0))


def solve(mu, nu, cost, config: SolverConfig | None = None, record_history=False, **kwargs) -> SolveReport:
    """Entropic minimizer of ``J_{p,eps}`` between ``mu`` and ``nu``.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
    cost : CostMatrix or array-like, shape (N, M)
        Ground cost ``c``; the solver raises it to the power ``config.p``.
    config : SolverConfig, optional
        Keyword arguments are forwarded to :class:`SolverConfig` when omitted.
    record_history : bool
        Store ``sum gamma c^p + eps H`` of every iterate in ``report.history``
        and the dual objective in ``report.dual_history``. Only the dual is
        monotone: iterates are infeasible and approach the optimum from below.

    Returns
    -------
    SolveReport
    """
    if config is None:
        config = SolverConfig(**kwargs)
    elif kwargs:
        raise TypeError("pass either config or keyword arguments, not both")
    if config.mode == "standard":
        return solve_standard(mu, nu, cost, config, record_history)
    if config.mode == "logDomain":
        return solve_log_domain(mu, nu, cost, config, record_history)
    if needs_log_domain(cost, config):
        logger.debug("auto mode: switching to log domain at p=%g eps=%g", config.p, config.eps)
        return solve_log_domain(mu, nu, cost, config, record_history)
    try:
        return solve_standard(mu, nu, cost, config, record_history)
    except KernelUnderflowError:
        return solve_log_domain(mu, nu, cost, config, record_history)


# -- parameter schedules ------------------------------------------------------

SCHEDULE_RULES = ("constant", "powerDecay", "geometric", "custom")


@dataclass(frozen=True)
class EpsSchedule:
    """Regularization as a function of the exponent ``p``.

    ``constant``: ``eps0``; ``powerDecay``: ``eps0 * p**(-alpha)``;
    ``geometric``: ``eps0 * ratio**p``; ``custom``: lookup in ``values``.
    """

    rule: str = "constant"
    eps0: float = 1.0
    alpha: float = 0.0
    ratio: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        if self.rule not in SCHEDULE_RULES:
            raise ValueError(f"unknown schedule rule {self.rule!r}")
        if self.rule != "custom" and not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if self.rule == "geometric" and not self.ratio > 0:
            raise ValueError("ratio must be positive")
        if self.rule == "custom" and any(e <= 0 for _, e in self.values):
            raise ValueError("custom eps values must be positive")

    @classmethod
    def constant(cls, eps):
        return cls("constant", eps0=eps)

    @classmethod
    def power_decay(cls, eps0, alpha):
        return cls("powerDecay", eps0=eps0, alpha=alpha)

    @classmethod
    def geometric(cls, eps0, ratio):
        return cls("geometric", eps0=eps0, ratio=ratio)

    @classmethod
    def custom(cls, mapping):
        return cls("custom", values=tuple(sorted((float(k), float(v)) for k, v in dict(mapping).items())))

    def log_at(self, p: float) -> float:
        """``log eps_p``; avoids overflow for geometric schedules at large ``p``."""
        if self.rule == "constant":
            return float(np.log(self.eps0))
        if self.rule == "powerDecay":
            return float(np.log(self.eps0) - self.alpha * np.log(p))
        if self.rule == "geometric":
            return float(np.log(self.eps0) + p * np.log(self.ratio))
        return float(np.log(self.__call__(p)))

    def __call__(self, p: float) -> float:
        if self.rule == "constant":
            return float(self.eps0)
        if self.rule == "custom":
            for key, val in self.values:
                if np.isclose(key, p, rtol=0, atol=1e-12):
                    return val
            raise KeyError(f"no eps value for p={p}")
        return float(np.exp(self.log_at(p)))


@dataclass
class ScheduleReport:
    p: np.ndarray
    root: np.ndarray          # eps_p^(1/p)
    condition: np.ndarray     # (1/p) log(1 + eps_p log p / (1+lam)^p)
    ratio: np.ndarray         # eps_p / (p (1+lam)^p)
    root_decreasing: bool
    condition_decreasing: bool
    ratio_decreasing: bool

    @property
    def flagged(self) -> dict:
        return {
            "root": not self.root_decreasing,
            "condition": not self.condition_decreasing,
            "ratio": not self.ratio_decreasing,
        }


def _strictly_decreasing(x: np.ndarray, rtol=1e-12) -> bool:
    if len(x) < 2:
        return False
    return bool(np.all(np.diff(x) < -rtol * np.maximum(np.abs(x[:-1]), 1e-300)))


def validate_schedule(schedule: EpsSchedule, lam: float, p_range) -> ScheduleReport:
    """Finite-range diagnostics for the limit conditions on ``eps_p``.

    Each diagnostic is evaluated on ``p_range`` and reported as decreasing
    when it is strictly decreasing over the second half of the range.
    Everything is computed from ``log eps_p`` so geometric schedules do not
    overflow.
    """
    p = np.asarray(sorted(p_range), dtype=float)
    if p.size == 0:
        raise ValueError("p_range must be nonempty")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    log_eps = np.array([schedule.log_at(q) for q in p])
    log_growth = p * np.log1p(lam)
    root = np.exp(log_eps / p)
    # log(1 + exp(t)) with t = log eps + log log p - p log(1+lam)
    with np.errstate(divide="ignore"):
        t = log_eps + np.log(np.log(p)) - log_growth
    condition = np.logaddexp(0.0, t) / p
    ratio = np.exp(log_eps - np.log(p) - log_growth)
    tail = slice(len(p) // 2, None)
    return ScheduleReport(
        p=p,
        root=root,
        condition=condition,
        ratio=ratio,
        root_decreasing=_strictly_decreasing(root[tail]),
        condition_decreasing=_strictly_decreasing(condition[tail]),
        ratio_decreasing=_strictly_decreasing(ratio[tail]),
    )


@dataclass
class DegenerateRecord:
    p: float
    eps: float
    entropy: float
    bound: float
    report: SolveReport = field(repr=False)


def degenerate_schedule_demo(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, p_list,
                             tol: float = 1e-12, max_iter: int = 50_000) -> list[DegenerateRecord]:
    """Solve with ``eps = 1/p`` on a cost bounded by ``1/2``.

    The entropy of each minimizer should not exceed ``p 2^{-p}``, so the
    plans collapse onto ``mu x nu`` as ``p`` grows.
    """
    c = cost.entries if hasattr(cost, "entries") else np.asarray(cost, dtype=float)
    if c.max() > 0.5:
        raise InstanceError(f"cost must be bounded by 1/2, max is {c.max()!r}")
    records = []
    for p in p_list:
        cfg = SolverConfig(p=float(p), eps=1.0 / p, tol=tol, max_iter=max_iter, mode="auto")
        rep = solve(mu, nu, cost, cfg)
        records.append(DegenerateRecord(float(p), 1.0 / p, rep.entropy_value, p * 2.0 ** (-p), rep))
    return records

"""
scikit-learn style wrappers.

``fit(X, Y, sample_weight=None, target_weight=None)`` takes the support
points of the source and target measures as ``(n, d)`` arrays; weights
default to uniform. ``transform`` maps source points through the
barycentric projection of the fitted plan.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bottleneck import solve_bottleneck
from .measures import METRICS, DiscreteMeasure, build_cost, support_set
from .sinkhorn import MODES, SolverConfig, solve


def check_measure(X, weights=None) -> DiscreteMeasure:
    """Validate support points and weights and build a :class:`DiscreteMeasure`."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if weights is None:
        return DiscreteMeasure.uniform(X)
    w = check_array(weights, ensure_2d=False, dtype=np.float64).ravel()
    if w.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} points but {w.shape[0]} weights")
    return DiscreteMeasure(X, w)


class _PlanTransformMixin:
    def transform(self, X):
        """Barycentric image ``sum_j gamma_ij y_j / mu_i`` of each row of ``X``.

        Rows that are not fitted source points take the image of the nearest
        fitted source point.
        """
        check_is_fitted(self, "coupling_")
        X = check_array(X, dtype=np.float64)
        src = self.coupling_.mu.points
        if X.shape[1] != src.shape[1]:
            raise ValueError(f"X has {X.shape[1]} features, fitted on {src.shape[1]}")
        g = self.coupling_.entries
        images = (g @ self.coupling_.nu.points) / g.sum(axis=1, keepdims=True)
        nearest = np.argmin(((X[:, None, :] - src[None, :, :]) ** 2).sum(axis=-1), axis=1)
        return images[nearest]

    def fit_transform(self, X, Y, sample_weight=None, target_weight=None):
        return self.fit(X, Y, sample_weight, target_weight).transform(X)


class EntropicInfTransport(_PlanTransformMixin, BaseEstimator):
    """Entropic approximation of supremal-cost transport.

    Minimizes ``(sum gamma c^p + eps H(gamma | mu x nu))^(1/p)`` over plans
    with the given marginals, with ``c = scale * metric + shift``.

    Parameters
    ----------
    p : float, default=5.0
    eps : float, default=1.0
    metric : {"euclidean", "chebyshev"}
    scale, shift : float
        Affine rescale of the ground metric.
    mode : {"auto", "standard", "logDomain"}
    tol : float, default=1e-5
        L1 marginal error at which iterations stop.
    max_iter : int, default=50000

    Attributes
    ----------
    coupling_ : Coupling
    value_ : float
        ``J_{p,eps}`` at the fitted plan.
    entropy_ : float
    n_iter_ : int
    converged_ : bool
    marginal_errors_ : tuple of float
    report_ : SolveReport
    """

    def __init__(self, p=5.0, eps=1.0, metric="euclidean", scale=1.0, shift=0.0, mode="auto",
                 tol=1e-5, max_iter=50_000):
        self.p = p
        self.eps = eps
        self.metric = metric
        self.scale = scale
        self.shift = shift
        self.mode = mode
        self.tol = tol
        self.max_iter = max_iter

    def _validate_params(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def fit(self, X, Y, sample_weight=None, target_weight=None):
        self._validate_params()
        mu = check_measure(X, sample_weight)
        nu = check_measure(Y, target_weight)
        cost = build_cost(mu, nu, self.metric, self.scale, self.shift)
        cfg = SolverConfig(p=float(self.p), eps=float(self.eps), max_iter=int(self.max_iter),
                           tol=float(self.tol), mode=self.mode)
        rep = solve(mu, nu, cost, cfg)
        self.cost_ = cost
        self.report_ = rep
        self.coupling_ = rep.coupling
        self.value_ = rep.value
        self.entropy_ = rep.entropy_value
        self.n_iter_ = rep.iterations
        self.converged_ = rep.converged
        self.marginal_errors_ = rep.marginal_err_l1
        self.n_features_in_ = mu.dim
        return self

    def support(self, rel_tau=1e-9):
        check_is_fitted(self, "coupling_")
        return support_set(self.coupling_, rel_tau=rel_tau, p=self.p, eps=self.eps)


class BottleneckTransport(_PlanTransformMixin, BaseEstimator):
    """Exact minimizer of the essential supremum of the cost.

    Attributes
    ----------
    value_ : float
        The bottleneck value ``v_inf``.
    coupling_ : Coupling
        One optimal plan.
    critical_pair_ : tuple of int
    """

    def __init__(self, metric="euclidean", scale=1.0, shift=0.0):
        self.metric = metric
        self.scale = scale
        self.shift = shift

    def fit(self, X, Y, sample_weight=None, target_weight=None):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        mu = check_measure(X, sample_weight)
        nu = check_measure(Y, target_weight)
        cost = build_cost(mu, nu, self.metric, self.scale, self.shift)
        res = solve_bottleneck(mu, nu, cost)
        self.cost_ = cost
        self.result_ = res
        self.value_ = res.value
        self.coupling_ = res.witness_plan
        self.critical_pair_ = res.critical_pair
        self.n_features_in_ = mu.dim
        return self

    def score(self, X=None, Y=None):
        """Negative bottleneck value (larger is better, as sklearn expects)."""
        check_is_fitted(self, "value_")
        return -self.value_

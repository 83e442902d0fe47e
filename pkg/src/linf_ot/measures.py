"""
Discrete measures, cost matrices, couplings and the functionals evaluated on them.

All arrays are float64. Entropy uses the convention ``0 log 0 = 0``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRICS = ("euclidean", "chebyshev")

WEIGHT_SUM_TOL = 1e-12
MIN_WEIGHT = 1e-15
DEFAULT_REL_TAU = 1e-9


class InstanceError(ValueError):
    """Raised when measures, costs or couplings are malformed."""


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure ``sum_i w_i delta_{x_i}``.

    Parameters
    ----------
    points : array-like, shape (n, d)
        Pairwise distinct support points.
    weights : array-like, shape (n,)
        Strictly positive weights summing to one.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InstanceError("points must be a non-empty (n, d) array")
        if w.shape[0] != pts.shape[0]:
            raise InstanceError(
                f"got {pts.shape[0]} points but {w.shape[0]} weights"
            )
        if not np.all(np.isfinite(pts)):
            raise InstanceError("points must be finite")
        if np.any(w < MIN_WEIGHT):
            raise InstanceError(f"weights must be >= {MIN_WEIGHT}")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise InstanceError(f"weights sum to {w.sum()!r}, expected 1")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InstanceError("support points must be pairwise distinct")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        n = len(pts)
        w = np.full(n, 1.0 / n)
        # absorb round-off so the sum is within WEIGHT_SUM_TOL
        w[-1] = 1.0 - w[:-1].sum()
        return cls(pts, w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def shannon_entropy(self) -> float:
        return float(-np.sum(self.weights * np.log(self.weights)))

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteMeasure":
        return cls(np.asarray(d["points"], dtype=float), np.asarray(d["weights"], dtype=float))


@dataclass(frozen=True)
class CostMatrix:
    """Cost evaluations ``a * metric(x_i, y_j) + b`` on a pair of supports."""

    entries: np.ndarray
    metric: str = "euclidean"
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        c = np.array(self.entries, dtype=float)
        if c.ndim != 2:
            raise InstanceError("cost entries must be a 2-d array")
        if self.metric not in METRICS:
            raise InstanceError(f"unknown metric {self.metric!r}")
        if not np.all(np.isfinite(c)):
            raise InstanceError("cost entries must be finite")
        if np.any(c < 0):
            raise InstanceError("cost entries must be nonnegative")
        if self.shift >= 1 and np.any(c < 1):
            raise InstanceError("shift >= 1 requires every entry >= 1")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def rescaled(self, scale: float = 1.0, shift: float = 0.0) -> "CostMatrix":
        """Apply a further affine map ``scale * c + shift``; the tags compose."""
        if scale <= 0 or shift < 0:
            raise InstanceError("rescale needs scale > 0 and shift >= 0")
        return CostMatrix(
            scale * self.entries + shift,
            metric=self.metric,
            scale=scale * self.scale,
            shift=scale * self.shift + shift,
        )


@dataclass(frozen=True)
class Coupling:
    """An ``N x M`` nonnegative matrix together with its intended marginals.

    Marginal feasibility is not enforced at construction because solver
    output is only feasible up to the stopping tolerance; see
    :func:`marginal_errors` and :meth:`check_marginals`.
    """

    entries: np.ndarray
    mu: DiscreteMeasure
    nu: DiscreteMeasure

    def __post_init__(self):
        g = np.array(self.entries, dtype=float)
        if g.shape != (self.mu.size, self.nu.size):
            raise InstanceError(
                f"coupling shape {g.shape} does not match marginals "
                f"({self.mu.size}, {self.nu.size})"
            )
        if not np.all(np.isfinite(g)):
            raise InstanceError("coupling entries must be finite")
        if np.any(g < 0):
            raise InstanceError("coupling entries must be nonnegative")
        g.setflags(write=False)
        object.__setattr__(self, "entries", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @classmethod
    def product(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> "Coupling":
        return cls(np.outer(mu.weights, nu.weights), mu, nu)

    @classmethod
    def from_permutation(cls, mu, nu, sigma) -> "Coupling":
        """Plan sending atom ``i`` to atom ``sigma[i]`` with mass ``mu_i``."""
        g = np.zeros((mu.size, nu.size))
        g[np.arange(mu.size), np.asarray(sigma)] = mu.weights
        return cls(g, mu, nu)

    def check_marginals(self, tol: float = 1e-9) -> bool:
        err_mu, err_nu = marginal_errors(self)
        return err_mu <= tol and err_nu <= tol

    def density(self) -> np.ndarray:
        """Density with respect to the product of the marginals."""
        return self.entries / np.outer(self.mu.weights, self.nu.weights)

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "entries": self.entries.ravel(order="C").tolist(),
            "row_sums": self.entries.sum(axis=1).tolist(),
            "col_sums": self.entries.sum(axis=0).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, mu, nu, checksum_tol: float = 1e-12) -> "Coupling":
        n, m = d["shape"]
        g = np.asarray(d["entries"], dtype=float).reshape(n, m)
        for key, axis in (("row_sums", 1), ("col_sums", 0)):
            if key in d and np.max(np.abs(g.sum(axis=axis) - np.asarray(d[key]))) > checksum_tol:
                raise InstanceError(f"{key} checksum mismatch in serialized plan")
        return cls(g, mu, nu)


@dataclass(frozen=True)
class SupportSet:
    """Index pairs ``(i, j)`` with ``gamma_ij > tau``."""

    pairs: tuple
    tau: float
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __contains__(self, item):
        return tuple(item) in set(self.pairs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.pairs, dtype=int).reshape(-1, 2)


def _pairwise(x: np.ndarray, y: np.ndarray, metric: str) -> np.ndarray:
    diff = np.abs(x[:, None, :] - y[None, :, :])
    if metric == "euclidean":
        return np.sqrt(np.sum(diff**2, axis=-1))
    if metric == "chebyshev":
        return np.max(diff, axis=-1)
    raise InstanceError(f"unknown metric {metric!r}")


def build_cost(mu, nu, metric="euclidean", scale=1.0, shift=0.0) -> CostMatrix:
    """Cost matrix ``scale * metric(x_i, y_j) + shift``.

    Examples
    --------
    >>> mu = DiscreteMeasure([[0.0, 0.0]], [1.0])
    >>> nu = DiscreteMeasure([[1.0, 2.0]], [1.0])
    >>> float(build_cost(mu, nu).entries[0, 0])  # doctest: +ELLIPSIS
    2.236067977...
    >>> float(build_cost(mu, nu, "chebyshev").entries[0, 0])
    2.0
    """
    if mu.dim != nu.dim:
        raise InstanceError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if scale <= 0 or shift < 0:
        raise InstanceError("rescale needs scale > 0 and shift >= 0")
    c = scale * _pairwise(mu.points, nu.points, metric) + shift
    return CostMatrix(c, metric=metric, scale=scale, shift=shift)


def _entries(obj) -> np.ndarray:
    return obj.entries if hasattr(obj, "entries") else np.asarray(obj, dtype=float)


def entropy(gamma: Coupling) -> float:
    """Relative entropy ``H(gamma | mu x nu)`` in nats."""
    g = gamma.entries
    pos = g > 0
    ref = np.outer(gamma.mu.weights, gamma.nu.weights)
    return float(np.sum(g[pos] * np.log(g[pos] / ref[pos])))


def crude_entropy_bound(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """``-sum mu_i log mu_i - sum nu_j log nu_j``, an upper bound on the entropy of any plan."""
    return mu.shannon_entropy() + nu.shannon_entropy()


def support_threshold(gamma, rel_tau: float = DEFAULT_REL_TAU) -> float:
    """Absolute threshold ``rel_tau * max(gamma)``."""
    return float(rel_tau * np.max(_entries(gamma)))


def support_set(gamma: Coupling, tau: float | None = None, rel_tau: float = DEFAULT_REL_TAU,
                **provenance) -> SupportSet:
    """Pairs with mass strictly above ``tau`` (default: relative threshold)."""
    if tau is None:
        tau = support_threshold(gamma, rel_tau)
    ii, jj = np.nonzero(gamma.entries > tau)
    return SupportSet(tuple(zip(ii.tolist(), jj.tolist())), float(tau), dict(provenance))


def ess_sup(gamma, cost, tau: float = 0.0) -> float:
    """Largest cost over cells carrying mass strictly above ``tau``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    mask = _entries(gamma) > tau
    if not mask.any():
        raise InstanceError(f"empty support at threshold {tau}")
    return float(np.max(_entries(cost)[mask]))


def lp_norm(gamma, cost, p: float) -> float:
    """``(sum gamma_ij c_ij^p)^(1/p)``, evaluated with the max factored out."""
    g = _entries(gamma)
    c = _entries(cost)
    mask = g > 0
    if not mask.any():
        return 0.0
    s = float(np.max(c[mask]))
    if s == 0.0:
        return 0.0
    return s * float(np.sum(g[mask] * (c[mask] / s) ** p)) ** (1.0 / p)


def eval_jpe(gamma: Coupling, cost, p: float, eps: float) -> float:
    """Penalized functional ``(sum gamma c^p + eps * H)^(1/p)``.

    The largest cost on the support is factored out so that ``c^p`` never
    overflows for large ``p``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = gamma.entries
    c = _entries(cost)
    h = entropy(gamma)
    mask = g > 0
    s = float(np.max(c[mask])) if mask.any() else 0.0
    if s == 0.0:
        inner = eps * h
        if inner < 0:
            warnings.warn(f"negative inner value {inner!r} clamped to 0", RuntimeWarning)
            inner = 0.0
        return inner ** (1.0 / p)
    transport = float(np.sum(g[mask] * (c[mask] / s) ** p))
    if h > 0:
        penalty = float(np.exp(np.log(eps * h) - p * np.log(s)))
    elif h < 0:
        penalty = -float(np.exp(np.log(eps * -h) - p * np.log(s)))
    else:
        penalty = 0.0
    inner = transport + penalty
    if inner < 0:
        warnings.warn(f"negative inner value {inner!r} clamped to 0", RuntimeWarning)
        inner = 0.0
    return s * inner ** (1.0 / p)


def marginal_errors(gamma: Coupling, norm: str = "l1") -> tuple[float, float]:
    """Errors ``(|gamma 1 - mu|, |gamma^T 1 - nu|)`` in the L1 or max norm."""
    g = gamma.entries
    r = g.sum(axis=1) - gamma.mu.weights
    c = g.sum(axis=0) - gamma.nu.weights
    if norm == "l1":
        return float(np.abs(r).sum()), float(np.abs(c).sum())
    if norm == "max":
        return float(np.abs(r).max()), float(np.abs(c).max())
    raise ValueError(f"unknown norm {norm!r}")


@dataclass(frozen=True)
class Instance:
    """A pair of measures plus the ground cost used between them."""

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    metric: str = "euclidean"
    scale: float = 1.0
    shift: float = 0.0
    name: str = ""

    def cost(self) -> CostMatrix:
        return build_cost(self.mu, self.nu, self.metric, self.scale, self.shift)

    def with_rescale(self, scale: float, shift: float = 0.0) -> "Instance":
        return Instance(self.mu, self.nu, self.metric, scale, shift, self.name)

    def to_dict(self) -> dict:
        d = {
            "mu": self.mu.to_dict(),
            "nu": self.nu.to_dict(),
            "metric": self.metric,
            "rescale": {"scale": self.scale, "shift": self.shift},
        }
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        rescale = d.get("rescale", {})
        return cls(
            DiscreteMeasure.from_dict(d["mu"]),
            DiscreteMeasure.from_dict(d["nu"]),
            d.get("metric", "euclidean"),
            float(rescale.get("scale", 1.0)),
            float(rescale.get("shift", 0.0)),
            d.get("name", ""),
        )


def save_instance(instance: Instance, path) -> None:
    # repr round-trips doubles, json uses it for floats
    Path(path).write_text(json.dumps(instance.to_dict(), indent=1))


def load_instance(path) -> Instance:
    return Instance.from_dict(json.loads(Path(path).read_text()))


def save_plan(gamma: Coupling, path, **extra) -> None:
    d = gamma.to_dict()
    d.update(extra)
    Path(path).write_text(json.dumps(d))


def load_plan(path, mu, nu) -> Coupling:
    d = json.loads(Path(path).read_text())
    if "coupling" in d:
        d = d["coupling"]
    return Coupling.from_dict(d, mu, nu)

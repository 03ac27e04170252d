"""Distribution distances over embedding sets.

Four estimators are provided:

* ``fad``: closed-form Bures-Wasserstein distance between Gaussian fits.
* ``kad``: unbiased squared MMD with a Gaussian RBF kernel.
* ``sinkhorn_divergence``: debiased entropic OT with squared-Euclidean cost.
* ``exact_ot``: unregularised discrete OT (assignment or network simplex).

Sinkhorn regularisation is cost-relative by default: the effective epsilon is
``eps_reg * mean(C_xy)`` so that one ``eps_reg`` means the same thing for embeddings of
any scale. Pass ``relative_eps=False`` to use ``eps_reg`` as an absolute value.
"""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field
from enum import Enum
import logging
import math
from typing import Union
import warnings

import numpy as np
import numpy.typing as npt
import ot
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from otward import config
from otward.errors import DegenerateBandwidth
from otward.errors import DimensionMismatch
from otward.errors import IndefiniteInput
from otward.errors import NonPositiveEpsilon
from otward.errors import SolverFailure
from otward.errors import TooFewSamples
from otward.linalg import as_matrix
from otward.linalg import Matrix
from otward.linalg import pairwise_dists
from otward.linalg import pairwise_sq_dists
from otward.linalg import spd_sqrt
from otward.linalg import SYMMETRY_ATOL
from otward.linalg import Vector


logger = logging.getLogger(__name__)

FAD_CLAMP_RTOL = 1e-8


@dataclass
class EmbeddingSet:
    """An ``n x d`` matrix of embeddings with optional integer labels per row."""

    points: Matrix
    labels: npt.NDArray[np.int64] | None = None
    source_id: str | None = None

    def __post_init__(self) -> None:
        self.points = as_matrix(self.points, "points")
        if self.points.shape[0] < 1:
            raise TooFewSamples("an embedding set needs at least one row")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != self.points.shape[0]:
                raise DimensionMismatch(
                    f"{self.labels.shape[0]} labels for {self.points.shape[0]} rows"
                )

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])

    def ids(self) -> list[str]:
        return [str(i) for i in range(self.n)]

    def subset(self, index: npt.ArrayLike) -> EmbeddingSet:
        """Rows selected by a boolean mask or an index array."""
        idx = np.asarray(index)
        return EmbeddingSet(
            points=self.points[idx],
            labels=None if self.labels is None else self.labels[idx],
            source_id=self.source_id,
        )


EmbeddingLike = Union[EmbeddingSet, npt.ArrayLike]


def as_embedding_set(e: EmbeddingLike) -> EmbeddingSet:
    return e if isinstance(e, EmbeddingSet) else EmbeddingSet(points=np.asarray(e))


@dataclass(frozen=True)
class GaussianMoments:
    mean: Vector
    cov: Matrix

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = as_matrix(self.cov, "cov")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(f"mean of length {mean.shape[0]} with cov {cov.shape}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_ATOL:
            raise IndefiniteInput("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return int(self.mean.shape[0])


@dataclass(frozen=True)
class TransportPlan:
    weights: Matrix
    row_marginal: Vector
    col_marginal: Vector
    total_cost: float

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.weights.shape[0]), int(self.weights.shape[1])

    def marginal_violation(self) -> float:
        rows = np.abs(self.weights.sum(axis=1) - self.row_marginal)
        cols = np.abs(self.weights.sum(axis=0) - self.col_marginal)
        return float(max(rows.max(initial=0.0), cols.max(initial=0.0)))


class CostPower(str, Enum):
    SQUARED = "squared"
    LINEAR = "linear"


class BandwidthRule(str, Enum):
    EVAL_MEDIAN = "eval_median"
    POOLED_MEDIAN = "pooled_median"
    FIXED = "fixed"


@dataclass(frozen=True)
class KadConfig:
    """RBF bandwidth selection. The default follows the eval-only median convention."""

    bandwidth_rule: BandwidthRule = BandwidthRule.EVAL_MEDIAN
    sigma: float | None = None

    def __post_init__(self) -> None:
        if self.bandwidth_rule == BandwidthRule.FIXED:
            if self.sigma is None or not self.sigma > 0.0:
                raise DegenerateBandwidth("a fixed bandwidth requires sigma > 0")

    @classmethod
    def fixed(cls, sigma: float) -> KadConfig:
        return cls(bandwidth_rule=BandwidthRule.FIXED, sigma=sigma)


@dataclass(frozen=True)
class SinkhornConfig:
    eps_reg: float = config.DEFAULT_EPS_REG
    max_iter: int = config.DEFAULT_MAX_ITER
    tol: float = config.DEFAULT_TOL
    relative_eps: bool = True

    def __post_init__(self) -> None:
        if not self.eps_reg > 0.0:
            raise NonPositiveEpsilon(f"eps_reg must be positive, got {self.eps_reg}")
        assert self.max_iter >= 1, "max_iter must be at least 1"
        assert self.tol > 0.0, "tol must be positive"


@dataclass(frozen=True)
class EntropicSolution:
    """One regularised OT problem solved in the log domain."""

    value: float
    plan: Matrix
    f: Vector
    g: Vector
    iterations: int
    converged: bool
    kl: float
    marginal_violation: float


@dataclass(frozen=True)
class SinkhornResult:
    divergence: float
    plan_xy: TransportPlan
    iterations: int
    converged: bool
    epsilon_reg: float
    effective_eps: float = 0.0
    ot_xy: float = 0.0
    ot_xx: float = 0.0
    ot_yy: float = 0.0
    kl_xy: float = 0.0
    kl_xx: float = 0.0
    kl_yy: float = 0.0
    plan_xx: Matrix | None = field(default=None, repr=False)
    plan_yy: Matrix | None = field(default=None, repr=False)
    relative_eps: bool = True
    cost_scale: float = 0.0


def fit_moments(e: EmbeddingLike, ddof: int = 1) -> GaussianMoments:
    """Mean and covariance; ``ddof=1`` gives the unbiased (divisor n-1) estimate."""
    points = as_embedding_set(e).points
    n = points.shape[0]
    if n < 2:
        raise TooFewSamples(f"moment fitting needs at least 2 rows, got {n}")
    mean = points.mean(axis=0)
    centred = points - mean
    cov = centred.T @ centred / (n - ddof)
    return GaussianMoments(mean=mean, cov=0.5 * (cov + cov.T))


def fad(a: GaussianMoments, b: GaussianMoments) -> float:
    """Squared Bures-Wasserstein distance between two Gaussians.

    ``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})``
    """
    if a.d != b.d:
        raise DimensionMismatch(f"moments of dimension {a.d} and {b.d}")
    root_a = spd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    cross = spd_sqrt(0.5 * (inner + inner.T))
    diff = a.mean - b.mean
    trace_sum = float(np.trace(a.cov) + np.trace(b.cov))
    value = float(diff @ diff) + trace_sum - 2.0 * float(np.trace(cross))
    slack = FAD_CLAMP_RTOL * max(1.0, trace_sum)
    if value < -slack:
        raise IndefiniteInput(f"FAD evaluated to {value:.6e}; the matrix square root is broken")
    return max(value, 0.0)


def _cost_matrix(x: Matrix, y: Matrix, cost_power: CostPower) -> Matrix:
    if cost_power == CostPower.SQUARED:
        return pairwise_sq_dists(x, y)
    return pairwise_dists(x, y)


def exact_ot(
    x: EmbeddingLike,
    y: EmbeddingLike,
    cost_power: CostPower | str = CostPower.SQUARED,
) -> TransportPlan:
    """Unregularised OT between uniform empirical measures.

    Equal sizes are solved as an assignment problem; unequal sizes use the network
    simplex with integer masses ``L/n`` and ``L/m``, ``L = lcm(n, m)``.
    """
    xs, ys = as_embedding_set(x), as_embedding_set(y)
    if xs.d != ys.d:
        raise DimensionMismatch(f"sets of dimension {xs.d} and {ys.d}")
    cost = _cost_matrix(xs.points, ys.points, CostPower(cost_power))
    n, m = cost.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)

    if n == m:
        rows, cols = linear_sum_assignment(cost)
        weights = np.zeros((n, m))
        weights[rows, cols] = 1.0 / n
        total = math.fsum(cost[rows, cols]) / n
        return TransportPlan(weights=weights, row_marginal=a, col_marginal=b, total_cost=total)

    scale = math.lcm(n, m)
    mass_a = np.full(n, float(scale // n))
    mass_b = np.full(m, float(scale // m))
    plan, log = ot.emd(mass_a, mass_b, cost, numItermax=max(100_000, 50 * n * m), log=True)
    if log.get("result_code", 1) != 1:
        raise SolverFailure(f"network simplex failed: {log.get('warning')}")
    weights = np.asarray(plan, dtype=np.float64) / scale
    total = math.fsum((weights * cost).ravel())
    return TransportPlan(weights=weights, row_marginal=a, col_marginal=b, total_cost=total)


def w2_squared(x: EmbeddingLike, y: EmbeddingLike) -> float:
    return exact_ot(x, y, CostPower.SQUARED).total_cost


def w1(x: EmbeddingLike, y: EmbeddingLike) -> float:
    return exact_ot(x, y, CostPower.LINEAR).total_cost


def entropic_ot(
    cost: Matrix,
    eps: float,
    a: Vector | None = None,
    b: Vector | None = None,
    max_iter: int = config.DEFAULT_MAX_ITER,
    tol: float = config.DEFAULT_TOL,
) -> EntropicSolution:
    """Log-domain Sinkhorn for ``min <P, C> + eps KL(P | a b^T)``.

    Potentials start at zero. Each iteration updates ``g`` (columns become exact),
    then ``f``; the run stops when the row-marginal violation of the current plan is
    below ``tol``. The returned value is the dual objective ``<a, f> + <b, g>``.
    """
    if not eps > 0.0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {eps}")
    n, m = cost.shape
    a = np.full(n, 1.0 / n) if a is None else a
    b = np.full(m, 1.0 / m) if b is None else b
    log_a = np.log(a)
    log_b = np.log(b)

    f = np.zeros(n)
    g = np.zeros(m)
    err = math.inf
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        g = -eps * logsumexp(log_a[:, None] + (f[:, None] - cost) / eps, axis=0)
        f_next = -eps * logsumexp(log_b[None, :] + (g[None, :] - cost) / eps, axis=1)
        err = float(np.max(np.abs(a * np.expm1((f - f_next) / eps))))
        if err < tol:
            converged = True
            break
        f = f_next

    log_plan = (f[:, None] + g[None, :] - cost) / eps
    plan = np.exp(log_plan + log_a[:, None] + log_b[None, :])
    value = float(a @ f + b @ g)
    kl = float(np.sum(plan * log_plan))
    return EntropicSolution(
        value=value,
        plan=plan,
        f=f,
        g=g,
        iterations=iterations,
        converged=converged,
        kl=kl,
        marginal_violation=err,
    )


def effective_epsilon(cost_xy: Matrix, eps_reg: float, relative: bool = True) -> float:
    if not eps_reg > 0.0:
        raise NonPositiveEpsilon(f"eps_reg must be positive, got {eps_reg}")
    if not relative:
        return float(eps_reg)
    scale = float(cost_xy.mean())
    return float(eps_reg) * scale if scale > 0.0 else float(eps_reg)


def sinkhorn_divergence(
    x: EmbeddingLike,
    y: EmbeddingLike,
    eps_reg: float = config.DEFAULT_EPS_REG,
    max_iter: int = config.DEFAULT_MAX_ITER,
    tol: float = config.DEFAULT_TOL,
    relative_eps: bool = True,
) -> SinkhornResult:
    """Debiased Sinkhorn divergence ``OT(x,y) - OT(x,x)/2 - OT(y,y)/2``.

    The two self terms reuse the effective epsilon of the cross term. Non-convergence
    is reported through ``converged`` and a warning, never raised.
    """
    xs, ys = as_embedding_set(x), as_embedding_set(y)
    if xs.d != ys.d:
        raise DimensionMismatch(f"sets of dimension {xs.d} and {ys.d}")
    cost_xy = pairwise_sq_dists(xs.points, ys.points)
    eps = effective_epsilon(cost_xy, eps_reg, relative=relative_eps)

    sol_xy = entropic_ot(cost_xy, eps, max_iter=max_iter, tol=tol)
    sol_xx = entropic_ot(pairwise_sq_dists(xs.points, xs.points), eps, max_iter=max_iter, tol=tol)
    sol_yy = entropic_ot(pairwise_sq_dists(ys.points, ys.points), eps, max_iter=max_iter, tol=tol)

    divergence = sol_xy.value - 0.5 * sol_xx.value - 0.5 * sol_yy.value
    converged = sol_xy.converged and sol_xx.converged and sol_yy.converged
    iterations = max(sol_xy.iterations, sol_xx.iterations, sol_yy.iterations)
    if not converged:
        warnings.warn(
            f"Sinkhorn did not converge in {max_iter} iterations "
            f"(eps_reg={eps_reg}, marginal violation {sol_xy.marginal_violation:.2e})."
        )
    logger.debug(
        "sinkhorn eps=%.4g iterations=%d divergence=%.6g", eps, iterations, divergence
    )

    plan = TransportPlan(
        weights=sol_xy.plan,
        row_marginal=np.full(xs.n, 1.0 / xs.n),
        col_marginal=np.full(ys.n, 1.0 / ys.n),
        total_cost=math.fsum((sol_xy.plan * cost_xy).ravel()),
    )
    return SinkhornResult(
        divergence=float(divergence),
        plan_xy=plan,
        iterations=iterations,
        converged=converged,
        epsilon_reg=float(eps_reg),
        effective_eps=eps,
        ot_xy=sol_xy.value,
        ot_xx=sol_xx.value,
        ot_yy=sol_yy.value,
        kl_xy=sol_xy.kl,
        kl_xx=sol_xx.kl,
        kl_yy=sol_yy.kl,
        plan_xx=sol_xx.plan,
        plan_yy=sol_yy.plan,
        relative_eps=relative_eps,
        cost_scale=float(cost_xy.mean()),
    )


def sinkhorn_with_config(
    x: EmbeddingLike, y: EmbeddingLike, cfg: SinkhornConfig
) -> SinkhornResult:
    return sinkhorn_divergence(
        x,
        y,
        eps_reg=cfg.eps_reg,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        relative_eps=cfg.relative_eps,
    )


def _upper_triangle(mat: Matrix) -> Vector:
    rows, cols = np.triu_indices(mat.shape[0], k=1)
    return mat[rows, cols]


def kad_bandwidth(x_ref: EmbeddingLike, y_eval: EmbeddingLike, cfg: KadConfig) -> float:
    if cfg.bandwidth_rule == BandwidthRule.FIXED:
        assert cfg.sigma is not None
        return float(cfg.sigma)
    ys = as_embedding_set(y_eval).points
    if cfg.bandwidth_rule == BandwidthRule.POOLED_MEDIAN:
        ys = np.vstack([as_embedding_set(x_ref).points, ys])
    sigma = float(np.median(_upper_triangle(pairwise_dists(ys, ys))))
    if not sigma > 0.0:
        raise DegenerateBandwidth("median pairwise distance is zero")
    return sigma


def kad(x_ref: EmbeddingLike, y_eval: EmbeddingLike, cfg: KadConfig | None = None) -> float:
    """Unbiased MMD^2 with kernel ``exp(-||a - b||^2 / (2 sigma^2))``.

    Within-set sums exclude the diagonal; the cross term averages all ``n m`` pairs.
    The estimate can be slightly negative and is returned as is.
    """
    cfg = cfg or KadConfig()
    xs, ys = as_embedding_set(x_ref), as_embedding_set(y_eval)
    if xs.n < 2 or ys.n < 2:
        raise TooFewSamples(f"KAD needs at least 2 rows per set, got {xs.n} and {ys.n}")
    if xs.d != ys.d:
        raise DimensionMismatch(f"sets of dimension {xs.d} and {ys.d}")
    sigma = kad_bandwidth(xs, ys, cfg)
    gamma = 1.0 / (2.0 * sigma * sigma)

    k_xx = np.exp(-gamma * pairwise_sq_dists(xs.points, xs.points))
    k_yy = np.exp(-gamma * pairwise_sq_dists(ys.points, ys.points))
    k_xy = np.exp(-gamma * pairwise_sq_dists(xs.points, ys.points))
    n, m = xs.n, ys.n
    term_xx = (k_xx.sum() - np.trace(k_xx)) / (n * (n - 1))
    term_yy = (k_yy.sum() - np.trace(k_yy)) / (m * (m - 1))
    return float(term_xx + term_yy - 2.0 * k_xy.mean())


def per_sample_costs(plan: TransportPlan, cost: Matrix) -> Vector:
    """Column marginals of ``T * C``: the transport cost attributed to each eval sample."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != plan.weights.shape:
        raise DimensionMismatch(f"plan {plan.weights.shape} against cost {cost.shape}")
    return (plan.weights * cost).sum(axis=0)


def gelbrich_ceiling(x: EmbeddingLike, y: EmbeddingLike) -> tuple[float, float]:
    """``(FAD, W2^2)`` with plug-in moments of the two empirical measures.

    The plug-in covariance (divisor n) makes the left side the Gaussian lower bound of
    the right side; the unbiased covariance inflates it by n/(n-1) and can cross it.
    """
    return fad(fit_moments(x, ddof=0), fit_moments(y, ddof=0)), w2_squared(x, y)


def mmd_w1_ceiling(x: EmbeddingLike, y: EmbeddingLike, sigma: float) -> tuple[float, float]:
    """``(sqrt(max(KAD, 0)), W1 / sigma)`` for a fixed bandwidth."""
    value = kad(x, y, KadConfig.fixed(sigma))
    return math.sqrt(max(value, 0.0)), w1(x, y) / sigma

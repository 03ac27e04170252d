from __future__ import annotations

from dataclasses import dataclass
from dataclasses import replace
import logging
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.stats import rankdata

from otward import config
from otward.errors import DegenerateCleanCosts
from otward.errors import DimensionMismatch
from otward.errors import EmptyInput
from otward.linalg import pairwise_sq_dists
from otward.linalg import Vector
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import per_sample_costs
from otward.metrics import sinkhorn_divergence


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-sample transport costs of an eval set against a reference set.

    ``converged`` is False when the underlying Sinkhorn run hit its iteration cap; the
    costs are still reported but should be read as degraded.
    """

    costs: Vector
    sample_ids: list[str]
    top_k: list[tuple[str, float]]
    total_cost: float
    eps_reg: float
    converged: bool = True
    auroc: float | None = None
    separation_ratio: float | None = None

    def ranking(self) -> npt.NDArray[np.intp]:
        """Eval indices ordered by decreasing cost; ties keep index order."""
        return np.argsort(-self.costs, kind="stable")

    def top(self, k: int) -> list[tuple[str, float]]:
        return [(self.sample_ids[i], float(self.costs[i])) for i in self.ranking()[:k]]

    def with_mask(self, mask: npt.ArrayLike) -> DiagnosticsReport:
        """Fill ``auroc`` and ``separation_ratio`` from a ground-truth contamination mask."""
        flags = np.asarray(mask, dtype=bool).reshape(-1)
        if flags.shape[0] != self.costs.shape[0]:
            raise DimensionMismatch(
                f"mask of length {flags.shape[0]} for {self.costs.shape[0]} costs"
            )
        clean, contaminated = self.costs[~flags], self.costs[flags]
        return replace(
            self,
            auroc=auroc(clean, contaminated),
            separation_ratio=separation_ratio(clean, contaminated),
        )

    def to_rows(self) -> list[dict[str, Any]]:
        """CSV rows ``index, id, cost, rank`` in decreasing cost order."""
        return [
            {
                "index": int(i),
                "id": self.sample_ids[i],
                "cost": float(self.costs[i]),
                "rank": rank,
            }
            for rank, i in enumerate(self.ranking(), start=1)
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "costs": [float(c) for c in self.costs],
            "sample_ids": list(self.sample_ids),
            "top_k": [{"id": i, "cost": c} for i, c in self.top_k],
            "total_cost": self.total_cost,
            "eps_reg": self.eps_reg,
            "converged": self.converged,
            "auroc": self.auroc,
            "separation_ratio": self.separation_ratio,
        }


def diagnose(
    ref: EmbeddingLike,
    eval: EmbeddingLike,
    eps_reg: float = config.DEFAULT_EPS_REG,
    top_k: int = config.DEFAULT_TOP_K,
    max_iter: int = config.DEFAULT_MAX_ITER,
    tol: float = config.DEFAULT_TOL,
    relative_eps: bool = True,
    sample_ids: list[str] | None = None,
) -> DiagnosticsReport:
    """Attribute the cross-term Sinkhorn plan cost to each eval sample.

    Args:
        ref: reference embeddings.
        eval: embeddings under evaluation.
        eps_reg: Sinkhorn regularisation (cost-relative unless ``relative_eps=False``).
        top_k: length of the worst-offender list.
        sample_ids: names for the eval rows; defaults to row indices.

    Returns:
        DiagnosticsReport with one cost per eval sample.
    """
    ref_set, eval_set = as_embedding_set(ref), as_embedding_set(eval)
    result = sinkhorn_divergence(
        ref_set, eval_set, eps_reg=eps_reg, max_iter=max_iter, tol=tol, relative_eps=relative_eps
    )
    cost = pairwise_sq_dists(ref_set.points, eval_set.points)
    costs = per_sample_costs(result.plan_xy, cost)
    ids = sample_ids if sample_ids is not None else eval_set.ids()
    if len(ids) != eval_set.n:
        raise DimensionMismatch(f"{len(ids)} sample ids for {eval_set.n} eval rows")
    if not result.converged:
        logger.warning("diagnostics computed from a non-converged plan (degraded)")

    report = DiagnosticsReport(
        costs=costs,
        sample_ids=list(ids),
        top_k=[],
        total_cost=result.plan_xy.total_cost,
        eps_reg=float(eps_reg),
        converged=result.converged,
    )
    return replace(report, top_k=report.top(top_k))


def auroc(clean_costs: npt.ArrayLike, contaminated_costs: npt.ArrayLike) -> float:
    """P(contaminated cost > clean cost), ties counted one half (Mann-Whitney U)."""
    clean = np.asarray(clean_costs, dtype=np.float64).reshape(-1)
    contaminated = np.asarray(contaminated_costs, dtype=np.float64).reshape(-1)
    if clean.size == 0 or contaminated.size == 0:
        raise EmptyInput("AUROC needs at least one clean and one contaminated cost")
    ranks = rankdata(np.concatenate([clean, contaminated]), method="average")
    m = contaminated.size
    u = float(ranks[clean.size :].sum()) - m * (m + 1) / 2.0
    return u / (clean.size * m)


def separation_ratio(clean_costs: npt.ArrayLike, contaminated_costs: npt.ArrayLike) -> float:
    clean = np.asarray(clean_costs, dtype=np.float64).reshape(-1)
    contaminated = np.asarray(contaminated_costs, dtype=np.float64).reshape(-1)
    if clean.size == 0 or contaminated.size == 0:
        raise EmptyInput("separation ratio needs both clean and contaminated costs")
    clean_mean = float(clean.mean())
    if not clean_mean > 0.0:
        raise DegenerateCleanCosts(f"mean clean cost is {clean_mean}")
    return float(contaminated.mean()) / clean_mean

from __future__ import annotations

from enum import Enum
import logging
from pathlib import Path

import numpy as np

from otward import config
from otward.adapter import adapt
from otward.adapter import load_adapter
from otward.adapter import ResidualAdapter
from otward.diagnostics import diagnose
from otward.diagnostics import DiagnosticsReport
from otward.errors import DimensionMismatch
from otward.linalg import pairwise_sq_dists
from otward.linalg import Vector
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import EmbeddingSet
from otward.metrics import per_sample_costs
from otward.metrics import sinkhorn_divergence
from otward.metrics import SinkhornResult


logger = logging.getLogger(__name__)


class Variant(str, Enum):
    RAW = "raw"
    ADAPTED = "adapted"


class OTAD:
    """Debiased Sinkhorn distance between embedding sets, optionally under an adapter."""

    def __init__(
        self,
        variant: Variant | str = Variant.RAW,
        epsilon: float = config.DEFAULT_EPS_REG,
        adapter: ResidualAdapter | Path | str | None = None,
        relative_eps: bool = True,
        max_iter: int = config.DEFAULT_MAX_ITER,
        tol: float = config.DEFAULT_TOL,
    ):
        """Initialize the scorer.

        Args:
            variant (str): ``"raw"`` scores the embeddings as given, ``"adapted"`` pushes
                both sets through the adapter first.
            epsilon (float): Sinkhorn regularisation, relative to the mean cross cost
                unless ``relative_eps`` is False.
            adapter (ResidualAdapter | Path | str, optional): adapter parameters, or a
                file or directory holding ``adapter.otad``. Required for ``"adapted"``.
        """
        self.variant = Variant(variant)
        self.epsilon = float(epsilon)
        self.relative_eps = relative_eps
        self.max_iter = max_iter
        self.tol = tol
        if isinstance(adapter, (str, Path)):
            adapter = load_adapter(adapter)
        if self.variant == Variant.ADAPTED and adapter is None:
            raise ValueError("The adapted variant needs an adapter (parameters or a path).")
        if self.variant == Variant.RAW and adapter is not None:
            logger.warning("adapter given to a raw scorer; it will be ignored")
        self.adapter = adapter if self.variant == Variant.ADAPTED else None

    def __repr__(self) -> str:
        return f"OTAD(variant={self.variant.value!r}, epsilon={self.epsilon})"

    def _prepare(
        self, ref: EmbeddingLike, eval: EmbeddingLike
    ) -> tuple[EmbeddingSet, EmbeddingSet]:
        ref_set, eval_set = as_embedding_set(ref), as_embedding_set(eval)
        if ref_set.d != eval_set.d:
            raise DimensionMismatch(f"sets of dimension {ref_set.d} and {eval_set.d}")
        if self.adapter is None:
            return ref_set, eval_set
        return adapt(self.adapter, ref_set), adapt(self.adapter, eval_set)

    def _solve(self, ref_set: EmbeddingSet, eval_set: EmbeddingSet) -> SinkhornResult:
        return sinkhorn_divergence(
            ref_set,
            eval_set,
            eps_reg=self.epsilon,
            max_iter=self.max_iter,
            tol=self.tol,
            relative_eps=self.relative_eps,
        )

    def score_result(self, ref: EmbeddingLike, eval: EmbeddingLike) -> SinkhornResult:
        return self._solve(*self._prepare(ref, eval))

    def score(self, ref: EmbeddingLike, eval: EmbeddingLike) -> float:
        return self.score_result(ref, eval).divergence

    def diagnose(
        self, ref: EmbeddingLike, eval: EmbeddingLike, top_k: int = config.DEFAULT_TOP_K
    ) -> DiagnosticsReport:
        eval_ids = as_embedding_set(eval).ids()
        ref_set, eval_set = self._prepare(ref, eval)
        return diagnose(
            ref_set,
            eval_set,
            eps_reg=self.epsilon,
            top_k=top_k,
            max_iter=self.max_iter,
            tol=self.tol,
            relative_eps=self.relative_eps,
            sample_ids=eval_ids,
        )

    def score_individual(self, ref: EmbeddingLike, eval: EmbeddingLike) -> Vector:
        """Transport cost attributed to each eval sample (sums to the plan cost)."""
        ref_set, eval_set = self._prepare(ref, eval)
        result = self._solve(ref_set, eval_set)
        cost = pairwise_sq_dists(ref_set.points, eval_set.points)
        return np.asarray(per_sample_costs(result.plan_xy, cost))

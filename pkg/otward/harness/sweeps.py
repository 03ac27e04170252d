from __future__ import annotations

from collections.abc import Sequence
import logging

from otward import config
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import sinkhorn_divergence
from otward.utils import parallel_map


logger = logging.getLogger(__name__)


def eps_sweep(
    ref: EmbeddingLike,
    test: EmbeddingLike,
    eps_grid: Sequence[float] = config.SWEEP_GRID,
    max_iter: int = config.DEFAULT_MAX_ITER,
    tol: float = config.DEFAULT_TOL,
    relative_eps: bool = True,
    workers: int | None = None,
) -> list[dict[str, float | int | bool]]:
    """Sinkhorn divergence, iteration count and convergence for each ``eps_reg``."""
    ref_set, test_set = as_embedding_set(ref), as_embedding_set(test)
    if any(not eps > 0.0 for eps in eps_grid):
        raise ValueError(f"sweep values must be positive, got {list(eps_grid)}")

    def cell(eps: float) -> dict[str, float | int | bool]:
        result = sinkhorn_divergence(
            ref_set, test_set, eps_reg=eps, max_iter=max_iter, tol=tol, relative_eps=relative_eps
        )
        logger.debug("sweep eps=%g: %d iterations", eps, result.iterations)
        return {
            "eps_reg": float(eps),
            "divergence": result.divergence,
            "iterations": result.iterations,
            "converged": result.converged,
            "effective_eps": result.effective_eps,
        }

    return parallel_map(cell, list(eps_grid), workers=workers)

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum
import logging
import math
import time

import numpy as np
import numpy.typing as npt
import torch
from tqdm import tqdm

from otward import config
from otward.adapter import ResidualAdapter
from otward.errors import DimensionMismatch
from otward.errors import DivergedLoss
from otward.errors import NonPositiveEpsilon
from otward.linalg import Rng
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import sinkhorn_divergence
from otward.metrics import SinkhornResult
from otward.probes.probe import ProbeSource


logger = logging.getLogger(__name__)

Gradients = dict[str, torch.Tensor]


class LossKind(str, Enum):
    TRIPLET = "triplet"
    SINKHORN_NATIVE = "sinkhorn_native"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = config.DEFAULT_LEARNING_RATE
    margin: float = config.DEFAULT_MARGIN
    batch_size: int = config.DEFAULT_BATCH_SIZE
    epochs: int = config.DEFAULT_EPOCHS
    seed: int = 0
    loss: LossKind = LossKind.TRIPLET
    eps_reg: float = config.DEFAULT_EPS_REG
    steps_per_epoch: int = config.DEFAULT_STEPS_PER_EPOCH
    sinkhorn_max_iter: int = config.DEFAULT_MAX_ITER
    sinkhorn_tol: float = config.DEFAULT_TOL

    def __post_init__(self) -> None:
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.margin < 0.0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")
        if self.batch_size < 1 or self.steps_per_epoch < 1 or self.epochs < 0:
            raise ValueError("batch_size and steps_per_epoch must be >= 1, epochs >= 0")
        if self.loss == LossKind.SINKHORN_NATIVE and not self.eps_reg > 0.0:
            raise NonPositiveEpsilon(f"eps_reg must be positive, got {self.eps_reg}")


def _tensor(x: npt.ArrayLike) -> torch.Tensor:
    return torch.from_numpy(np.array(x, dtype=np.float64))


def _add_grads(total: Gradients, extra: Gradients) -> Gradients:
    return {name: total[name] + extra[name] for name in total}


def triplet_loss_and_grads(
    p: ResidualAdapter,
    anchors: npt.ArrayLike,
    positives: npt.ArrayLike,
    negatives: npt.ArrayLike,
    margin: float,
    reduction: str = "sum",
    scale: float = 1.0,
    training: bool = False,
    rng: Rng | None = None,
) -> tuple[float, Gradients]:
    """Hinge triplet loss on adapted squared distances and its parameter gradients.

    All three roles go through one batched forward pass, so a dropout mask (training
    only) is drawn once for the whole stack.
    """
    a, pos, neg = _tensor(anchors), _tensor(positives), _tensor(negatives)
    if not (a.shape == pos.shape == neg.shape) or a.ndim != 2:
        raise DimensionMismatch(
            f"anchors {tuple(a.shape)}, positives {tuple(pos.shape)}, negatives {tuple(neg.shape)}"
        )
    if margin < 0.0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    b = a.shape[0]
    out, cache = p.forward_cached(torch.cat([a, pos, neg]), training=training, rng=rng)
    ga, gp, gn = out[:b], out[b : 2 * b], out[2 * b :]
    d_ap = ((ga - gp) ** 2).sum(dim=1)
    d_an = ((ga - gn) ** 2).sum(dim=1)
    hinge = d_ap - d_an + margin
    active = (hinge > 0.0).to(hinge.dtype)[:, None]

    weight = scale / b if reduction == "mean" else scale
    loss = weight * float((hinge * active[:, 0]).sum())
    d_out = torch.cat(
        [
            2.0 * (gn - gp) * active,
            -2.0 * (ga - gp) * active,
            2.0 * (ga - gn) * active,
        ]
    )
    grads, _ = p.backward(cache, weight * d_out)
    return loss, grads


def triplet_loss(
    p: ResidualAdapter,
    anchors: npt.ArrayLike,
    positives: npt.ArrayLike,
    negatives: npt.ArrayLike,
    margin: float,
) -> float:
    """``sum max(0, d(a, p) - d(a, n) + margin)`` with ``d(a, b) = ||g(a) - g(b)||^2``."""
    loss, _ = triplet_loss_and_grads(p, anchors, positives, negatives, margin)
    return loss


def _plan_gradients(
    plan: torch.Tensor, x: torch.Tensor, y: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    # d/dX and d/dY of <P, C(X, Y)> for squared-Euclidean C, with P held fixed
    grad_x = 2.0 * (plan.sum(dim=1)[:, None] * x - plan @ y)
    grad_y = 2.0 * (plan.sum(dim=0)[:, None] * y - plan.T @ x)
    return grad_x, grad_y


def sinkhorn_point_gradients(
    result: SinkhornResult, x: npt.ArrayLike, y: npt.ArrayLike
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gradient of a converged debiased divergence w.r.t. both point clouds.

    Plans are held fixed. When epsilon is relative to the mean cross cost, the
    dependence of epsilon on the points adds ``eps_reg * dS/deps * d mean(C)/dpoint``
    with ``dS/deps = KL_xy - KL_xx / 2 - KL_yy / 2``.
    """
    xt, yt = _tensor(x), _tensor(y)
    assert result.plan_xx is not None and result.plan_yy is not None
    gx_xy, gy_xy = _plan_gradients(_tensor(result.plan_xy.weights), xt, yt)
    gx_1, gx_2 = _plan_gradients(_tensor(result.plan_xx), xt, xt)
    gy_1, gy_2 = _plan_gradients(_tensor(result.plan_yy), yt, yt)
    grad_x = gx_xy - 0.5 * (gx_1 + gx_2)
    grad_y = gy_xy - 0.5 * (gy_1 + gy_2)

    if result.relative_eps and result.cost_scale > 0.0:
        d_eps = result.kl_xy - 0.5 * result.kl_xx - 0.5 * result.kl_yy
        n, m = xt.shape[0], yt.shape[0]
        grad_x = grad_x + result.epsilon_reg * d_eps * (2.0 / n) * (xt - yt.mean(dim=0))
        grad_y = grad_y + result.epsilon_reg * d_eps * (2.0 / m) * (yt - xt.mean(dim=0))
    return grad_x, grad_y


def sinkhorn_native_loss_and_grads(
    p: ResidualAdapter,
    batch_ref: EmbeddingLike,
    batch_test: EmbeddingLike,
    eps_reg: float,
    max_iter: int = config.DEFAULT_MAX_ITER,
    tol: float = config.DEFAULT_TOL,
    relative_eps: bool = True,
    training: bool = False,
    rng: Rng | None = None,
) -> tuple[float, Gradients, SinkhornResult]:
    ref = _tensor(as_embedding_set(batch_ref).points)
    test = _tensor(as_embedding_set(batch_test).points)
    out_ref, cache_ref = p.forward_cached(ref, training=training, rng=rng)
    out_test, cache_test = p.forward_cached(test, training=training, rng=rng)
    x, y = out_ref.numpy(), out_test.numpy()
    result = sinkhorn_divergence(
        x, y, eps_reg=eps_reg, max_iter=max_iter, tol=tol, relative_eps=relative_eps
    )
    grad_x, grad_y = sinkhorn_point_gradients(result, x, y)
    grads_ref, _ = p.backward(cache_ref, grad_x)
    grads_test, _ = p.backward(cache_test, grad_y)
    return result.divergence, _add_grads(grads_ref, grads_test), result


def sinkhorn_native_loss(
    p: ResidualAdapter,
    batch_ref: EmbeddingLike,
    batch_test: EmbeddingLike,
    eps_reg: float,
    max_iter: int = config.DEFAULT_MAX_ITER,
    tol: float = config.DEFAULT_TOL,
) -> float:
    """Debiased Sinkhorn divergence between the adapted batches."""
    loss, _, _ = sinkhorn_native_loss_and_grads(
        p, batch_ref, batch_test, eps_reg, max_iter=max_iter, tol=tol
    )
    return loss


def train_adapter(
    init: ResidualAdapter,
    probes: ProbeSource,
    cfg: TrainConfig,
    epoch_callback: Callable[[int, float], None] | None = None,
    progress_bar: bool = False,
) -> ResidualAdapter:
    """Plain SGD on either training track; returns a new adapter, ``init`` is untouched.

    Each epoch runs ``cfg.steps_per_epoch`` steps on freshly sampled batches. The loss
    per step is the batch mean (triplet) or the divergence of the two batches (native).
    """
    if probes.d != init.d:
        raise DimensionMismatch(f"probes of dimension {probes.d} for an adapter of {init.d}")
    adapter = init.clone()
    rng = Rng(cfg.seed)
    optimizer = torch.optim.SGD(adapter.parameters(), lr=cfg.learning_rate)
    training = adapter.dropout_rate > 0.0

    for epoch in range(1, cfg.epochs + 1):
        epoch_start_time = time.time()
        total_loss = 0.0
        steps = tqdm(range(cfg.steps_per_epoch), desc=f"Epoch {epoch}") if progress_bar else None
        for _ in range(cfg.steps_per_epoch):
            if cfg.loss == LossKind.TRIPLET:
                batch = probes.sample_triplets(rng, cfg.batch_size)
                loss, grads = triplet_loss_and_grads(
                    adapter,
                    batch.anchors,
                    batch.positives,
                    batch.negatives,
                    cfg.margin,
                    reduction="mean",
                    training=training,
                    rng=rng,
                )
            else:
                ref, test = probes.sample_sets(rng, cfg.batch_size)
                loss, grads, _ = sinkhorn_native_loss_and_grads(
                    adapter,
                    ref,
                    test,
                    cfg.eps_reg,
                    max_iter=cfg.sinkhorn_max_iter,
                    tol=cfg.sinkhorn_tol,
                    training=training,
                    rng=rng,
                )
            finite = all(bool(torch.isfinite(g).all()) for g in grads.values())
            if not math.isfinite(loss) or not finite:
                raise DivergedLoss(f"non-finite loss {loss} at epoch {epoch}")

            optimizer.zero_grad(set_to_none=True)
            for name, grad in grads.items():
                getattr(adapter, name).grad = grad
            optimizer.step()
            total_loss += loss
            if steps is not None:
                steps.update()
        if steps is not None:
            steps.close()

        mean_loss = total_loss / cfg.steps_per_epoch
        logger.info(
            "end of epoch %3d | time: %5.2fs | mean loss %.6g",
            epoch,
            time.time() - epoch_start_time,
            mean_loss,
        )
        if epoch_callback is not None:
            epoch_callback(epoch, mean_loss)
    return adapter

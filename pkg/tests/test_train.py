from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import torch

from otward.adapter import ResidualAdapter
from otward.errors import DimensionMismatch
from otward.errors import DivergedLoss
from otward.linalg import Rng
from otward.metrics import sinkhorn_divergence
from otward.probes import ProbeConfig
from otward.probes import SyntheticProbes
from otward.train import LossKind
from otward.train import sinkhorn_native_loss
from otward.train import sinkhorn_native_loss_and_grads
from otward.train import train_adapter
from otward.train import TrainConfig
from otward.train import triplet_loss
from otward.train import triplet_loss_and_grads

from .helpers import perturbed_adapter


def _finite_difference(adapter: ResidualAdapter, objective, h: float) -> dict[str, np.ndarray]:
    out = {}
    for name in ("w1", "b1", "norm_gain", "norm_bias", "w2", "b2"):
        flat = getattr(adapter, name).data.view(-1)
        fd = np.empty(flat.numel())
        for i in range(flat.numel()):
            saved = float(flat[i])
            flat[i] = saved + h
            up = objective()
            flat[i] = saved - h
            down = objective()
            flat[i] = saved
            fd[i] = (up - down) / (2 * h)
        out[name] = fd.reshape(tuple(getattr(adapter, name).shape))
    return out


def _relative_error(grad: torch.Tensor, fd: np.ndarray) -> float:
    return float(np.linalg.norm(grad.numpy() - fd) / max(np.linalg.norm(fd), 1e-12))


class TestTripletLoss:
    def test_gradients_match_finite_differences(self):
        adapter = perturbed_adapter(8, seed=1)
        rng = Rng(2)
        a, p, n = rng.normal((10, 8)), rng.normal((10, 8)), rng.normal((10, 8))
        # a large margin keeps every hinge active, away from its kink
        margin = 100.0
        _, grads = triplet_loss_and_grads(adapter, a, p, n, margin)
        fd = _finite_difference(adapter, lambda: triplet_loss(adapter, a, p, n, margin), 1e-6)
        for name, grad in grads.items():
            assert _relative_error(grad, fd[name]) < 1e-4, name

    def test_zero_when_positive_equals_anchor(self):
        adapter = perturbed_adapter(8, seed=3)
        a = Rng(4).normal((5, 8))
        assert triplet_loss(adapter, a, a, a + 1.0, margin=0.0) == 0.0

    def test_satisfied_triplets_have_zero_gradients(self):
        adapter = perturbed_adapter(8, seed=3)
        a = Rng(4).normal((5, 8))
        loss, grads = triplet_loss_and_grads(adapter, a, a, a + 1.0, margin=0.0)
        assert loss == 0.0
        assert set(grads) == {"w1", "b1", "norm_gain", "norm_bias", "w2", "b2"}
        for name, grad in grads.items():
            assert not grad.any(), name

    def test_doubling_the_scale_doubles_gradients(self):
        adapter = perturbed_adapter(8, seed=9)
        rng = Rng(10)
        a, p, n = rng.normal((7, 8)), rng.normal((7, 8)), rng.normal((7, 8))
        loss, grads = triplet_loss_and_grads(adapter, a, p, n, 50.0)
        loss2, grads2 = triplet_loss_and_grads(adapter, a, p, n, 50.0, scale=2.0)
        assert loss2 == pytest.approx(2.0 * loss, rel=1e-12)
        for name, grad in grads.items():
            np.testing.assert_allclose(grads2[name].numpy(), 2.0 * grad.numpy(), rtol=1e-12)

    def test_mean_reduction(self):
        adapter = perturbed_adapter(8, seed=3)
        rng = Rng(5)
        a, p, n = rng.normal((6, 8)), rng.normal((6, 8)), rng.normal((6, 8))
        total, _ = triplet_loss_and_grads(adapter, a, p, n, 50.0)
        mean, _ = triplet_loss_and_grads(adapter, a, p, n, 50.0, reduction="mean")
        assert mean == pytest.approx(total / 6)

    def test_shape_and_margin_checks(self):
        adapter = perturbed_adapter(8)
        a = np.zeros((3, 8))
        with pytest.raises(DimensionMismatch):
            triplet_loss(adapter, a, a, np.zeros((2, 8)), 1.0)
        with pytest.raises(ValueError):
            triplet_loss(adapter, a, a, a, -1.0)


class TestSinkhornNativeLoss:
    def test_gradients_match_finite_differences(self):
        adapter = perturbed_adapter(8, seed=6)
        rng = Rng(7)
        ref, test = rng.normal((12, 8)), rng.normal((12, 8)) + 0.5
        kwargs = {"eps_reg": 0.5, "max_iter": 20_000, "tol": 1e-13}
        _, grads, result = sinkhorn_native_loss_and_grads(adapter, ref, test, **kwargs)
        assert result.converged
        fd = _finite_difference(
            adapter, lambda: sinkhorn_native_loss(adapter, ref, test, **kwargs), 1e-5
        )
        for name, grad in grads.items():
            assert _relative_error(grad, fd[name]) < 5e-3, name

    def test_identity_adapter_reproduces_divergence(self):
        adapter = ResidualAdapter.initialise(8, Rng(0))
        rng = Rng(8)
        ref, test = rng.normal((10, 8)), rng.normal((10, 8))
        expected = sinkhorn_divergence(ref, test, eps_reg=0.2).divergence
        assert sinkhorn_native_loss(adapter, ref, test, eps_reg=0.2) == pytest.approx(expected)


def _held_out_loss(adapter: ResidualAdapter, probes: SyntheticProbes, margin: float) -> float:
    batch = probes.sample_triplets(Rng(999), 256)
    loss, _ = triplet_loss_and_grads(
        adapter, batch.anchors, batch.positives, batch.negatives, margin, reduction="mean"
    )
    return loss


class TestTraining:
    def _setup(self):
        probes = SyntheticProbes(ProbeConfig(d=16, n_classes=2, kinds=("recall",), seed=0))
        init = ResidualAdapter.initialise(16, Rng(0))
        cfg = TrainConfig(
            learning_rate=0.05, margin=3.0, batch_size=32, epochs=50, steps_per_epoch=4, seed=1
        )
        return probes, init, cfg

    def test_triplet_training_reduces_held_out_loss(self):
        probes, init, cfg = self._setup()
        losses: list[float] = []
        trained = train_adapter(init, probes, cfg, epoch_callback=lambda _, v: losses.append(v))
        assert len(losses) == cfg.epochs
        assert np.mean(losses[-5:]) < np.mean(losses[:5])
        assert _held_out_loss(trained, probes, cfg.margin) < _held_out_loss(init, probes, 3.0)
        assert init.is_identity()
        assert not trained.is_identity()

    def test_zero_epochs_leave_the_adapter_unchanged(self):
        probes, _, cfg = self._setup()
        init = perturbed_adapter(16, seed=11)
        seen: list[int] = []
        trained = train_adapter(
            init, probes, replace(cfg, epochs=0), epoch_callback=lambda e, _: seen.append(e)
        )
        assert seen == []
        assert trained is not init
        before, after = init.named_arrays(), trained.named_arrays()
        assert set(before) == set(after)
        for name in before:
            np.testing.assert_array_equal(after[name], before[name])

    def test_training_is_deterministic(self):
        probes, init, cfg = self._setup()
        short = replace(cfg, epochs=3)
        first = train_adapter(init, probes, short).named_arrays()
        second = train_adapter(init, probes, short).named_arrays()
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_native_track_runs(self):
        probes = SyntheticProbes(ProbeConfig(d=8, seed=0))
        init = ResidualAdapter.initialise(8, Rng(0), dropout_rate=0.1)
        cfg = TrainConfig(
            loss=LossKind.SINKHORN_NATIVE,
            learning_rate=1e-3,
            batch_size=16,
            epochs=2,
            steps_per_epoch=2,
        )
        seen: list[int] = []
        trained = train_adapter(init, probes, cfg, epoch_callback=lambda e, _: seen.append(e))
        assert seen == [1, 2]
        assert trained.dropout_rate == pytest.approx(0.1)

    def test_non_finite_loss_raises(self, monkeypatch):
        probes, init, cfg = self._setup()

        def broken(*args, **kwargs):
            _, grads = triplet_loss_and_grads(*args, **kwargs)
            return float("nan"), grads

        monkeypatch.setattr("otward.train.triplet_loss_and_grads", broken)
        with pytest.raises(DivergedLoss):
            train_adapter(init, probes, cfg)

    def test_dimension_mismatch(self):
        probes = SyntheticProbes(ProbeConfig(d=8))
        with pytest.raises(DimensionMismatch):
            train_adapter(ResidualAdapter.initialise(16, Rng(0)), probes, TrainConfig(epochs=1))

    @pytest.mark.parametrize(
        "kwargs", [{"learning_rate": 0.0}, {"margin": -1.0}, {"batch_size": 0}, {"epochs": -1}]
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

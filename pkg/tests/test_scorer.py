from __future__ import annotations

import logging

import numpy as np
import pytest

from otward.adapter import adapt
from otward.adapter import load_adapter
from otward.adapter import ResidualAdapter
from otward.adapter import save_adapter
from otward.errors import DimensionMismatch
from otward.linalg import pairwise_sq_dists
from otward.linalg import Rng
from otward.metrics import EmbeddingSet
from otward.metrics import sinkhorn_divergence
from otward.scorer import OTAD
from otward.scorer import Variant

from .helpers import perturbed_adapter


def test_raw_matches_sinkhorn_divergence(gaussian_pair):
    x, y = gaussian_pair
    assert OTAD().score(x, y) == sinkhorn_divergence(x, y, eps_reg=0.1).divergence


def test_identity_adapter_matches_raw(gaussian_pair):
    x, y = gaussian_pair
    adapted = OTAD("adapted", adapter=ResidualAdapter.initialise(4, Rng(0)))
    assert adapted.variant == Variant.ADAPTED
    assert adapted.score(x, y) == OTAD("raw").score(x, y)


def test_adapted_needs_adapter():
    with pytest.raises(ValueError):
        OTAD("adapted")


def test_adapter_from_directory(tmp_path, gaussian_pair):
    x, y = gaussian_pair
    save_adapter(perturbed_adapter(4, seed=2), tmp_path / "adapter.otad")
    from_dir = OTAD("adapted", adapter=tmp_path)
    from_params = OTAD("adapted", adapter=load_adapter(tmp_path / "adapter.otad"))
    assert from_dir.score(x, y) == from_params.score(x, y)
    assert from_dir.score(x, y) != OTAD().score(x, y)


def test_raw_scorer_ignores_adapter(caplog, gaussian_pair):
    x, y = gaussian_pair
    with caplog.at_level(logging.WARNING, logger="otward.scorer"):
        scorer = OTAD("raw", adapter=perturbed_adapter(4))
    assert "ignored" in caplog.text
    assert scorer.adapter is None
    assert scorer.score(x, y) == OTAD().score(x, y)


def test_individual_costs_sum_to_plan_cost(gaussian_pair):
    x, y = gaussian_pair
    scorer = OTAD("adapted", adapter=perturbed_adapter(4, seed=5))
    costs = scorer.score_individual(x, y)
    assert costs.shape == (y.n,)
    assert np.all(costs >= 0.0)

    adapter = scorer.adapter
    assert adapter is not None
    xa, ya = adapt(adapter, x).points, adapt(adapter, y).points
    result = sinkhorn_divergence(xa, ya, eps_reg=0.1)
    plan_cost = float((result.plan_xy.weights * pairwise_sq_dists(xa, ya)).sum())
    assert costs.sum() == pytest.approx(plan_cost, rel=1e-12)


def test_diagnose_uses_eval_ids(gaussian_pair):
    x, y = gaussian_pair
    report = OTAD(epsilon=0.2).diagnose(x, y, top_k=3)
    assert report.sample_ids == y.ids()
    assert len(report.top_k) == 3
    assert report.eps_reg == 0.2


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        OTAD().score(EmbeddingSet(points=np.zeros((3, 2))), np.zeros((3, 4)))

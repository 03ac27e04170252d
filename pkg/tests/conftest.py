from __future__ import annotations

import pytest
import torch

from otward.linalg import Rng
from otward.metrics import EmbeddingSet


@pytest.fixture
def rng() -> Rng:
    return Rng(1234)


@pytest.fixture
def gaussian_pair(rng: Rng) -> tuple[EmbeddingSet, EmbeddingSet]:
    x = rng.normal((60, 4))
    y = 0.8 * rng.normal((50, 4)) + 0.5
    return EmbeddingSet(points=x), EmbeddingSet(points=y)


@pytest.fixture(autouse=True)
def _restore_threads(monkeypatch):
    monkeypatch.delenv("OTWARD_THREADS", raising=False)
    threads = torch.get_num_threads()
    yield
    torch.set_num_threads(threads)

from __future__ import annotations

import numpy as np

from otward.adapter import ResidualAdapter
from otward.linalg import Matrix
from otward.linalg import Rng


def random_spd(rng: Rng, d: int, jitter: float = 0.1) -> Matrix:
    a = rng.normal((d, d))
    return a @ a.T / d + jitter * np.eye(d)


def perturbed_adapter(
    d: int, seed: int = 0, scale: float = 0.3, hidden: int | None = None
) -> ResidualAdapter:
    """Adapter with every parameter moved off its initial value."""
    rng = Rng(seed)
    adapter = ResidualAdapter.initialise(d, rng, hidden=hidden)
    h = adapter.hidden
    return adapter.load_arrays(
        {
            "b1": 0.5 * rng.normal(h),
            "norm_gain": 1.0 + 0.2 * rng.normal(h),
            "norm_bias": 0.2 * rng.normal(h),
            "w2": scale * rng.normal((h, d)),
            "b2": 0.1 * rng.normal(d),
        }
    )

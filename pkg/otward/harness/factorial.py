"""2x2 factorial analysis of cost correction against coupling correction.

Conditions: (A) FAD on raw embeddings, (B) Sinkhorn on raw embeddings, (C) FAD on
adapted embeddings, (D) Sinkhorn on adapted embeddings. Each metric family ({A, C} and
{B, D}) is log-normalised on its own before the effects are computed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging

import numpy as np
import numpy.typing as npt

from otward import config
from otward.adapter import adapt
from otward.adapter import ResidualAdapter
from otward.errors import AllZero
from otward.errors import DegenerateInput
from otward.errors import DimensionMismatch
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import fad
from otward.metrics import fit_moments
from otward.metrics import sinkhorn_divergence


logger = logging.getLogger(__name__)


class Factor(str, Enum):
    COST = "cost"
    MEAS = "meas"
    SYN = "syn"


# earlier entries win ties
DOMINANCE_ORDER = (Factor.COST, Factor.SYN, Factor.MEAS)

ZERO_FLOOR = 1e-10


def log_normalise(values: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """``log(1 + x) / log(1 + x_max)``; the maximum maps to exactly 1."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if np.any(x < 0.0):
        raise DegenerateInput("log-normalisation needs non-negative values")
    x_max = float(x.max(initial=0.0))
    if not x_max > 0.0:
        raise AllZero("log-normalisation of an all-zero family")
    out = np.log1p(x) / np.log1p(x_max)
    out[x == x_max] = 1.0
    return out


@dataclass(frozen=True)
class FactorDecomposition:
    a_raw: float
    b_raw: float
    c_raw: float
    d_raw: float
    a_n: float
    b_n: float
    c_n: float
    d_n: float
    delta_cost: float
    delta_meas: float
    delta_syn: float
    dominant: Factor

    def to_row(self) -> dict[str, float | str]:
        return {
            "A": self.a_raw,
            "B": self.b_raw,
            "C": self.c_raw,
            "D": self.d_raw,
            "A_n": self.a_n,
            "B_n": self.b_n,
            "C_n": self.c_n,
            "D_n": self.d_n,
            "delta_cost": self.delta_cost,
            "delta_meas": self.delta_meas,
            "delta_syn": self.delta_syn,
            "dominant": self.dominant.value,
        }


def factorial_decomposition(
    a: float,
    b: float,
    c: float,
    d: float,
    raw: tuple[float, float, float, float] | None = None,
) -> FactorDecomposition:
    """Main effects and interaction of the 2x2 design from normalised condition values.

    ``raw`` carries the unnormalised values for reporting; it defaults to the inputs.
    """
    delta_cost = (c + d) / 2.0 - (a + b) / 2.0
    delta_meas = (b + d) / 2.0 - (a + c) / 2.0
    delta_syn = (d - c) - (b - a)
    magnitude = {
        Factor.COST: abs(delta_cost),
        Factor.MEAS: abs(delta_meas),
        Factor.SYN: abs(delta_syn),
    }
    dominant = max(DOMINANCE_ORDER, key=lambda f: (magnitude[f], -DOMINANCE_ORDER.index(f)))
    a_raw, b_raw, c_raw, d_raw = raw if raw is not None else (a, b, c, d)
    return FactorDecomposition(
        a_raw=float(a_raw),
        b_raw=float(b_raw),
        c_raw=float(c_raw),
        d_raw=float(d_raw),
        a_n=float(a),
        b_n=float(b),
        c_n=float(c),
        d_n=float(d),
        delta_cost=float(delta_cost),
        delta_meas=float(delta_meas),
        delta_syn=float(delta_syn),
        dominant=dominant,
    )


def _normalise_family(raw: float, adapted: float) -> tuple[float, float]:
    pair = np.array([raw, adapted], dtype=np.float64)
    # values at solver precision, including small negative Sinkhorn values, count as zero
    pair[pair < ZERO_FLOOR] = 0.0
    try:
        out = log_normalise(pair)
    except AllZero:
        return 0.0, 0.0
    return float(out[0]), float(out[1])


def run_factorial(
    ref: EmbeddingLike,
    test: EmbeddingLike,
    adapter: ResidualAdapter,
    eps_reg: float = config.DEFAULT_EPS_REG,
    max_iter: int = config.DEFAULT_MAX_ITER,
    tol: float = config.DEFAULT_TOL,
) -> FactorDecomposition:
    ref_set, test_set = as_embedding_set(ref), as_embedding_set(test)
    if adapter.d != ref_set.d or adapter.d != test_set.d:
        raise DimensionMismatch(
            f"adapter of dimension {adapter.d} for sets of {ref_set.d} and {test_set.d}"
        )
    ref_g, test_g = adapt(adapter, ref_set), adapt(adapter, test_set)

    def sinkhorn(x: EmbeddingLike, y: EmbeddingLike) -> float:
        return sinkhorn_divergence(x, y, eps_reg=eps_reg, max_iter=max_iter, tol=tol).divergence

    a = fad(fit_moments(ref_set), fit_moments(test_set))
    b = sinkhorn(ref_set, test_set)
    c = fad(fit_moments(ref_g), fit_moments(test_g))
    d = sinkhorn(ref_g, test_g)
    a_n, c_n = _normalise_family(a, c)
    b_n, d_n = _normalise_family(b, d)
    result = factorial_decomposition(a_n, b_n, c_n, d_n, raw=(a, b, c, d))
    logger.info(
        "factorial: cost %.4g meas %.4g syn %.4g (dominant %s)",
        result.delta_cost,
        result.delta_meas,
        result.delta_syn,
        result.dominant.value,
    )
    return result

from __future__ import annotations

from collections.abc import Callable
from collections.abc import Mapping
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
import numpy.typing as npt

from otward import config
from otward.errors import EpsilonTooSmall
from otward.errors import WrongKind
from otward.linalg import Rng
from otward.linalg import sym_eigen
from otward.linalg import Vector
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import EmbeddingSet
from otward.metrics import fad
from otward.metrics import fit_moments
from otward.metrics import kad
from otward.metrics import sinkhorn_divergence
from otward.metrics import w2_squared


logger = logging.getLogger(__name__)

MetricFn = Callable[[EmbeddingSet, EmbeddingSet], float]

_KIND_ALIASES = {
    "full": "full_rank",
    "full-rank": "full_rank",
    "fr": "full_rank",
    "rank-1": "rank1",
    "r1": "rank1",
    "theorem1": "theorem_one",
}


class ContaminationKind(str, Enum):
    FULL_RANK = "full_rank"
    RANK_ONE = "rank1"
    THEOREM_ONE = "theorem_one"

    @classmethod
    def parse(cls, text: str) -> ContaminationKind:
        key = text.strip().lower()
        return cls(_KIND_ALIASES.get(key, key))


@dataclass(frozen=True)
class ContaminationSpec:
    """How an epsilon-fraction of rows is replaced.

    ``noise_scale`` only applies to ``full_rank`` (default ``5 sqrt(Tr S / d)`` of the
    base); ``c0`` only to ``theorem_one``, where the outlier sits at ``c0 sqrt(lambda_1)``.
    """

    kind: ContaminationKind
    epsilon: float
    noise_scale: float | None = None
    c0: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.kind == ContaminationKind.THEOREM_ONE:
            if self.c0 is None or self.c0 < 1.0:
                raise ValueError(f"theorem_one contamination needs c0 >= 1, got {self.c0}")
        elif self.c0 is not None:
            raise WrongKind(f"c0 is only meaningful for theorem_one, not {self.kind.value}")
        if self.noise_scale is not None:
            if self.kind != ContaminationKind.FULL_RANK:
                raise WrongKind(
                    f"noise_scale is only meaningful for full_rank, not {self.kind.value}"
                )
            if not self.noise_scale > 0.0:
                raise ValueError(f"noise_scale must be positive, got {self.noise_scale}")

    @classmethod
    def rank_one(cls, epsilon: float) -> ContaminationSpec:
        return cls(ContaminationKind.RANK_ONE, epsilon)

    @classmethod
    def full_rank(cls, epsilon: float, noise_scale: float | None = None) -> ContaminationSpec:
        return cls(ContaminationKind.FULL_RANK, epsilon, noise_scale=noise_scale)

    @classmethod
    def theorem_one(cls, epsilon: float, c0: float) -> ContaminationSpec:
        return cls(ContaminationKind.THEOREM_ONE, epsilon, c0=c0)


def replaced_count(epsilon: float, n: int) -> int:
    # the slack keeps exact products such as 0.05 * 1000 from rounding up
    k = math.ceil(epsilon * n - 1e-9)
    if k < 1:
        raise EpsilonTooSmall(f"epsilon={epsilon} replaces no rows of {n}")
    if k > n:
        raise EpsilonTooSmall(f"epsilon={epsilon} asks for {k} of {n} rows")
    return k


def leading_direction(base: EmbeddingSet) -> tuple[Vector, float]:
    """First principal axis of the base and its eigenvalue; sign fixed so the largest
    coordinate of ``v1`` is positive."""
    eig = sym_eigen(fit_moments(base).cov)
    v1 = eig.eigenvectors[:, 0].copy()
    if v1[int(np.argmax(np.abs(v1)))] < 0.0:
        v1 = -v1
    return v1, float(eig.eigenvalues[0])


def contaminate(
    base: EmbeddingLike, spec: ContaminationSpec, rng: Rng
) -> tuple[EmbeddingSet, npt.NDArray[np.bool_]]:
    """Replace ``ceil(eps n)`` rows chosen by ``rng`` with outliers.

    Returns the contaminated set (same n) and the mask of replaced rows.
    """
    base_set = as_embedding_set(base)
    k = replaced_count(spec.epsilon, base_set.n)
    rows = np.sort(rng.choice(base_set.n, k, replace=False))
    mean = base_set.points.mean(axis=0)

    if spec.kind == ContaminationKind.FULL_RANK:
        scale = spec.noise_scale
        if scale is None:
            cov = fit_moments(base_set).cov
            trace = max(float(np.trace(cov)), 0.0)
            scale = config.RANK1_AMPLITUDE * math.sqrt(trace / base_set.d)
        outliers = mean + scale * rng.normal((k, base_set.d))
    else:
        v1, lam1 = leading_direction(base_set)
        amplitude = config.RANK1_AMPLITUDE if spec.kind == ContaminationKind.RANK_ONE else spec.c0
        assert amplitude is not None
        outliers = np.tile(mean + amplitude * math.sqrt(max(lam1, 0.0)) * v1, (k, 1))

    points = base_set.points.copy()
    points[rows] = outliers
    mask = np.zeros(base_set.n, dtype=bool)
    mask[rows] = True
    logger.debug("contaminated %d of %d rows (%s)", k, base_set.n, spec.kind.value)
    return EmbeddingSet(points=points, labels=base_set.labels, source_id=base_set.source_id), mask


def self_normalise(values: npt.ArrayLike, reference: float) -> npt.NDArray[np.float64]:
    """Divide a metric's responses by its own full-rank reference response."""
    if not reference > 0.0:
        raise ValueError(f"reference response must be positive, got {reference}")
    return np.asarray(values, dtype=np.float64) / reference


def default_metrics(eps_reg: float = config.RANK1_REPORT_EPS) -> dict[str, MetricFn]:
    return {
        "fad": lambda x, y: fad(fit_moments(x), fit_moments(y)),
        "kad": lambda x, y: kad(x, y),
        "sinkhorn": lambda x, y: sinkhorn_divergence(x, y, eps_reg=eps_reg).divergence,
        "exact_ot": lambda x, y: w2_squared(x, y),
    }


def rank1_sensitivity(
    base: EmbeddingLike,
    eps_grid: Sequence[float],
    eps_reg: float = config.RANK1_REPORT_EPS,
    rng: Rng | None = None,
    metrics: Mapping[str, MetricFn] | None = None,
    reference_eps: float = config.FULL_RANK_REFERENCE_EPS,
) -> list[dict[str, float | str]]:
    """Raw and self-normalised responses to rank-1 and full-rank contamination.

    One row per (epsilon, metric). Every response is divided by the same metric's
    full-rank response at ``reference_eps``; ``r1_fr_ratio`` is the rank-1 response over
    that reference. ``log10_sinkhorn_over_fad`` compares the normalised rank-1 responses
    of the two metrics when both are present.
    """
    base_set = as_embedding_set(base)
    rng = rng or Rng(0)
    metrics = dict(metrics) if metrics is not None else default_metrics(eps_reg)

    reference_spec = ContaminationSpec.full_rank(reference_eps)
    reference_set, _ = contaminate(base_set, reference_spec, rng.spawn(0))
    reference = {name: fn(base_set, reference_set) for name, fn in metrics.items()}

    rows: list[dict[str, float | str]] = []
    for index, eps in enumerate(eps_grid, start=1):
        if eps == 0.0:
            raw_r1 = raw_fr = {name: fn(base_set, base_set) for name, fn in metrics.items()}
        else:
            r1_spec = ContaminationSpec.rank_one(eps)
            fr_spec = ContaminationSpec.full_rank(eps)
            r1_set, _ = contaminate(base_set, r1_spec, rng.spawn(2 * index))
            fr_set, _ = contaminate(base_set, fr_spec, rng.spawn(2 * index + 1))
            raw_r1 = {name: fn(base_set, r1_set) for name, fn in metrics.items()}
            raw_fr = {name: fn(base_set, fr_set) for name, fn in metrics.items()}

        log_ratio = math.nan
        if "sinkhorn" in metrics and "fad" in metrics:
            sink = raw_r1["sinkhorn"] / reference["sinkhorn"]
            fad_norm = raw_r1["fad"] / reference["fad"]
            if sink > 0.0 and fad_norm > 0.0:
                log_ratio = math.log10(sink / fad_norm)

        for name in metrics:
            ref_value = reference[name]
            rows.append(
                {
                    "epsilon": float(eps),
                    "metric": name,
                    "raw_r1": raw_r1[name],
                    "raw_fr": raw_fr[name],
                    "fr_reference": ref_value,
                    "fr_normalised": float(self_normalise(raw_fr[name], ref_value)),
                    "r1_fr_ratio": float(self_normalise(raw_r1[name], ref_value)),
                    "log10_sinkhorn_over_fad": log_ratio,
                }
            )
        logger.info("rank-1 sensitivity eps=%g done", eps)
    return rows


def dilution_factor(
    rows: Sequence[Mapping[str, float | str]],
    epsilon: float = config.RANK1_REPORT_EPS,
    numerator: str = "sinkhorn",
    denominator: str = "fad",
) -> float:
    """How many times larger one metric's R1/FR ratio is than another's at ``epsilon``."""
    ratios = {
        str(row["metric"]): float(row["r1_fr_ratio"])
        for row in rows
        if math.isclose(float(row["epsilon"]), epsilon)
    }
    if numerator not in ratios or denominator not in ratios:
        raise KeyError(f"no {numerator}/{denominator} rows at epsilon={epsilon}")
    return ratios[numerator] / ratios[denominator]

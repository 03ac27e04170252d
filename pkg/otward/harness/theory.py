"""Rank-1 contamination bounds for the Gaussian-fit distance.

Reference measure ``mu = N(0, Sigma)`` with ``Sigma`` diagonal in the canonical basis
(``v1 = e1``); contaminated measure ``nu = (1 - eps) mu + eps delta_o`` with
``o = L v1`` and ``L = c0 sigma_max``. The closed forms below are exact for this
construction; ``check_theorem1`` compares them with the two bounds

    FAD(mu, nu) <= eps^2 ((2 + c0^2) L^2 + T / 2)
    W2^2(P_n, Q_n) >= eps T / 4

where ``T = Tr Sigma`` and ``P_n, Q_n`` are n-point samples of ``mu`` and ``nu``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
import numpy.typing as npt

from otward.errors import DimensionMismatch
from otward.errors import WrongKind
from otward.harness.contamination import ContaminationKind
from otward.harness.contamination import ContaminationSpec
from otward.harness.contamination import replaced_count
from otward.linalg import Matrix
from otward.linalg import Rng
from otward.linalg import sample_gaussian
from otward.linalg import SymEigen
from otward.linalg import Vector
from otward.metrics import exact_ot
from otward.metrics import GaussianMoments
from otward.utils import fsum_mean
from otward.utils import parallel_map
from otward.utils import product_dict


logger = logging.getLogger(__name__)

W2_LOWER_CONSTANT = 0.25


class SpectrumKind(str, Enum):
    FLAT = "flat"
    SPIKE = "spike"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class SpectrumSpec:
    """Covariance spectrum in the canonical basis.

    ``flat``: every eigenvalue equals ``value`` (``r_eff = d``).
    ``spike``: ``lambda_1 = value * d``, the rest 1 (``r_eff`` close to 1).
    ``explicit``: the given eigenvalues, sorted descending.
    """

    kind: SpectrumKind
    d: int
    value: float = 1.0
    explicit: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == SpectrumKind.EXPLICIT and len(self.explicit) != self.d:
            raise DimensionMismatch(f"{len(self.explicit)} eigenvalues for d={self.d}")
        if self.d < 1:
            raise DimensionMismatch("spectrum dimension must be positive")
        if np.any(self.eigenvalues() <= 0.0):
            raise ValueError("all eigenvalues must be positive")

    @classmethod
    def parse(cls, text: str, d: int | None = None) -> SpectrumSpec:
        """``flat:K``, ``spike:ratio`` or ``explicit:l1,l2,...``."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if kind == SpectrumKind.EXPLICIT:
            values = tuple(sorted((float(v) for v in arg.split(",") if v.strip()), reverse=True))
            if d is not None and d != len(values):
                raise DimensionMismatch(f"{len(values)} eigenvalues given for d={d}")
            return cls(SpectrumKind.EXPLICIT, len(values), explicit=values)
        if kind not in (SpectrumKind.FLAT, SpectrumKind.SPIKE):
            raise ValueError(f"Unknown spectrum kind {kind!r}")
        if d is None:
            raise ValueError(f"spectrum {text!r} needs a dimension")
        default = 1.0 if kind == SpectrumKind.FLAT else 10.0
        return cls(SpectrumKind(kind), d, value=float(arg) if arg else default)

    def eigenvalues(self) -> Vector:
        if self.kind == SpectrumKind.FLAT:
            return np.full(self.d, float(self.value))
        if self.kind == SpectrumKind.SPIKE:
            values = np.ones(self.d)
            values[0] = self.value * self.d
            return values
        return np.asarray(self.explicit, dtype=np.float64)

    def covariance(self) -> Matrix:
        return np.diag(self.eigenvalues())

    def eigen(self) -> SymEigen:
        return SymEigen(eigenvalues=self.eigenvalues(), eigenvectors=np.eye(self.d))

    @property
    def trace(self) -> float:
        return math.fsum(self.eigenvalues())

    @property
    def sigma_max(self) -> float:
        return math.sqrt(float(self.eigenvalues()[0]))

    @property
    def r_eff(self) -> float:
        return self.trace / float(self.eigenvalues()[0])

    def moments(self) -> GaussianMoments:
        return GaussianMoments(mean=np.zeros(self.d), cov=self.covariance())

    def describe(self) -> str:
        if self.kind == SpectrumKind.EXPLICIT:
            return "explicit:" + ",".join(repr(v) for v in self.explicit)
        return f"{self.kind.value}:{self.value!r}"


def _theorem_one(spec: ContaminationSpec) -> float:
    if spec.kind != ContaminationKind.THEOREM_ONE:
        raise WrongKind(f"expected a theorem_one contamination, got {spec.kind.value}")
    assert spec.c0 is not None
    return spec.c0


def contaminated_moments(spectrum: SpectrumSpec, spec: ContaminationSpec) -> GaussianMoments:
    """Exact mean and covariance of ``(1 - eps) N(0, Sigma) + eps delta_{L v1}``."""
    c0 = _theorem_one(spec)
    eps = spec.epsilon
    amplitude = c0 * spectrum.sigma_max
    mean = np.zeros(spectrum.d)
    mean[0] = eps * amplitude
    cov = (1.0 - eps) * spectrum.covariance()
    cov[0, 0] += eps * (1.0 - eps) * amplitude**2
    return GaussianMoments(mean=mean, cov=cov)


def fad_rank1_closed_form(spectrum: SpectrumSpec, epsilon: float, c0: float) -> float:
    eigenvalues = spectrum.eigenvalues()
    sigma1 = math.sqrt(float(eigenvalues[0]))
    amplitude = c0 * sigma1
    eps_prime = epsilon * (1.0 - epsilon)
    mean_term = epsilon**2 * amplitude**2
    spike_term = (sigma1 - math.sqrt((1.0 - epsilon) * sigma1**2 + eps_prime * amplitude**2)) ** 2
    bulk_term = (1.0 - math.sqrt(1.0 - epsilon)) ** 2 * math.fsum(eigenvalues[1:])
    return mean_term + spike_term + bulk_term


def fad_upper_bound(spectrum: SpectrumSpec, epsilon: float, c0: float) -> float:
    amplitude = c0 * spectrum.sigma_max
    return epsilon**2 * ((2.0 + c0**2) * amplitude**2 + 0.5 * spectrum.trace)


def order_statistic_bound(p_n: Matrix, outlier: Vector, k: int) -> float:
    """Cheapest way to feed ``k`` atoms at ``outlier``: the k closest reference points."""
    sq = np.sort(((p_n - outlier) ** 2).sum(axis=1))
    return math.fsum(sq[:k]) / p_n.shape[0]


def sample_contaminated(
    spectrum: SpectrumSpec, epsilon: float, c0: float, n: int, rng: Rng
) -> tuple[Matrix, Matrix, Vector, int]:
    """Draw ``P_n`` from mu and ``Q_n`` with exactly ceil(eps n) atoms at ``L v1``."""
    eig = spectrum.eigen()
    mean = np.zeros(spectrum.d)
    p_n = sample_gaussian(rng, mean, eig, n)
    k = replaced_count(epsilon, n)
    outlier = np.zeros(spectrum.d)
    outlier[0] = c0 * spectrum.sigma_max
    q_n = np.vstack([np.tile(outlier, (k, 1)), sample_gaussian(rng, mean, eig, n - k)])
    return p_n, q_n, outlier, k


@dataclass(frozen=True)
class TheoremOneCell:
    w2: float
    order_bound: float


@dataclass(frozen=True)
class TheoremOneReport:
    fad_value: float
    fad_upper_bound: float
    w2_empirical: float
    w2_lower_bound: float
    bound_i_holds: bool
    bound_ii_holds: bool
    ratio: float
    r_eff: float
    frequency: float
    seeds: int
    order_bound_violations: int

    def to_row(self) -> dict[str, float | int | bool]:
        return dict(self.__dict__)


def check_theorem1(
    spectrum: SpectrumSpec,
    epsilon: float,
    c0: float,
    n: int,
    seeds: int,
    seed: int = 0,
    workers: int | None = None,
) -> TheoremOneReport:
    """Check both bounds; the second over ``seeds`` independent samples.

    ``bound_ii_holds`` means the lower bound held on at least half of the samples.
    """
    if not 0.0 < epsilon <= 0.5:
        raise ValueError(f"epsilon must lie in (0, 1/2], got {epsilon}")
    if c0 < 1.0:
        raise ValueError(f"c0 must be at least 1, got {c0}")
    replaced_count(epsilon, n)
    fad_value = fad_rank1_closed_form(spectrum, epsilon, c0)
    upper = fad_upper_bound(spectrum, epsilon, c0)
    lower = W2_LOWER_CONSTANT * epsilon * spectrum.trace
    root = Rng(seed)

    def run(index: int) -> TheoremOneCell:
        p_n, q_n, outlier, k = sample_contaminated(spectrum, epsilon, c0, n, root.spawn(index))
        return TheoremOneCell(
            w2=exact_ot(p_n, q_n).total_cost,
            order_bound=order_statistic_bound(p_n, outlier, k),
        )

    cells = parallel_map(run, list(range(seeds)), workers=workers)
    hits = sum(cell.w2 >= lower for cell in cells)
    violations = sum(cell.w2 < cell.order_bound - 1e-9 for cell in cells)
    w2_mean = fsum_mean(cell.w2 for cell in cells)
    frequency = hits / seeds if seeds else math.nan
    logger.info(
        "theorem check %s eps=%g c0=%g: fad=%.4g <= %.4g, W2 freq %.3f",
        spectrum.describe(),
        epsilon,
        c0,
        fad_value,
        upper,
        frequency,
    )
    return TheoremOneReport(
        fad_value=fad_value,
        fad_upper_bound=upper,
        w2_empirical=w2_mean,
        w2_lower_bound=lower,
        bound_i_holds=fad_value <= upper,
        bound_ii_holds=seeds > 0 and frequency >= 0.5,
        ratio=fad_value / w2_mean if w2_mean > 0.0 else math.nan,
        r_eff=spectrum.r_eff,
        frequency=frequency,
        seeds=seeds,
        order_bound_violations=violations,
    )


def corollary_ratio(
    spectrum: SpectrumSpec,
    epsilon: float,
    c0: float,
    n: int,
    seeds: int,
    seed: int = 0,
) -> float:
    """Closed-form FAD over the mean empirical W2^2 of contaminated samples."""
    root = Rng(seed)
    values = []
    for index in range(seeds):
        p_n, q_n, _, _ = sample_contaminated(spectrum, epsilon, c0, n, root.spawn(index))
        values.append(exact_ot(p_n, q_n).total_cost)
    return fad_rank1_closed_form(spectrum, epsilon, c0) / fsum_mean(values)


def corollary_trend(
    kind: str,
    dims: Sequence[int],
    epsilon: float,
    c0: float,
    n: int,
    seeds: int,
    seed: int = 0,
    workers: int | None = None,
) -> list[dict[str, float | int | str]]:
    """FAD over empirical W2^2 for one spectrum family across dimensions."""

    def cell(d: int) -> dict[str, float | int | str]:
        spectrum = SpectrumSpec.parse(kind, d=d)
        return {
            "spectrum": spectrum.describe(),
            "d": int(d),
            "r_eff": spectrum.r_eff,
            "ratio": corollary_ratio(spectrum, epsilon, c0, n, seeds, seed=seed),
        }

    return parallel_map(cell, [int(d) for d in dims], workers=workers)


def theorem1_bound_grid(
    eps_grid: npt.ArrayLike, c0_grid: npt.ArrayLike, dims: npt.ArrayLike, kinds: tuple[str, ...]
) -> list[dict[str, float | int | bool | str]]:
    """Closed form against the upper bound on every grid cell; no sampling."""
    grid = {
        "kind": list(kinds),
        "d": [int(d) for d in np.asarray(dims, dtype=int)],
        "epsilon": [float(e) for e in np.asarray(eps_grid, dtype=np.float64)],
        "c0": [float(c) for c in np.asarray(c0_grid, dtype=np.float64)],
    }
    rows: list[dict[str, float | int | bool | str]] = []
    spectra: dict[tuple[str, int], SpectrumSpec] = {}
    for cell in product_dict(grid):
        key = (cell["kind"], cell["d"])
        if key not in spectra:
            spectra[key] = SpectrumSpec.parse(cell["kind"], d=cell["d"])
        spectrum = spectra[key]
        value = fad_rank1_closed_form(spectrum, cell["epsilon"], cell["c0"])
        bound = fad_upper_bound(spectrum, cell["epsilon"], cell["c0"])
        rows.append(
            {
                "spectrum": spectrum.describe(),
                "d": cell["d"],
                "epsilon": cell["epsilon"],
                "c0": cell["c0"],
                "fad_closed_form": value,
                "fad_upper_bound": bound,
                "bound_i_holds": value <= bound,
            }
        )
    return rows

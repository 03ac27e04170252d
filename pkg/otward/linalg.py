"""Dense linear algebra and seeded sampling shared by every other module.

All arrays are ``float64`` numpy arrays. ``Matrix`` and ``Vector`` are aliases for
readability only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import logging
import math
from typing import Literal

import numpy as np
import numpy.typing as npt
import scipy.linalg

from otward.errors import DimensionMismatch
from otward.errors import IndefiniteInput
from otward.errors import NotConverged
from otward.errors import NotSymmetric


logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

SYMMETRY_ATOL = 1e-9
NEGATIVE_EIG_RTOL = 1e-8
JACOBI_MAX_SWEEPS = 100
JACOBI_RTOL = 1e-12

_UINT64_MASK = (1 << 64) - 1


def as_matrix(x: npt.ArrayLike, name: str = "matrix") -> Matrix:
    """Widen to a 2-D float64 array and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class Rng:
    """Seeded random stream.

    Backed by the counter-based Philox4x64 generator from numpy, seeded through
    ``SeedSequence(seed)``. Gaussian variates use Box-Muller on consecutive uniform
    pairs ``(u0, u1)`` taken in stream order: ``r = sqrt(-2 log(1 - u0))``,
    ``z_even = r cos(2 pi u1)``, ``z_odd = r sin(2 pi u1)``. An odd request discards
    the last sine value, so it always consumes an even number of uniforms.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & _UINT64_MASK
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"

    def spawn(self, key: int) -> Rng:
        """Independent child stream for Monte Carlo cell ``key``."""
        state = np.random.SeedSequence([self.seed, int(key) & _UINT64_MASK]).generate_state(
            1, np.uint64
        )
        return Rng(int(state[0]))

    def uniform(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        return self._gen.random(size)

    def normal(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = math.prod(shape)
        pairs = (count + 1) // 2
        u = self._gen.random(2 * pairs)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:count].reshape(shape)

    def integers(self, low: int, high: int, size: int | None = None) -> npt.NDArray[np.int64]:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> npt.NDArray[np.int64]:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> npt.NDArray[np.int64]:
        return self._gen.choice(n, size=size, replace=replace)


@dataclass(frozen=True)
class SymEigen:
    eigenvalues: Vector
    eigenvectors: Matrix

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> Matrix:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


@lru_cache(maxsize=64)
def _round_robin_schedule(d: int) -> tuple[tuple[npt.NDArray[np.intp], npt.NDArray[np.intp]], ...]:
    # circle method: every index pair appears exactly once per sweep, pairs within a
    # round are disjoint; odd d gets a dummy index that sits out.
    m = d + (d % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < d and b < d:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1], *players[1:-1]]
    return tuple(rounds)


def _off_diagonal_norm(a: Matrix) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def _jacobi(m: Matrix) -> tuple[Vector, Matrix]:
    d = m.shape[0]
    a = m.copy()
    v = np.eye(d)
    target = JACOBI_RTOL * float(np.linalg.norm(m))
    schedule = _round_robin_schedule(d)
    for sweep in range(JACOBI_MAX_SWEEPS + 1):
        off = _off_diagonal_norm(a)
        if off <= target:
            logger.debug("jacobi converged after %d sweeps (d=%d)", sweep, d)
            return np.diag(a).copy(), v
        if sweep == JACOBI_MAX_SWEEPS:
            break
        for p, q in schedule:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            safe_apq = np.where(active, apq, 1.0)
            theta = (a[q, q] - a[p, p]) / (2.0 * safe_apq)
            sign = np.where(theta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    raise NotConverged(
        f"Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps "
        f"(off-diagonal norm {_off_diagonal_norm(a):.3e}, target {target:.3e})"
    )


def sym_eigen(m: npt.ArrayLike, method: Literal["jacobi", "lapack"] = "jacobi") -> SymEigen:
    """Eigendecomposition of a symmetric positive semidefinite matrix.

    Args:
        m: square matrix, symmetric within ``1e-9`` absolute.
        method: ``"jacobi"`` (cyclic Jacobi, round-robin order) or ``"lapack"``.

    Returns:
        SymEigen with eigenvalues in descending order and orthonormal eigenvector
        columns. Eigenvalues in ``[-1e-8 |trace|, 0)`` are clamped to zero.
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > SYMMETRY_ATOL:
        raise NotSymmetric(f"matrix is not symmetric (max |m - m^T| = {asym:.3e})")
    a = 0.5 * (a + a.T)

    if method == "jacobi":
        eigenvalues, eigenvectors = _jacobi(a)
    elif method == "lapack":
        eigenvalues, eigenvectors = scipy.linalg.eigh(a)
    else:
        raise ValueError(f"Unknown eigen method {method!r}")

    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    floor = -NEGATIVE_EIG_RTOL * abs(float(np.trace(a)))
    if eigenvalues.size and eigenvalues[-1] < floor:
        raise IndefiniteInput(
            f"smallest eigenvalue {eigenvalues[-1]:.6e} is below the clamp floor {floor:.3e}"
        )
    eigenvalues = np.where(eigenvalues < 0.0, 0.0, eigenvalues)
    return SymEigen(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def spd_sqrt(m: npt.ArrayLike, method: Literal["jacobi", "lapack"] = "jacobi") -> Matrix:
    eig = sym_eigen(m, method=method)
    v = eig.eigenvectors
    root = (v * np.sqrt(eig.eigenvalues)) @ v.T
    return 0.5 * (root + root.T)


def sample_gaussian(rng: Rng, mean: npt.ArrayLike, cov_eigen: SymEigen, n: int) -> Matrix:
    """Draw ``n`` rows from N(mean, V diag(lambda) V^T)."""
    mu = np.asarray(mean, dtype=np.float64).reshape(-1)
    d = cov_eigen.eigenvectors.shape[0]
    if mu.shape[0] != d:
        raise DimensionMismatch(f"mean has length {mu.shape[0]}, eigenvectors have {d} rows")
    if np.any(cov_eigen.eigenvalues < 0.0):
        raise IndefiniteInput("covariance eigenvalues must be non-negative")
    z = rng.normal((n, d))
    scaled = z * np.sqrt(cov_eigen.eigenvalues)
    return mu + scaled @ cov_eigen.eigenvectors.T


def pairwise_sq_dists(x: npt.ArrayLike, y: npt.ArrayLike) -> Matrix:
    """``out[i, j] = ||x_i - y_j||^2`` via the Gram expansion, clamped at zero."""
    xm = as_matrix(x, "x")
    ym = as_matrix(y, "y")
    if xm.shape[1] != ym.shape[1]:
        raise DimensionMismatch(f"x has {xm.shape[1]} columns, y has {ym.shape[1]}")
    same = xm is ym or (xm.shape == ym.shape and np.array_equal(xm, ym))
    # common shift keeps the expansion well conditioned for far-from-origin clouds
    shift = xm.mean(axis=0)
    xc = xm - shift
    yc = xc if same else ym - shift
    x2 = np.einsum("ij,ij->i", xc, xc)
    y2 = x2 if same else np.einsum("ij,ij->i", yc, yc)
    out = x2[:, None] + y2[None, :] - 2.0 * (xc @ yc.T)
    np.maximum(out, 0.0, out=out)
    if same:
        out = 0.5 * (out + out.T)
        np.fill_diagonal(out, 0.0)
    return out


def pairwise_dists(x: npt.ArrayLike, y: npt.ArrayLike) -> Matrix:
    return np.sqrt(pairwise_sq_dists(x, y))

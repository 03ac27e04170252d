"""Embedding-space stand-ins for the four perceptual probes.

Classes are isotropic Gaussian clusters whose centres sit on an orthonormal frame
around a common offset, so every pair of centres is ``class_sep`` apart.

* recall: anchor and positive share a class, the negative comes from another class.
* semantic: the negative keeps the anchor's within-class residual but swaps its class.
* precision: positive and negative are the anchor plus low and high isotropic noise.
* structural: the negative is the anchor with coordinate blocks permuted.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
import math

import numpy as np
import numpy.typing as npt

from otward.linalg import Matrix
from otward.linalg import Rng
from otward.probes.probe import TripletBatch


PROBE_KINDS = ("recall", "semantic", "precision", "structural")


@dataclass(frozen=True)
class ProbeConfig:
    d: int
    n_classes: int = 4
    class_sep: float = 1.5
    within_std: float = 0.2
    center_offset: float = 0.75
    low_noise: float = 0.05
    high_noise: float = 0.5
    block_size: int | None = None
    kinds: tuple[str, ...] = PROBE_KINDS
    seed: int = 0

    def __post_init__(self) -> None:
        unknown = set(self.kinds) - set(PROBE_KINDS)
        if unknown or not self.kinds:
            raise ValueError(f"Unknown or empty probe kinds: {sorted(unknown)}")
        if not 2 <= self.n_classes <= self.d:
            raise ValueError(f"need 2 <= n_classes <= d, got {self.n_classes} for d={self.d}")
        if "structural" in self.kinds and self.d // self.resolved_block_size < 2:
            raise ValueError("structural probes need at least two coordinate blocks")

    @property
    def resolved_block_size(self) -> int:
        return self.block_size if self.block_size is not None else max(1, self.d // 4)


@dataclass(frozen=True)
class ClassGeometry:
    centers: Matrix
    within_std: float

    @classmethod
    def build(cls, cfg: ProbeConfig, rng: Rng) -> ClassGeometry:
        frame, _ = np.linalg.qr(rng.normal((cfg.d, cfg.n_classes)))
        centers = cfg.center_offset + (cfg.class_sep / math.sqrt(2.0)) * frame.T
        return cls(centers=centers, within_std=cfg.within_std)

    @property
    def n_classes(self) -> int:
        return int(self.centers.shape[0])

    def labels(self, rng: Rng, n: int) -> npt.NDArray[np.int64]:
        return rng.integers(0, self.n_classes, size=n)

    def other_labels(self, rng: Rng, labels: npt.NDArray[np.int64]) -> npt.NDArray[np.int64]:
        return (labels + rng.integers(1, self.n_classes, size=labels.shape[0])) % self.n_classes

    def residuals(self, rng: Rng, n: int) -> Matrix:
        return self.within_std * rng.normal((n, self.centers.shape[1]))

    def draw(self, rng: Rng, labels: npt.NDArray[np.int64]) -> Matrix:
        return self.centers[labels] + self.residuals(rng, labels.shape[0])


def shuffle_blocks(x: Matrix, block_size: int, order: npt.NDArray[np.int64]) -> Matrix:
    """Reorder the leading ``len(order) * block_size`` columns block-wise; the tail stays."""
    n_blocks = order.shape[0]
    head = x[:, : n_blocks * block_size].reshape(x.shape[0], n_blocks, block_size)
    shuffled = head[:, order, :].reshape(x.shape[0], -1)
    return np.concatenate([shuffled, x[:, n_blocks * block_size :]], axis=1)


def recall_triplets(geom: ClassGeometry, cfg: ProbeConfig, rng: Rng, n: int) -> TripletBatch:
    labels = geom.labels(rng, n)
    return TripletBatch(
        anchors=geom.draw(rng, labels),
        positives=geom.draw(rng, labels),
        negatives=geom.draw(rng, geom.other_labels(rng, labels)),
    )


def semantic_triplets(geom: ClassGeometry, cfg: ProbeConfig, rng: Rng, n: int) -> TripletBatch:
    labels = geom.labels(rng, n)
    residual = geom.residuals(rng, n)
    anchors = geom.centers[labels] + residual
    return TripletBatch(
        anchors=anchors,
        positives=anchors + cfg.low_noise * rng.normal(anchors.shape),
        negatives=geom.centers[geom.other_labels(rng, labels)] + residual,
    )


def precision_triplets(geom: ClassGeometry, cfg: ProbeConfig, rng: Rng, n: int) -> TripletBatch:
    anchors = geom.draw(rng, geom.labels(rng, n))
    return TripletBatch(
        anchors=anchors,
        positives=anchors + cfg.low_noise * rng.normal(anchors.shape),
        negatives=anchors + cfg.high_noise * rng.normal(anchors.shape),
    )


def structural_triplets(geom: ClassGeometry, cfg: ProbeConfig, rng: Rng, n: int) -> TripletBatch:
    anchors = geom.draw(rng, geom.labels(rng, n))
    block = cfg.resolved_block_size
    n_blocks = cfg.d // block
    order = rng.permutation(n_blocks)
    if np.array_equal(order, np.arange(n_blocks)):
        order = np.roll(order, 1)
    return TripletBatch(
        anchors=anchors,
        positives=anchors + cfg.low_noise * rng.normal(anchors.shape),
        negatives=shuffle_blocks(anchors, block, order),
    )


PROBE_GENERATORS: dict[str, Callable[[ClassGeometry, ProbeConfig, Rng, int], TripletBatch]] = {
    "recall": recall_triplets,
    "semantic": semantic_triplets,
    "precision": precision_triplets,
    "structural": structural_triplets,
}

from __future__ import annotations

from abc import ABCMeta
from abc import abstractmethod
from dataclasses import dataclass
from dataclasses import fields

import numpy as np
import numpy.typing as npt

from otward.errors import DimensionMismatch
from otward.linalg import Matrix
from otward.linalg import Rng


@dataclass
class TripletBatch:
    """
    A batch of (anchor, positive, negative) embedding triplets.

    ``kinds`` names the probe that produced each row; it is optional so hand-built
    batches in tests need only the three matrices.
    """

    anchors: Matrix
    positives: Matrix
    negatives: Matrix

    kinds: npt.NDArray[np.str_] | None = None

    def __post_init__(self) -> None:
        shapes = {self.anchors.shape, self.positives.shape, self.negatives.shape}
        if len(shapes) != 1 or self.anchors.ndim != 2:
            raise DimensionMismatch(
                f"triplet matrices must share one 2-D shape, got {sorted(shapes)}"
            )
        if self.kinds is not None and len(self.kinds) != self.anchors.shape[0]:
            raise DimensionMismatch("one probe kind per triplet row is required")

    def __len__(self) -> int:
        return int(self.anchors.shape[0])

    @property
    def d(self) -> int:
        return int(self.anchors.shape[1])


def merge_triplet_batches(*batches: TripletBatch) -> TripletBatch:
    """Concatenate batches row-wise; kinds survive only if every batch has them."""
    assert batches, "nothing to merge"
    merged = {
        f.name: np.concatenate([getattr(b, f.name) for b in batches], axis=0)
        for f in fields(batches[0])
        if all(getattr(b, f.name) is not None for b in batches)
    }
    return TripletBatch(**merged)


class ProbeSource(metaclass=ABCMeta):
    """Anything that can hand out training batches for the adapter.

    The triplet track calls ``sample_triplets``; the Sinkhorn-native track calls
    ``sample_sets`` for a (reference, test) pair of same-size batches.
    """

    d: int

    @abstractmethod
    def sample_triplets(self, rng: Rng, batch_size: int) -> TripletBatch:
        pass

    @abstractmethod
    def sample_sets(self, rng: Rng, batch_size: int) -> tuple[Matrix, Matrix]:
        pass

from __future__ import annotations

import logging

import numpy as np

from otward.linalg import Matrix
from otward.linalg import Rng
from otward.probes.probe import merge_triplet_batches
from otward.probes.probe import ProbeSource
from otward.probes.probe import TripletBatch
from otward.probes.synthetic import ClassGeometry
from otward.probes.synthetic import PROBE_GENERATORS
from otward.probes.synthetic import ProbeConfig


logger = logging.getLogger(__name__)


class SyntheticProbes(ProbeSource):
    """Equal-proportion mixture of the configured probe kinds over one class geometry.

    The geometry is fixed by ``cfg.seed``; the batches themselves come from the Rng
    passed to each call, so a training run is reproducible from its own seed.
    """

    def __init__(self, cfg: ProbeConfig) -> None:
        self.cfg = cfg
        self.d = cfg.d
        self.geometry = ClassGeometry.build(cfg, Rng(cfg.seed))

    def kind_counts(self, rng: Rng, batch_size: int) -> dict[str, int]:
        """Split ``batch_size`` evenly over kinds; the remainder goes to random kinds."""
        kinds = self.cfg.kinds
        base, extra = divmod(batch_size, len(kinds))
        counts = dict.fromkeys(kinds, base)
        if extra:
            for idx in rng.choice(len(kinds), size=extra, replace=False):
                counts[kinds[int(idx)]] += 1
        return counts

    def sample_triplets(self, rng: Rng, batch_size: int) -> TripletBatch:
        parts = []
        for kind, count in self.kind_counts(rng, batch_size).items():
            if count == 0:
                continue
            batch = PROBE_GENERATORS[kind](self.geometry, self.cfg, rng, count)
            batch.kinds = np.full(count, kind)
            parts.append(batch)
        merged = merge_triplet_batches(*parts)
        order = rng.permutation(len(merged))
        assert merged.kinds is not None
        return TripletBatch(
            anchors=merged.anchors[order],
            positives=merged.positives[order],
            negatives=merged.negatives[order],
            kinds=merged.kinds[order],
        )

    def sample_sets(self, rng: Rng, batch_size: int) -> tuple[Matrix, Matrix]:
        """A clean reference batch and an independent benign variant (low-noise copy)."""
        ref = self.geometry.draw(rng, self.geometry.labels(rng, batch_size))
        test = self.geometry.draw(rng, self.geometry.labels(rng, batch_size))
        test = test + self.cfg.low_noise * rng.normal(test.shape)
        return ref, test

from __future__ import annotations

import math

import numpy as np
import pytest

from otward.errors import EpsilonTooSmall
from otward.errors import WrongKind
from otward.harness.contamination import contaminate
from otward.harness.contamination import ContaminationKind
from otward.harness.contamination import ContaminationSpec
from otward.harness.contamination import default_metrics
from otward.harness.contamination import dilution_factor
from otward.harness.contamination import leading_direction
from otward.harness.contamination import rank1_sensitivity
from otward.harness.contamination import replaced_count
from otward.harness.contamination import self_normalise
from otward.linalg import Rng
from otward.metrics import EmbeddingSet
from otward.metrics import fad
from otward.metrics import fit_moments


@pytest.fixture
def base() -> EmbeddingSet:
    points = Rng(40).normal((200, 6)) * np.array([3.0, 1.0, 1.0, 0.5, 0.5, 0.5]) + 2.0
    return EmbeddingSet(points=points, labels=np.arange(200))


class TestContaminationSpec:
    @pytest.mark.parametrize(
        "text, kind",
        [
            ("rank1", ContaminationKind.RANK_ONE),
            ("R1", ContaminationKind.RANK_ONE),
            ("full-rank", ContaminationKind.FULL_RANK),
            ("fr", ContaminationKind.FULL_RANK),
            ("theorem1", ContaminationKind.THEOREM_ONE),
        ],
    )
    def test_parse_aliases(self, text, kind):
        assert ContaminationKind.parse(text) == kind

    def test_misplaced_fields(self):
        with pytest.raises(WrongKind):
            ContaminationSpec(ContaminationKind.RANK_ONE, 0.1, noise_scale=1.0)
        with pytest.raises(WrongKind):
            ContaminationSpec(ContaminationKind.FULL_RANK, 0.1, c0=2.0)
        with pytest.raises(ValueError):
            ContaminationSpec.theorem_one(0.1, 0.5)
        with pytest.raises(ValueError):
            ContaminationSpec.rank_one(1.0)

    @pytest.mark.parametrize("eps, n, k", [(0.05, 1000, 50), (0.005, 200, 1), (0.1, 15, 2)])
    def test_replaced_count(self, eps, n, k):
        assert replaced_count(eps, n) == k

    def test_epsilon_too_small(self):
        with pytest.raises(EpsilonTooSmall):
            replaced_count(0.0, 100)
        with pytest.raises(EpsilonTooSmall):
            contaminate(np.zeros((5, 2)), ContaminationSpec.rank_one(0.0), Rng(0))


class TestContaminate:
    def test_rank_one_rows_identical_and_along_v1(self, base):
        out, mask = contaminate(base, ContaminationSpec.rank_one(0.05), Rng(1))
        assert mask.sum() == 10
        assert out.n == base.n
        replaced = out.points[mask]
        np.testing.assert_array_equal(replaced, np.tile(replaced[0], (10, 1)))
        np.testing.assert_array_equal(out.points[~mask], base.points[~mask])
        np.testing.assert_array_equal(out.labels, base.labels)

        v1, lam1 = leading_direction(base)
        displacement = float((replaced[0] - base.points.mean(axis=0)) @ v1)
        assert displacement == pytest.approx(5.0 * math.sqrt(lam1), rel=1e-12)
        assert abs(v1[0]) > 0.9
        assert v1[int(np.argmax(np.abs(v1)))] > 0.0

    def test_full_rank_outliers_are_independent(self, base):
        out, mask = contaminate(base, ContaminationSpec.full_rank(0.1), Rng(2))
        replaced = out.points[mask]
        assert len(np.unique(replaced, axis=0)) == 20
        cov = fit_moments(base).cov
        expected_scale = 5.0 * math.sqrt(np.trace(cov) / base.d)
        spread = np.std(replaced - base.points.mean(axis=0))
        assert spread == pytest.approx(expected_scale, rel=0.25)

    def test_explicit_noise_scale(self, base):
        spec = ContaminationSpec.full_rank(0.5, noise_scale=1e-6)
        out, mask = contaminate(base, spec, Rng(3))
        np.testing.assert_allclose(out.points[mask], base.points.mean(axis=0), atol=1e-4)

    def test_theorem_one_amplitude(self, base):
        out, mask = contaminate(base, ContaminationSpec.theorem_one(0.05, 2.0), Rng(4))
        v1, lam1 = leading_direction(base)
        displacement = float((out.points[mask][0] - base.points.mean(axis=0)) @ v1)
        assert displacement == pytest.approx(2.0 * math.sqrt(lam1), rel=1e-12)

    def test_same_seed_same_rows(self, base):
        spec = ContaminationSpec.rank_one(0.1)
        _, first = contaminate(base, spec, Rng(5))
        _, second = contaminate(base, spec, Rng(5))
        np.testing.assert_array_equal(first, second)


class TestSensitivity:
    def test_self_normalise(self):
        np.testing.assert_allclose(self_normalise([1.0, 4.0], 2.0), [0.5, 2.0])
        with pytest.raises(ValueError):
            self_normalise([1.0], 0.0)

    def test_normalised_ratios_are_scale_free(self, base):
        def plain(x, y):
            return fad(fit_moments(x), fit_moments(y))

        def scaled(x, y):
            return 1000.0 * plain(x, y)

        grid = (0.02, 0.05)
        rows = rank1_sensitivity(base, grid, rng=Rng(6), metrics={"a": plain})
        rows_scaled = rank1_sensitivity(base, grid, rng=Rng(6), metrics={"a": scaled})
        for row, row_scaled in zip(rows, rows_scaled):
            assert row_scaled["raw_r1"] == pytest.approx(1000.0 * row["raw_r1"])
            assert row_scaled["r1_fr_ratio"] == pytest.approx(row["r1_fr_ratio"])
            assert row_scaled["fr_normalised"] == pytest.approx(row["fr_normalised"])

    def test_rows_and_zero_epsilon(self, base):
        rows = rank1_sensitivity(base, (0.0, 0.05), eps_reg=0.05, rng=Rng(7))
        assert len(rows) == 2 * 4
        assert {row["metric"] for row in rows} == {"fad", "kad", "sinkhorn", "exact_ot"}
        zero = {row["metric"]: row for row in rows if row["epsilon"] == 0.0}
        assert zero["fad"]["raw_r1"] == pytest.approx(0.0, abs=1e-9)
        assert zero["exact_ot"]["raw_r1"] == 0.0
        assert zero["sinkhorn"]["raw_r1"] == pytest.approx(0.0, abs=1e-9)
        at_005 = [row for row in rows if row["epsilon"] == 0.05]
        assert all(row["fr_reference"] > 0.0 for row in at_005)
        assert math.isfinite(float(at_005[0]["log10_sinkhorn_over_fad"]))

    def test_dilution_factor(self):
        rows = [
            {"epsilon": 0.05, "metric": "sinkhorn", "r1_fr_ratio": 0.6},
            {"epsilon": 0.05, "metric": "fad", "r1_fr_ratio": 0.2},
            {"epsilon": 0.1, "metric": "fad", "r1_fr_ratio": 0.9},
        ]
        assert dilution_factor(rows) == pytest.approx(3.0)
        with pytest.raises(KeyError):
            dilution_factor(rows, epsilon=0.1)

    @pytest.mark.slow
    def test_sinkhorn_reacts_more_than_fad_to_rank_one(self):
        metrics = {k: v for k, v in default_metrics(0.05).items() if k in ("fad", "sinkhorn")}
        factors = []
        for seed in range(10):
            rng = Rng(seed)
            points = rng.normal((1000, 128))
            rows = rank1_sensitivity(points, (0.05,), rng=rng.spawn(99), metrics=metrics)
            factors.append(dilution_factor(rows))
        assert float(np.mean(factors)) >= 1.9

from __future__ import annotations

import math

import numpy as np
import pytest

from otward import config
from otward.errors import DimensionMismatch
from otward.errors import WrongKind
from otward.harness.contamination import ContaminationSpec
from otward.harness.theory import check_theorem1
from otward.harness.theory import contaminated_moments
from otward.harness.theory import corollary_trend
from otward.harness.theory import fad_rank1_closed_form
from otward.harness.theory import fad_upper_bound
from otward.harness.theory import order_statistic_bound
from otward.harness.theory import sample_contaminated
from otward.harness.theory import SpectrumKind
from otward.harness.theory import SpectrumSpec
from otward.harness.theory import theorem1_bound_grid
from otward.linalg import Rng
from otward.metrics import exact_ot
from otward.metrics import fad


class TestSpectrumSpec:
    def test_flat(self):
        spec = SpectrumSpec.parse("flat:2", d=4)
        np.testing.assert_array_equal(spec.eigenvalues(), [2.0] * 4)
        assert spec.r_eff == 4.0
        assert spec.sigma_max == pytest.approx(math.sqrt(2.0))
        assert spec.describe() == "flat:2.0"

    def test_spike(self):
        spec = SpectrumSpec.parse("spike", d=8)
        assert spec.eigenvalues()[0] == 80.0
        assert spec.trace == 87.0
        assert spec.r_eff == pytest.approx(87.0 / 80.0)

    def test_explicit_sorted(self):
        spec = SpectrumSpec.parse("explicit:1,3,2")
        assert spec.kind == SpectrumKind.EXPLICIT
        assert spec.d == 3
        np.testing.assert_array_equal(spec.eigenvalues(), [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(spec.covariance(), np.diag([3.0, 2.0, 1.0]))

    def test_errors(self):
        with pytest.raises(DimensionMismatch):
            SpectrumSpec.parse("explicit:1,2", d=3)
        with pytest.raises(ValueError):
            SpectrumSpec.parse("bumpy:1", d=3)
        with pytest.raises(ValueError):
            SpectrumSpec.parse("flat:1")
        with pytest.raises(ValueError):
            SpectrumSpec.parse("explicit:1,-2")


class TestContaminatedMoments:
    def test_two_dimensional_example(self):
        spectrum = SpectrumSpec(SpectrumKind.FLAT, 2)
        moments = contaminated_moments(spectrum, ContaminationSpec.theorem_one(0.5, 3.0))
        np.testing.assert_allclose(moments.mean, [1.5, 0.0])
        np.testing.assert_allclose(moments.cov, np.diag([2.75, 0.5]))

    def test_zero_epsilon_is_unchanged(self):
        spectrum = SpectrumSpec.parse("spike:4", d=5)
        moments = contaminated_moments(spectrum, ContaminationSpec.theorem_one(0.0, 2.0))
        np.testing.assert_array_equal(moments.mean, np.zeros(5))
        np.testing.assert_array_equal(moments.cov, spectrum.covariance())

    def test_rejects_other_kinds(self):
        with pytest.raises(WrongKind):
            contaminated_moments(SpectrumSpec.parse("flat", d=3), ContaminationSpec.rank_one(0.1))

    def test_matches_sampled_mixture(self):
        spectrum = SpectrumSpec.parse("flat:1", d=3)
        _, q_n, _, k = sample_contaminated(spectrum, 0.2, 2.0, 200_000, Rng(3))
        expected = contaminated_moments(spectrum, ContaminationSpec.theorem_one(k / 200_000, 2.0))
        np.testing.assert_allclose(q_n.mean(axis=0), expected.mean, atol=0.01)
        np.testing.assert_allclose(np.cov(q_n.T), expected.cov, atol=0.02)


class TestClosedForm:
    @pytest.mark.parametrize("kind", ["flat", "spike"])
    @pytest.mark.parametrize("d", config.THEOREM1_DIMS)
    def test_matches_general_fad(self, kind, d):
        spectrum = SpectrumSpec.parse(kind, d=d)
        for eps in config.THEOREM1_EPS_GRID:
            for c0 in config.THEOREM1_C0_GRID:
                spec = ContaminationSpec.theorem_one(eps, c0)
                general = fad(spectrum.moments(), contaminated_moments(spectrum, spec))
                closed = fad_rank1_closed_form(spectrum, eps, c0)
                assert general == pytest.approx(closed, rel=1e-10, abs=1e-10 * spectrum.trace)

    def test_upper_bound_holds_on_the_grid(self):
        rows = theorem1_bound_grid(
            config.THEOREM1_EPS_GRID,
            config.THEOREM1_C0_GRID,
            config.THEOREM1_DIMS,
            ("flat", "spike"),
        )
        assert len(rows) == 2 * 3 * 8 * 4
        assert all(row["bound_i_holds"] for row in rows)

    def test_grid_rows_vary_the_contamination_amplitude_fastest(self):
        rows = theorem1_bound_grid([0.05, 0.1], [2.0, 8.0], [4, 8], ("flat", "spike"))
        cells = [
            (row["spectrum"].split(":")[0], row["d"], row["epsilon"], row["c0"]) for row in rows
        ]
        assert cells == [
            (kind, d, eps, c0)
            for kind in ("flat", "spike")
            for d in (4, 8)
            for eps in (0.05, 0.1)
            for c0 in (2.0, 8.0)
        ]
        assert rows[0]["fad_closed_form"] == pytest.approx(
            fad_rank1_closed_form(SpectrumSpec.parse("flat", d=4), 0.05, 2.0)
        )

    def test_upper_bound_value(self):
        spectrum = SpectrumSpec.parse("flat:1", d=4)
        assert fad_upper_bound(spectrum, 0.1, 2.0) == pytest.approx(0.01 * (6.0 * 4.0 + 2.0))


class TestOrderStatistic:
    def test_example(self):
        p_n = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        assert order_statistic_bound(p_n, np.zeros(2), 2) == pytest.approx(1.0 / 3.0)

    def test_below_exact_ot(self):
        spectrum = SpectrumSpec.parse("flat:1", d=6)
        for seed in range(5):
            p_n, q_n, outlier, k = sample_contaminated(spectrum, 0.1, 4.0, 60, Rng(seed))
            assert k == 6
            np.testing.assert_array_equal(q_n[:k], np.tile(outlier, (k, 1)))
            assert order_statistic_bound(p_n, outlier, k) <= exact_ot(p_n, q_n).total_cost


class TestCheckTheoremOne:
    def test_small_run(self):
        spectrum = SpectrumSpec.parse("flat:1", d=16)
        report = check_theorem1(spectrum, 0.1, 8.0, 100, 10, seed=4)
        assert report.bound_i_holds
        assert report.fad_value <= report.fad_upper_bound
        assert report.w2_lower_bound == pytest.approx(0.1 * 16 / 4)
        assert report.frequency == 1.0
        assert report.bound_ii_holds
        assert report.order_bound_violations == 0
        assert report.ratio == pytest.approx(report.fad_value / report.w2_empirical)
        assert report.r_eff == 16.0

    def test_reproducible_across_worker_counts(self):
        spectrum = SpectrumSpec.parse("spike", d=8)
        serial = check_theorem1(spectrum, 0.2, 2.0, 40, 6, seed=9, workers=1)
        threaded = check_theorem1(spectrum, 0.2, 2.0, 40, 6, seed=9, workers=3)
        assert serial == threaded

    @pytest.mark.parametrize("eps, c0", [(0.6, 2.0), (0.0, 2.0), (0.1, 0.5)])
    def test_preconditions(self, eps, c0):
        with pytest.raises(ValueError):
            check_theorem1(SpectrumSpec.parse("flat", d=4), eps, c0, 50, 2)

    @pytest.mark.slow
    def test_lower_bound_frequency(self):
        spectrum = SpectrumSpec.parse("flat:1", d=64)
        report = check_theorem1(spectrum, 0.1, 8.0, 500, 200, seed=0)
        assert report.bound_i_holds
        assert report.frequency >= 0.4
        assert report.order_bound_violations == 0


def _trend(kind: str, n: int, seeds: int) -> tuple[float, float]:
    rows = corollary_trend(kind, (16, 256), 0.05, 5.0, n, seeds, seed=1)
    assert [row["d"] for row in rows] == [16, 256]
    return float(rows[0]["ratio"]), float(rows[1]["ratio"])


def test_flat_ratio_collapses_with_dimension():
    low, high = _trend("flat", 200, 3)
    assert high <= low / 8.0


def test_spike_ratio_is_stable_across_dimension():
    low, high = _trend("spike", 200, 3)
    assert max(low, high) / min(low, high) <= 3.0


@pytest.mark.slow
def test_corollary_trend_at_full_scale():
    flat_low, flat_high = _trend("flat", 500, 20)
    spike_low, spike_high = _trend("spike", 500, 20)
    assert flat_high <= flat_low / 8.0
    assert max(spike_low, spike_high) / min(spike_low, spike_high) <= 3.0

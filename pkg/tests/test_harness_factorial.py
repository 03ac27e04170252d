from __future__ import annotations

import math

import numpy as np
import pytest

from otward.adapter import ResidualAdapter
from otward.errors import AllZero
from otward.errors import DegenerateInput
from otward.errors import DimensionMismatch
from otward.harness.factorial import Factor
from otward.harness.factorial import factorial_decomposition
from otward.harness.factorial import log_normalise
from otward.harness.factorial import run_factorial
from otward.linalg import Rng


class TestLogNormalise:
    def test_endpoints(self):
        np.testing.assert_array_equal(log_normalise([0.0, 7.5]), [0.0, 1.0])

    def test_half(self):
        out = log_normalise([math.e - 1.0, math.e**2 - 1.0])
        assert out[0] == pytest.approx(0.5, rel=1e-12)
        assert out[1] == 1.0

    def test_monotone(self):
        out = log_normalise([0.1, 0.5, 2.0, 40.0])
        assert np.all(np.diff(out) > 0.0)

    def test_errors(self):
        with pytest.raises(AllZero):
            log_normalise([0.0, 0.0])
        with pytest.raises(DegenerateInput):
            log_normalise([-1.0, 2.0])


class TestDecomposition:
    def test_equal_conditions(self):
        result = factorial_decomposition(0.3, 0.3, 0.3, 0.3)
        assert (result.delta_cost, result.delta_meas, result.delta_syn) == (0.0, 0.0, 0.0)
        assert result.dominant == Factor.COST

    def test_pure_cost_effect(self):
        result = factorial_decomposition(1.0, 1.0, 0.0, 0.0)
        assert (result.delta_cost, result.delta_meas, result.delta_syn) == (-1.0, 0.0, 0.0)
        assert result.dominant == Factor.COST

    def test_synergy(self):
        result = factorial_decomposition(0.0, 0.0, 0.0, 1.0)
        assert (result.delta_cost, result.delta_meas, result.delta_syn) == (0.5, 0.5, 1.0)
        assert result.dominant == Factor.SYN

    def test_ties_follow_dominance_order(self):
        cost_syn = factorial_decomposition(0.0, 0.0, 0.75, 0.25)
        assert abs(cost_syn.delta_cost) == abs(cost_syn.delta_syn) == 0.5
        assert cost_syn.dominant == Factor.COST
        syn_meas = factorial_decomposition(0.0, 0.25, 0.0, 0.75)
        assert abs(syn_meas.delta_syn) == abs(syn_meas.delta_meas) == 0.5
        assert syn_meas.dominant == Factor.SYN

    def test_identity_holds_for_random_inputs(self):
        rng = Rng(3)
        for a, b, c, d in rng.uniform((200, 4)):
            result = factorial_decomposition(a, b, c, d)
            assert d - a == pytest.approx(result.delta_cost + result.delta_meas, abs=1e-12)

    def test_row_columns(self):
        row = factorial_decomposition(0.1, 0.2, 0.3, 0.4, raw=(1.0, 2.0, 3.0, 4.0)).to_row()
        assert list(row)[:8] == ["A", "B", "C", "D", "A_n", "B_n", "C_n", "D_n"]
        assert list(row)[8:] == ["delta_cost", "delta_meas", "delta_syn", "dominant"]
        assert row["A"] == 1.0
        assert row["A_n"] == 0.1


def _artifact_adapter(kappa: float = 4.0) -> ResidualAdapter:
    """Residual that moves points with a large first coordinate further out along e1."""
    adapter = ResidualAdapter(8)
    w1 = np.zeros((8, 2))
    w1[0, 0] = 1.0
    w2 = np.zeros((2, 8))
    w2[0, 0] = kappa
    return adapter.load_arrays({"w1": w1, "b1": np.array([-4.0, 0.0]), "w2": w2})


@pytest.fixture
def planted_pair():
    rng = Rng(50)
    ref = rng.normal((200, 8))
    test = rng.normal((200, 8))
    test[:20] = 0.0
    test[:20, 0] = 8.0
    return ref, test


class TestRunFactorial:
    def test_identity_adapter(self, planted_pair):
        ref, test = planted_pair
        result = run_factorial(ref, test, ResidualAdapter.initialise(8, Rng(0)))
        assert result.a_raw == result.c_raw
        assert result.b_raw == result.d_raw
        assert result.delta_cost == 0.0
        assert result.delta_syn == 0.0
        assert result.delta_meas == 0.0

    def test_reference_equals_test(self, planted_pair):
        ref, _ = planted_pair
        result = run_factorial(ref, ref.copy(), _artifact_adapter())
        assert (result.a_n, result.b_n, result.c_n, result.d_n) == (0.0, 0.0, 0.0, 0.0)
        assert (result.delta_cost, result.delta_meas, result.delta_syn) == (0.0, 0.0, 0.0)

    def test_artifact_adapter_makes_cost_dominate_measure(self, planted_pair):
        ref, test = planted_pair
        result = run_factorial(ref, test, _artifact_adapter())
        assert result.c_raw > result.a_raw
        assert result.d_raw > result.b_raw
        assert result.c_n == result.d_n == 1.0
        assert abs(result.delta_cost) > abs(result.delta_meas)

    def test_dimension_mismatch(self, planted_pair):
        ref, test = planted_pair
        with pytest.raises(DimensionMismatch):
            run_factorial(ref, test, ResidualAdapter.initialise(16, Rng(0)))

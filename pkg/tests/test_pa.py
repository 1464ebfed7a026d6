"""Memory-polynomial PA model tests."""

import numpy as np
import pytest

from palink.errors import MemoryNotSupported, ParseError
from palink.pa import (PaModel, bussgang_gain_gaussian, default_pa_model,
                       load_pa_coeffs, pa_apply, pa_bank_apply,
                       save_pa_coeffs)


def linear_model(gain=1.0) -> PaModel:
    return PaModel(coeffs=np.array([[gain]]), p1db_in=1.0)


def cubic_model(a3=-0.1) -> PaModel:
    return PaModel(coeffs=np.array([[1.0, a3]]), p1db_in=1.0)


def naive_mp(coeffs, x, circular=False):
    """Direct double-loop evaluation of the memory polynomial."""
    pi = (coeffs.shape[0] + 1) // 2
    n = len(x)
    y = np.zeros(n, dtype=complex)
    for i in range(n):
        for row, w in enumerate(range(-pi + 1, pi)):
            j = i - w
            if circular:
                j %= n
            elif not (0 <= j < n):
                continue
            for v in range(coeffs.shape[1]):
                y[i] += coeffs[row, v] * x[j] * abs(x[j]) ** (2 * v)
    return y


class TestPaApply:
    def test_linear(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        np.testing.assert_allclose(pa_apply(linear_model(2.5), x), 2.5 * x)

    def test_memoryless_cubic_point(self):
        y = pa_apply(cubic_model(), np.array([1.0 + 0j]))
        assert y[0] == pytest.approx(0.9)

    @pytest.mark.parametrize("circular", [False, True])
    def test_matches_double_loop_oracle(self, circular):
        rng = np.random.default_rng(1)
        coeffs = (rng.standard_normal((3, 2))
                  + 1j * rng.standard_normal((3, 2)))
        model = PaModel(coeffs=coeffs, p1db_in=1.0)
        x = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        np.testing.assert_allclose(pa_apply(model, x, circular=circular),
                                   naive_mp(coeffs, x, circular=circular),
                                   atol=1e-12)

    def test_time_invariance_interior(self):
        rng = np.random.default_rng(2)
        coeffs = rng.standard_normal((5, 3)) * 0.1 + 0j
        coeffs[2, 0] = 1.0
        model = PaModel(coeffs=coeffs, p1db_in=1.0)
        x = rng.standard_normal(100) + 1j * rng.standard_normal(100)
        shifted = np.concatenate([np.zeros(5), x])
        y = pa_apply(model, x)
        y_shift = pa_apply(model, shifted)
        np.testing.assert_allclose(y_shift[5 + 4:-4], y[4:-4], atol=1e-12)

    def test_phase_rotation_covariance(self):
        model = default_pa_model()
        rng = np.random.default_rng(3)
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        for phi in (0.3, 1.2, -2.0):
            np.testing.assert_allclose(
                pa_apply(model, np.exp(1j * phi) * x),
                np.exp(1j * phi) * pa_apply(model, x), atol=1e-12)


class TestBank:
    def test_rowwise(self):
        model = default_pa_model()
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 32)) + 1j * rng.standard_normal((3, 32))
        y = pa_bank_apply(model, x)
        for i in range(3):
            np.testing.assert_allclose(y[i], pa_apply(model, x[i]))

    def test_linear_bank(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 16)) + 0j
        np.testing.assert_allclose(pa_bank_apply(linear_model(3.0), x), 3 * x)

    def test_zero_input(self):
        y = pa_bank_apply(default_pa_model(), np.zeros((2, 8), dtype=complex))
        assert np.all(y == 0)


class TestBussgangGainGaussian:
    def test_linear(self):
        assert bussgang_gain_gaussian(linear_model(1.7), 0.4) == pytest.approx(
            1.7)

    def test_cubic_unit_power(self):
        assert bussgang_gain_gaussian(cubic_model(-0.1), 1.0) == pytest.approx(
            0.8)

    def test_fifth_order_against_monte_carlo(self):
        coeffs = np.array([[1.0, -0.12 + 0.03j, 0.015 - 0.01j]])
        model = PaModel(coeffs=coeffs, p1db_in=1.0)
        sigma2 = 0.5
        rng = np.random.default_rng(6)
        x = np.sqrt(sigma2 / 2) * (rng.standard_normal(10**6)
                                   + 1j * rng.standard_normal(10**6))
        y = pa_apply(model, x)
        mc_gain = np.vdot(x, y) / np.vdot(x, x)
        closed = bussgang_gain_gaussian(model, sigma2)
        assert abs(mc_gain - closed) / abs(closed) < 0.005

    def test_memory_not_supported(self):
        with pytest.raises(MemoryNotSupported):
            bussgang_gain_gaussian(default_pa_model(), 0.3)


class TestCoefficientFile:
    def test_round_trip(self, tmp_path):
        model = default_pa_model()
        path = tmp_path / "pa.txt"
        save_pa_coeffs(model, path)
        loaded = load_pa_coeffs(path)
        np.testing.assert_array_equal(loaded.coeffs, model.coeffs)
        assert loaded.p1db_in == model.p1db_in

    def test_malformed(self, tmp_path):
        path = tmp_path / "pa.txt"
        path.write_text("version 1\npi 2\nupsilon 1\np1db_in 1.0\ntap 5 0 1 0\n")
        with pytest.raises(ParseError):
            load_pa_coeffs(path)

    def test_default_model_shape(self):
        model = default_pa_model()
        assert model.memory_span == 2
        assert model.n_orders == 4
        assert model.small_signal_gain != 0
        assert model.p1db_in > 0

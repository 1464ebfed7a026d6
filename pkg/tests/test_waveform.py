"""QAM and OFDM waveform tests."""

import numpy as np
import pytest

from palink.errors import LengthError
from palink.waveform import (WaveformConfig, ofdm_demodulate, ofdm_modulate,
                             ofdm_spectrum, qam_constellation, qam_demap_hard,
                             qam_map)

CFG = WaveformConfig(n_active=64, fft_size=256, cp_len=4, mod_order=16)


class TestQam:
    def test_qpsk_points(self):
        pts = qam_constellation(4)
        expected = {(1 + 1j), (1 - 1j), (-1 + 1j), (-1 - 1j)}
        assert set(np.round(pts * np.sqrt(2), 9)) == expected

    @pytest.mark.parametrize("m", [4, 16, 64, 256])
    def test_round_trip(self, m):
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, size=600 * int(np.log2(m)))
        np.testing.assert_array_equal(qam_demap_hard(qam_map(bits, m), m), bits)

    @pytest.mark.parametrize("m", [4, 16, 64, 256])
    def test_unit_energy(self, m):
        pts = qam_constellation(m)
        assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_gray_neighbours_differ_in_one_bit(self):
        # sweep every point of 16-QAM and its axis neighbours
        pts = qam_constellation(16)
        for i in range(16):
            for j in range(16):
                d = abs(pts[i] - pts[j])
                if 0 < d < 1.01 * np.sqrt(2 / 5):  # one grid step
                    assert bin(i ^ j).count("1") == 1

    def test_demap_within_half_min_distance(self):
        m = 256
        pts = qam_constellation(m)
        dmin = np.sqrt(2 * (m - 1) / 3) ** -1 * 2  # grid step after scaling
        rng = np.random.default_rng(1)
        for idx in range(m):
            for _ in range(4):
                phase = rng.uniform(0, 2 * np.pi)
                perturbed = pts[idx] + 0.49 * dmin * np.exp(1j * phase)
                bits = qam_demap_hard(np.array([perturbed]), m)
                val = int("".join(map(str, bits)), 2)
                assert val == idx

    def test_length_error(self):
        with pytest.raises(LengthError):
            qam_map(np.zeros(5, dtype=int), 16)


class TestOfdm:
    def test_single_tone_magnitude(self):
        vals = np.zeros(CFG.n_active, dtype=complex)
        vals[3] = 1.0
        x = ofdm_modulate(vals, CFG)
        np.testing.assert_allclose(np.abs(x), 1 / np.sqrt(CFG.n_active),
                                   atol=1e-12)

    def test_all_zero(self):
        x = ofdm_modulate(np.zeros(CFG.n_active), CFG)
        assert np.all(x == 0)

    @pytest.mark.parametrize("m", [4, 64])
    def test_round_trip(self, m):
        rng = np.random.default_rng(2)
        bits = rng.integers(0, 2, CFG.n_active * int(np.log2(m)))
        vals = qam_map(bits, m)
        for with_cp in (False, True):
            x = ofdm_modulate(vals, CFG, with_cp=with_cp)
            np.testing.assert_allclose(ofdm_demodulate(x, CFG), vals,
                                       atol=1e-10)

    def test_cp_is_cyclic(self):
        rng = np.random.default_rng(3)
        vals = rng.standard_normal(CFG.n_active) * 1j
        x = ofdm_modulate(vals, CFG, with_cp=True)
        np.testing.assert_allclose(x[:CFG.cp_samples], x[-CFG.cp_samples:],
                                   atol=1e-12)

    def test_spectrum_preserves_noise_variance(self):
        rng = np.random.default_rng(4)
        sigma2 = 0.7
        n_frames = 40  # 40 * 256 bins > 1e4
        x = np.sqrt(sigma2 / 2) * (
            rng.standard_normal((n_frames, CFG.fft_size))
            + 1j * rng.standard_normal((n_frames, CFG.fft_size)))
        spec = ofdm_spectrum(x, CFG)
        assert np.mean(np.abs(spec) ** 2) == pytest.approx(sigma2, rel=0.03)

    def test_spectrum_impulse_flat(self):
        x = np.zeros(CFG.fft_size, dtype=complex)
        x[0] = 1.0
        spec = ofdm_spectrum(x, CFG)
        np.testing.assert_allclose(spec, 1 / np.sqrt(CFG.fft_size), atol=1e-12)

    def test_time_shift_gives_linear_phase(self):
        rng = np.random.default_rng(5)
        vals = (rng.standard_normal(CFG.n_active)
                + 1j * rng.standard_normal(CFG.n_active))
        x = ofdm_modulate(vals, CFG)
        shift = 3
        rolled = np.roll(x, shift)
        base = ofdm_spectrum(x, CFG, active_only=True)
        moved = ofdm_spectrum(rolled, CFG, active_only=True)
        bins = CFG.active_bins()
        expected = base * np.exp(-2j * np.pi * bins * shift / CFG.fft_size)
        np.testing.assert_allclose(moved, expected, atol=1e-10)

    def test_wrong_length_raises(self):
        with pytest.raises(LengthError):
            ofdm_demodulate(np.zeros(CFG.fft_size + 1), CFG)

    def test_degenerate_no_oversampling_grid(self):
        cfg = WaveformConfig(n_active=8, fft_size=8, cp_len=0, mod_order=4)
        np.testing.assert_array_equal(cfg.active_bins(), np.arange(8))
        rng = np.random.default_rng(6)
        vals = rng.standard_normal(8) + 0j
        np.testing.assert_allclose(
            ofdm_demodulate(ofdm_modulate(vals, cfg), cfg), vals, atol=1e-12)

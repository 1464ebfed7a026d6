"""Performance measure tests: spectra, rate bound, SINR and BER."""

from dataclasses import replace

import numpy as np
import pytest

from palink.chain import build_link, run_frames, transmit
from palink.channel import build_ccm_set, sample_realization, steering
from palink.linearizer import posteq_estimate
from palink.metrics import (ber_awgn_bypass, ber_from_sinr, gmi, gmi_report,
                            psd_at_angle, qfunc, radiation_patterns,
                            sinr_analytical, wilson_interval,
                            _estimate_chain_bussgang)
from palink.pa import default_pa_model
from palink.rng import substream
from palink.scenario import Architecture, desk_preset
from palink.waveform import WaveformConfig, ofdm_modulate, qam_map

# frozen oracle: QPSK constrained AWGN capacity at Es/N0 = 0 dB computed by
# 2-D Gauss-Hermite quadrature (80 nodes per axis)
QPSK_CAPACITY_0DB = 0.9718883082667036


def gauss_hermite_qpsk_capacity(snr_db: float, order: int = 80) -> float:
    """Independent quadrature oracle for the 4-QAM AWGN rate bound."""
    from numpy.polynomial.hermite import hermgauss
    const = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    sigma2 = 10 ** (-snr_db / 10)
    nodes, weights = hermgauss(order)
    s = np.sqrt(sigma2)
    total = 0.0
    for d in const:
        for i, a in enumerate(nodes):
            r = d + s * (a + 1j * nodes)
            e = np.exp(-(np.abs(r[:, None] - const[None, :]) ** 2) / sigma2)
            ratio = np.log2(e.sum(axis=1)) \
                + (np.abs(r - d) ** 2) / sigma2 / np.log(2)
            total += weights[i] * (weights * ratio).sum()
    return float(2.0 - total / (np.pi * 4))


class TestPsd:
    CFG = WaveformConfig(n_active=32, fft_size=256, cp_len=4, mod_order=4)

    def test_single_tone_peak(self):
        vals = np.zeros(self.CFG.n_active, dtype=complex)
        vals[5] = 1.0
        x = ofdm_modulate(vals, self.CFG)
        y = np.broadcast_to(x, (1, 4, 256)).copy()
        psd = psd_at_angle(y, 0.0, 256)
        k0 = self.CFG.active_bins()[5]
        peak = psd[k0]
        far = np.delete(psd, k0)
        assert peak > 1e4 * (far.max() + 1e-30)

    def test_white_input_flat(self):
        rng = np.random.default_rng(0)
        y = (rng.standard_normal((2000, 1, 256))
             + 1j * rng.standard_normal((2000, 1, 256)))
        psd = psd_at_angle(y, 0.0, 256)
        db = 10 * np.log10(psd)
        assert db.max() - db.min() < 1.0


class TestRadiationPatterns:
    def test_linear_beam_points_at_users(self):
        sc = desk_preset()
        stats = build_ccm_set(sc)
        real = sample_realization(stats, sc, substream(sc.seed, "c", 0))
        link = build_link(sc, stats, None, real, n0=0.0, pa=None)
        frames = transmit(link, substream(sc.seed, "t"), 8)
        wf = sc.waveform
        rep = radiation_patterns(frames.y, wf.fft_size, wf.oversampling)
        # maximum in-band power is exactly 0 dB
        assert rep.p_ib_db.max() == pytest.approx(0.0, abs=1e-12)
        # the peak lies inside one of the group sectors
        peak_angle = rep.angles_deg[np.argmax(rep.p_ib_db)]
        sectors = [(-28, -11), (21, 27)]
        assert any(lo - 1 <= peak_angle <= hi + 1 for lo, hi in sectors)

    def test_band_split_conserves_power(self):
        sc = desk_preset()
        stats = build_ccm_set(sc)
        real = sample_realization(stats, sc, substream(sc.seed, "c", 0))
        link = build_link(sc, stats, None, real, n0=0.0, pa=default_pa_model())
        frames = transmit(link, substream(sc.seed, "t"), 4)
        wf = sc.waveform
        rep = radiation_patterns(frames.y, wf.fft_size, wf.oversampling,
                                 angles_deg=np.array([-26.5, 0.0, 25.5]))
        spec = np.fft.fft(frames.y, axis=-1) / np.sqrt(wf.fft_size)
        from palink.metrics import _band_masks
        ib, lower, upper = _band_masks(wf.fft_size, wf.oversampling)
        for i, angle in enumerate(rep.angles_deg):
            a = steering(np.deg2rad(angle), frames.y.shape[1])
            proj = np.mean(np.abs(np.einsum(
                "n,fnk->fk", a.conj(), spec)) ** 2, axis=0)
            total = proj.sum()
            both_oob = proj[lower].sum() + proj[upper].sum()
            assert rep.p_ib[i] + both_oob <= total * (1 + 1e-6)
            assert rep.p_ib[i] == pytest.approx(proj[ib].sum(), rel=1e-9)
            assert rep.p_ob[i] == pytest.approx(
                max(proj[lower].sum(), proj[upper].sum()), rel=1e-9)

    def test_nonlinear_pa_raises_oob(self):
        sc = desk_preset()
        stats = build_ccm_set(sc)
        real = sample_realization(stats, sc, substream(sc.seed, "c", 0))
        wf = sc.waveform
        angles = np.array([-26.5])
        out = {}
        for tag, pa in (("lin", None), ("pa", default_pa_model())):
            link = build_link(sc, stats, None, real, n0=0.0, pa=pa)
            frames = transmit(link, substream(sc.seed, "t"), 6)
            rep = radiation_patterns(frames.y, wf.fft_size, wf.oversampling,
                                     angles_deg=angles)
            out[tag] = rep.p_ob_db[0]
        assert out["pa"] - out["lin"] >= 15.0


class TestGmi:
    def test_matches_quadrature_oracle_qpsk_0db(self):
        assert gauss_hermite_qpsk_capacity(0.0) == pytest.approx(
            QPSK_CAPACITY_0DB, abs=1e-9)
        rng = np.random.default_rng(1)
        n = 200_000
        bits = rng.integers(0, 2, 2 * n)
        d = qam_map(bits, 4)
        r = d + (rng.standard_normal(n) + 1j * rng.standard_normal(n)) \
            / np.sqrt(2)
        est = gmi(r, d, 1.0, 1.0, 4)
        assert est == pytest.approx(QPSK_CAPACITY_0DB, abs=0.02)

    def test_perfect_channel_approaches_cap(self):
        rng = np.random.default_rng(2)
        bits = rng.integers(0, 2, 4 * 1000)
        d = qam_map(bits, 16)
        assert gmi(d, d, 1.0, 1e-8, 16) >= np.log2(16) - 0.01

    @pytest.mark.parametrize("m", [4, 64])
    def test_never_exceeds_cap(self, m):
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, int(np.log2(m)) * 2000)
        d = qam_map(bits, m)
        r = 0.3 * d + 0.5 * (rng.standard_normal(d.size)
                             + 1j * rng.standard_normal(d.size))
        for sigma2 in (1e-6, 0.1, 10.0):
            assert gmi(r, d, 0.3, sigma2, m) <= np.log2(m) + 1e-9

    def test_report_posteq_vs_single_alpha(self):
        # per-bin coefficients must win when the response varies across bins
        rng = np.random.default_rng(4)
        f, k, u = 40, 16, 1
        d = (rng.standard_normal((f, k, u))
             + 1j * rng.standard_normal((f, k, u))) / np.sqrt(2)
        phase = np.exp(1j * np.linspace(0, 2.4, k))[None, :, None]
        r = phase * d + 0.05 * (rng.standard_normal(d.shape)
                                + 1j * rng.standard_normal(d.shape))
        assert gmi_report(r, d, "posteq", 4) > gmi_report(r, d, "none", 4)


class TestSinrAndBer:
    def test_single_user_flat_linear_matches_direct_snr(self):
        # scalar reference: one user, one antenna, flat channel, exact ZF
        from palink.scenario import (ArrayConfig, GroupConfig, MpcConfig,
                                     Scenario)
        from palink.waveform import WaveformConfig
        sc = Scenario(
            array=ArrayConfig(1, 1, Architecture.FULLY_DIGITAL),
            groups=(GroupConfig(rf_chains=1, mpcs=(
                (MpcConfig(0.0, 2.0, 1.0, rician_factor=10.0),),)),),
            victims=(),
            waveform=WaveformConfig(32, 128, 4, 4),
            snr_grid_db=(20.0,),
            seed=5,
            zf_delta=0.0,
        ).validate()
        stats = build_ccm_set(sc)
        real = sample_realization(stats, sc, substream(sc.seed, "c", 0))
        n0 = 1e-2
        link = build_link(sc, stats, None, real, n0=n0, pa=None)
        model = _estimate_chain_bussgang(link, 100, substream(sc.seed, "b"))
        sinr = sinr_analytical(link, model)
        # closed form: SINR = mu c |gain|^2 / N_o with ZF gain one
        mu = sc.waveform.oversampling
        np.testing.assert_allclose(sinr, mu * link.precoder.c[0] / n0,
                                   rtol=1e-6)
        frames, r = run_frames(link, substream(sc.seed, "m"),
                               substream(sc.seed, "mn"), 100)
        alpha = posteq_estimate(r, frames.d)
        err = r - alpha[None] * frames.d
        measured = np.abs(alpha) ** 2 / np.mean(np.abs(err) ** 2, axis=0)
        assert np.mean(sinr) == pytest.approx(np.mean(measured), rel=0.03)

    def test_noise_dominated_limit_monotone(self):
        sc = desk_preset()
        stats = build_ccm_set(sc)
        real = sample_realization(stats, sc, substream(sc.seed, "c", 0))
        means = []
        for n0 in (1e-3, 1e-1, 1e3):
            link = build_link(sc, stats, None, real, n0=n0, pa=None)
            model = _estimate_chain_bussgang(link, 20,
                                             substream(sc.seed, "b", n0))
            means.append(np.mean(sinr_analytical(link, model)))
        assert means[0] > means[1] > means[2]
        assert means[2] < 0.1

    def test_ideal_separation_interference_free(self):
        sc = replace(desk_preset(Architecture.FULLY_DIGITAL), zf_delta=0.0)
        stats = build_ccm_set(sc)
        real = sample_realization(stats, sc, substream(sc.seed, "c", 0))
        link = build_link(sc, stats, None, real, n0=1e-3, pa=None)
        model = _estimate_chain_bussgang(link, 30, substream(sc.seed, "b"))
        sinr = sinr_analytical(link, model)
        # exact ZF: residual interference negligible, SINR ~ signal/noise
        mu = sc.waveform.oversampling
        expected = mu * link.precoder.c[0] / link.n0
        np.testing.assert_allclose(sinr, expected, rtol=0.05)

    def test_ber_formula_qpsk_reduction(self):
        s = 4.0
        assert ber_from_sinr(np.array([s]), 4) == pytest.approx(
            float(qfunc(np.sqrt(s))))

    def test_ber_formula_16qam_consistency(self):
        sinr = 10.0 ** (10 / 10)
        expect = (4 / 4) * (1 - 0.25) * qfunc(np.sqrt(3 * sinr / 15))
        assert ber_from_sinr(np.array([sinr]), 16) == pytest.approx(
            float(expect))


class TestWilson:
    def test_zero_errors(self):
        lo, hi = wilson_interval(0, 1000)
        assert lo == pytest.approx(0.0, abs=1e-12)
        assert 0 < hi < 0.01

    def test_contains_proportion(self):
        lo, hi = wilson_interval(50, 1000)
        assert lo < 0.05 < hi

    def test_no_trials(self):
        assert wilson_interval(0, 0) == (0.0, 1.0)


class TestAwgnBypass:
    @pytest.mark.parametrize("snr_db", [0.0, 4.0, 8.0])
    def test_qpsk_matches_closed_form(self, snr_db):
        snr = 10 ** (snr_db / 10)
        expected = float(qfunc(np.sqrt(snr)))  # = Q(sqrt(2 Eb/N0))
        pt = ber_awgn_bypass(snr_db, 4, substream(11, "awgn", snr_db),
                             target_errors=400)
        assert pt.ci_lo <= expected <= pt.ci_hi

    def test_deterministic(self):
        p1 = ber_awgn_bypass(4.0, 4, substream(3, "x"), target_errors=100)
        p2 = ber_awgn_bypass(4.0, 4, substream(3, "x"), target_errors=100)
        assert p1.n_errors == p2.n_errors and p1.n_bits == p2.n_bits


class TestFrameCap:
    def test_low_confidence_flag_when_capped(self):
        from palink.chain import build_link
        from palink.channel import build_ccm_set, sample_realization
        from palink.metrics import ber_monte_carlo
        sc = desk_preset()
        stats = build_ccm_set(sc)
        real = sample_realization(stats, sc, substream(sc.seed, "c", 0))
        link = build_link(sc, stats, None, real, n0=1e-6, pa=None)
        pt = ber_monte_carlo(link, "posteq", substream(sc.seed, "m"),
                             substream(sc.seed, "n"), target_errors=200,
                             max_frames=2)
        assert pt.low_confidence
        assert pt.n_bits > 0

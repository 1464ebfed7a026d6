"""Performance measures: PSD and radiation patterns, GMI, SINR and BER.

All spectral quantities come from frame-aligned averaged periodograms
(rectangular window, one OFDM block per segment, cyclic prefix excluded),
so in-band and adjacent-band integrals reduce to exact bin sums.  The
achievable-rate bound and the analytical error rate both build on the
per-subcarrier linearization model from :mod:`palink.bussgang`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .bussgang import BussgangModel, estimate_bussgang
from .chain import (Link, build_link, conditional_realization, draw_noise,
                    run_frames, transmit)
from .channel import CcmSet, steering
from .errors import DegenerateVariance
from .linearizer import posteq_apply, posteq_estimate
from .rng import substream
from .scenario import Scenario
from .waveform import (ofdm_spectrum, qam_constellation, qam_demap_hard)

__all__ = [
    "psd_at_angle",
    "RadiationReport",
    "radiation_patterns",
    "gmi",
    "gmi_report",
    "sinr_analytical",
    "ber_analytical",
    "ber_monte_carlo",
    "wilson_interval",
    "qfunc",
    "PSD_FLOOR",
]

# floor for log plots: a linear chain radiates exactly nothing out of band
PSD_FLOOR = 1e-30


def qfunc(x: np.ndarray) -> np.ndarray:
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x) / np.sqrt(2.0))


def _mean_periodograms(y: np.ndarray, fft_size: int) -> np.ndarray:
    """Average per-frame periodograms; y is (F, N_t, T)."""
    spec = np.fft.fft(y, axis=-1) / np.sqrt(fft_size)
    return np.mean(np.abs(spec) ** 2, axis=0)


def psd_at_angle(y: np.ndarray, angle: float, fft_size: int) -> np.ndarray:
    """Averaged periodogram of the far-field signal toward ``angle`` (rad).

    ``y`` is an (F, N_t, T) transmit ensemble; the channel toward a probe
    direction is approximated by the steering vector.  Returns the PSD on
    the fft grid (bin k is frequency k/fft_size).
    """
    a = steering(angle, y.shape[1])
    r = np.einsum("n,fnt->ft", a.conj(), y)
    spec = np.fft.fft(r, axis=-1) / np.sqrt(fft_size)
    return np.mean(np.abs(spec) ** 2, axis=0)


@dataclass
class RadiationReport:
    """In-band and out-of-band angular power patterns, max in-band = 0 dB."""

    angles_deg: np.ndarray
    p_ib_db: np.ndarray
    p_ob_db: np.ndarray
    p_ib: np.ndarray = field(repr=False, default=None)
    p_ob: np.ndarray = field(repr=False, default=None)


def _band_masks(fft_size: int, mu: float):
    """Bin index sets for the in-band and the two adjacent bands.

    The normalized signal bandwidth is 1/mu of the sampling rate, so the
    in-band region is |f| <= 1/(2 mu) and the adjacent bands extend to
    3/(2 mu) on either side.
    """
    f = np.fft.fftfreq(fft_size)
    half = 0.5 / mu
    ib = np.abs(f) <= half
    upper = (f > half) & (f <= 3 * half)
    lower = (f < -half) & (f >= -3 * half)
    return ib, lower, upper


def radiation_patterns(y: np.ndarray, fft_size: int, mu: float,
                       angles_deg: np.ndarray | None = None) -> RadiationReport:
    """Angular sweep of in-band and out-of-band radiated power.

    The out-of-band value is the larger of the two adjacent-band integrals.
    Both patterns are normalized so the in-band maximum sits at 0 dB.
    """
    if angles_deg is None:
        angles_deg = np.arange(-50.0, 50.0 + 1e-9, 0.5)
    angles_deg = np.asarray(angles_deg)
    n_t = y.shape[1]
    grid = np.stack([steering(a, n_t)
                     for a in np.deg2rad(angles_deg)])        # (A, N_t)
    spec = np.fft.fft(y, axis=-1) / np.sqrt(fft_size)          # (F, N_t, T)
    proj = np.einsum("an,fnk->afk", grid.conj(), spec)
    power = np.mean(np.abs(proj) ** 2, axis=1)                 # (A, K_bins)
    ib, lower, upper = _band_masks(fft_size, mu)
    p_ib = power[:, ib].sum(axis=1)
    p_ob = np.maximum(power[:, lower].sum(axis=1),
                      power[:, upper].sum(axis=1))
    ref = np.max(p_ib)
    return RadiationReport(
        angles_deg=angles_deg,
        p_ib_db=10 * np.log10(np.maximum(p_ib / ref, PSD_FLOOR)),
        p_ob_db=10 * np.log10(np.maximum(p_ob / ref, PSD_FLOOR)),
        p_ib=p_ib,
        p_ob=p_ob,
    )


# ---------------------------------------------------------------------------
# GMI
# ---------------------------------------------------------------------------

def gmi(r: np.ndarray, d: np.ndarray, alpha: np.ndarray, sigma2: np.ndarray,
        mod_order: int) -> float:
    """Mismatched-decoding rate bound in bits per symbol.

    ``r`` and ``d`` are matched ensembles (any shape); ``alpha`` and
    ``sigma2`` broadcast against them (per-bin coefficients for the
    post-equalized receiver, a single scalar otherwise).  The penalty term
    is always nonnegative, so the value never exceeds log2(M).
    """
    const = qam_constellation(mod_order)
    r = np.asarray(r)
    d = np.asarray(d)
    alpha_full = np.broadcast_to(alpha, r.shape).reshape(-1)
    sig_full = np.broadcast_to(sigma2, r.shape).reshape(-1)
    r = r.reshape(-1)
    d = d.reshape(-1)
    if np.any(sig_full <= 0):
        mismatch = np.abs(r - alpha_full * d)
        if np.any(mismatch > 1e-9 * np.abs(r)):
            raise DegenerateVariance(
                "zero distortion variance with residual mismatch present"
            )
        return float(np.log2(mod_order))
    # log2( sum_d' exp(-|r - a d'|^2 / s2) ) + |r - a d|^2 / s2 * log2(e)
    diff = (r[:, None] - alpha_full[:, None] * const[None, :])
    expo = -np.abs(diff) ** 2 / sig_full[:, None]
    peak = np.max(expo, axis=1, keepdims=True)
    lse = (np.log(np.sum(np.exp(expo - peak), axis=1))
           + peak[:, 0]) / np.log(2.0)
    own = -np.abs(r - alpha_full * d) ** 2 / sig_full / np.log(2.0)
    penalty = np.mean(lse - own)
    return float(np.log2(mod_order) - penalty)


def gmi_report(r: np.ndarray, d: np.ndarray, mode: str,
               mod_order: int) -> float:
    """Estimate the rate bound from a received ensemble (F, K, U).

    ``mode`` selects the receiver model: per-subcarrier Wiener
    coefficients and variances for ``posteq``, a single complex
    amplitude/phase correction (with per-subcarrier variances) for
    ``none`` and ``dpd``.
    """
    r = np.asarray(r)
    d = np.asarray(d)
    if mode == "posteq":
        alpha = np.sum(r * d.conj(), axis=0) / np.sum(np.abs(d) ** 2, axis=0)
        alpha = alpha[None]
    else:
        # one amplitude/phase correction per user terminal
        alpha = np.sum(r * d.conj(), axis=(0, 1)) \
            / np.sum(np.abs(d) ** 2, axis=(0, 1))
        alpha = np.broadcast_to(alpha, r.shape[1:])[None]
    sigma2 = np.mean(np.abs(r - alpha * d) ** 2, axis=0, keepdims=True)
    sigma2 = np.maximum(sigma2, 1e-300)
    values = [
        gmi(r[..., u], d[..., u],
            np.broadcast_to(alpha[..., u], r[..., u].shape),
            np.broadcast_to(sigma2[..., u], r[..., u].shape), mod_order)
        for u in range(r.shape[2])
    ]
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# analytical SINR / BER
# ---------------------------------------------------------------------------

def sinr_analytical(link: Link, model: BussgangModel) -> np.ndarray:
    """Per-user per-bin SINR of the linearized receive model, shape (K, U).

    Terms per user (g, u): desired power |omega^H A_g w_u|^2 c_g mu,
    intra-group and inter-group interference through the same linearized
    map, the distortion quadratic form, and the noise floor.
    """
    mu = link.scenario.waveform.oversampling
    n_users = link.n_users
    n_bins = link.omega[0].shape[0]
    out = np.empty((n_bins, n_users))
    col = 0
    for g, om in enumerate(link.omega):
        a_g = model.group_matrix(link.beamformer.group_cols[g])
        w_g = link.precoder.w[g]
        c_g = link.precoder.c[g]
        for u in range(om.shape[2]):
            omega_u = om[:, :, u]
            # response of user (g,u) to every stream of every group
            desired = np.einsum("kn,knd,kdu->ku", omega_u.conj(), a_g, w_g)
            p_own = mu * c_g * np.abs(desired[:, u]) ** 2
            p_intra = mu * c_g * (np.sum(np.abs(desired) ** 2, axis=1)
                                  - np.abs(desired[:, u]) ** 2)
            p_inter = np.zeros(n_bins)
            for gp, om_p in enumerate(link.omega):
                if gp == g:
                    continue
                a_p = model.group_matrix(link.beamformer.group_cols[gp])
                cross = np.einsum("kn,knd,kdu->ku", omega_u.conj(), a_p,
                                  link.precoder.w[gp])
                p_inter += mu * link.precoder.c[gp] * np.sum(
                    np.abs(cross) ** 2, axis=1)
            p_eta = model.eta_quadform(omega_u)
            out[:, col] = p_own / (p_intra + p_inter + p_eta + link.n0)
            col += 1
    return out


def ber_from_sinr(sinr: np.ndarray, mod_order: int) -> float:
    """Square-QAM nearest-neighbour bit error approximation, averaged."""
    m = mod_order
    coeff = (4.0 / np.log2(m)) * (1.0 - 1.0 / np.sqrt(m))
    return float(np.mean(coeff * qfunc(np.sqrt(3.0 * sinr / (m - 1)))))


@dataclass
class BerPoint:
    snr_db: float
    ber: float
    ci_lo: float = 0.0
    ci_hi: float = 0.0
    n_bits: int = 0
    n_errors: int = 0
    low_confidence: bool = False


def wilson_interval(errors: int, trials: int, z: float = 1.96):
    """Wilson 95% score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = errors / trials
    den = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / den
    half = z * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / den
    return max(center - half, 0.0), min(center + half, 1.0)


def ber_analytical(scenario: Scenario, stats: CcmSet, stats_sub,
                   realizations: list, n0: float, pa, dpd,
                   n_cond: int = 20, n_frames: int = 60,
                   beamformer=None) -> tuple[float, np.ndarray]:
    """Average the Q-function bound over channel draws and conditionals.

    For every outer realization and every user, ``n_cond`` conditional
    draws hold that user's channel fixed while the other users' channels
    (and hence the precoder and the linearization estimate) are redrawn;
    SINR numerator and denominator terms average over the conditional
    ensemble as in the conditional-expectation form of the error analysis.
    ``n_cond=1`` reuses the joint realization itself.
    """
    wf = scenario.waveform
    m = wf.mod_order
    coeff = (4.0 / np.log2(m)) * (1.0 - 1.0 / np.sqrt(m))
    q_acc = []
    for r_idx, base in enumerate(realizations):
        base_link = build_link(scenario, stats, stats_sub, base, n0, pa=pa,
                               beamformer=beamformer)
        users = base_link.user_groups
        for target_idx, (g, u) in enumerate(users):
            nums = None
            dens = None
            for j in range(n_cond):
                if j == 0:
                    link = base_link
                else:
                    real = conditional_realization(scenario, stats, base,
                                                   (g, u), j)
                    link = build_link(scenario, stats, stats_sub, real, n0,
                                      pa=pa, beamformer=base_link.beamformer)
                if dpd is not None:
                    link = link.with_dpd(dpd)
                model = _estimate_chain_bussgang(
                    link, n_frames,
                    substream(scenario.seed, "bussgang", r_idx, target_idx, j))
                num, den = _sinr_terms_user(link, model, g, u)
                nums = num if nums is None else nums + num
                dens = den if dens is None else dens + den
            sinr = nums / dens
            q_acc.append(coeff * qfunc(np.sqrt(3.0 * sinr / (m - 1))))
    per_bin = np.mean(np.stack(q_acc), axis=0)
    return float(np.mean(per_bin)), per_bin


def _sinr_terms_user(link: Link, model: BussgangModel, g: int, u: int):
    """Numerator and denominator of one user's per-bin SINR."""
    mu = link.scenario.waveform.oversampling
    om = link.omega[g]
    omega_u = om[:, :, u]
    a_g = model.group_matrix(link.beamformer.group_cols[g])
    w_g = link.precoder.w[g]
    c_g = link.precoder.c[g]
    desired = np.einsum("kn,knd,kdu->ku", omega_u.conj(), a_g, w_g)
    num = mu * c_g * np.abs(desired[:, u]) ** 2
    den = mu * c_g * (np.sum(np.abs(desired) ** 2, axis=1)
                      - np.abs(desired[:, u]) ** 2)
    for gp in range(len(link.omega)):
        if gp == g:
            continue
        a_p = model.group_matrix(link.beamformer.group_cols[gp])
        cross = np.einsum("kn,knd,kdu->ku", omega_u.conj(), a_p,
                          link.precoder.w[gp])
        den = den + mu * link.precoder.c[gp] * np.sum(np.abs(cross) ** 2,
                                                      axis=1)
    den = den + model.eta_quadform(omega_u) + link.n0
    return num, den


def _estimate_chain_bussgang(link: Link, n_frames: int,
                             rng: np.random.Generator) -> BussgangModel:
    """Run frames through the live chain and fit the per-bin linear map."""
    wf = link.scenario.waveform
    frames = transmit(link, rng, n_frames)
    bins = wf.active_bins()
    x_f = ofdm_spectrum(frames.x, wf)[..., bins]
    y_f = ofdm_spectrum(frames.y, wf)[..., bins]
    return estimate_bussgang(x_f, y_f, link.beamformer.architecture)


def ber_monte_carlo(link: Link, mode: str, rng_data, rng_noise,
                    target_errors: int = 200, max_frames: int = 400,
                    pilot_frames: int = 4, batch: int = 8) -> BerPoint:
    """Count bit errors through the full chain until the target is reached.

    ``mode`` is one of none/posteq/dpd: the predistorter must already be
    attached to the link for ``dpd``; ``posteq`` estimates per-bin
    coefficients from pilot frames first, the other modes apply a single
    amplitude/phase correction estimated the same way.
    """
    wf = link.scenario.waveform
    snr_db = 10 * np.log10(link.scenario.es / link.n0) if link.n0 > 0 \
        else np.inf
    pilots, r_pilots = run_frames(link, rng_data, rng_noise, pilot_frames)
    if mode == "posteq":
        alpha = posteq_estimate(r_pilots, pilots.d)
    else:
        # one amplitude/phase correction per user terminal
        alpha = np.sum(r_pilots * pilots.d.conj(), axis=(0, 1)) \
            / np.sum(np.abs(pilots.d) ** 2, axis=(0, 1))
    n_err = 0
    n_bits = 0
    frames_done = 0
    while n_err < target_errors and frames_done < max_frames:
        n = min(batch, max_frames - frames_done)
        frames, r = run_frames(link, rng_data, rng_noise, n)
        est = posteq_apply(alpha, r)
        for f in range(n):
            for u in range(frames.bits.shape[1]):
                bits_hat = qam_demap_hard(est[f, :, u], wf.mod_order)
                n_err += int(np.sum(bits_hat != frames.bits[f, u]))
                n_bits += bits_hat.size
        frames_done += n
    ci_lo, ci_hi = wilson_interval(n_err, n_bits)
    return BerPoint(
        snr_db=float(snr_db),
        ber=n_err / n_bits if n_bits else 0.0,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        n_bits=n_bits,
        n_errors=n_err,
        low_confidence=n_err < target_errors,
    )


def ber_awgn_bypass(snr_db: float, mod_order: int, rng: np.random.Generator,
                    target_errors: int = 200,
                    max_symbols: int = 2_000_000) -> BerPoint:
    """Scalar AWGN reference: symbols plus noise at the given Es/N0.

    Bypasses beamforming, channel, and PA entirely; used to validate the
    bit counting and interval machinery against the closed form.
    """
    snr = 10.0 ** (snr_db / 10.0)
    sigma = np.sqrt(1.0 / snr)
    bps = int(np.log2(mod_order))
    n_err = 0
    n_bits = 0
    done = 0
    from .waveform import qam_map
    while n_err < target_errors and done < max_symbols:
        n = min(20000, max_symbols - done)
        bits = rng.integers(0, 2, size=n * bps, dtype=np.int8)
        d = qam_map(bits, mod_order)
        r = d + sigma * draw_noise(rng, n)
        bits_hat = qam_demap_hard(r, mod_order)
        n_err += int(np.sum(bits_hat != bits))
        n_bits += bits.size
        done += n
    ci_lo, ci_hi = wilson_interval(n_err, n_bits)
    return BerPoint(snr_db=snr_db, ber=n_err / n_bits, ci_lo=ci_lo,
                    ci_hi=ci_hi, n_bits=n_bits, n_errors=n_err,
                    low_confidence=n_err < target_errors)

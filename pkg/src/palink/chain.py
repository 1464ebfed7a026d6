"""End-to-end downlink frame simulation for one channel realization.

A :class:`Link` bundles everything needed to push OFDM frames through the
transmit chain: precode, optional predistortion, analog beamforming,
nonlinear amplification (processed circularly per frame, which equals the
cyclic-prefix discard pipeline), and per-bin reception at the users.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .beamformer import (AnalogBeamformer, DigitalPrecoder,
                         build_analog_beamformer, zf_precoder)
from .channel import CcmSet, ChannelRealization, frequency_response, sample_realization
from .pa import PaModel, drive_for_backoff, pa_bank_apply
from .rng import substream
from .scenario import Scenario
from .waveform import ofdm_modulate, ofdm_spectrum, qam_map

__all__ = ["Link", "build_link", "Frames", "run_frames", "draw_noise",
           "rx_symbols", "conditional_realization"]


@dataclass
class Link:
    scenario: Scenario
    realization: ChannelRealization
    omega: list[np.ndarray]
    beamformer: AnalogBeamformer
    precoder: DigitalPrecoder
    n0: float
    pa: PaModel | None = None
    drive: float = 1.0
    dpd: object | None = None  # DpdBank; duck-typed to avoid a module cycle

    @property
    def n_users(self) -> int:
        return sum(om.shape[2] for om in self.omega)

    @property
    def user_groups(self) -> list[tuple[int, int]]:
        """Global user index -> (group, user-in-group)."""
        out = []
        for g, om in enumerate(self.omega):
            out.extend((g, u) for u in range(om.shape[2]))
        return out

    def user_omega(self, g: int, u: int) -> np.ndarray:
        """Per-bin channel column of one user, shape (K, N_t)."""
        return self.omega[g][:, :, u]

    def with_dpd(self, bank) -> "Link":
        return replace(self, dpd=bank)


def build_link(scenario: Scenario, stats: CcmSet, stats_sub: CcmSet | None,
               realization: ChannelRealization, n0: float,
               pa: PaModel | None = None,
               beamformer: AnalogBeamformer | None = None) -> Link:
    """Assemble beamformer, per-bin channels, and ZF precoder for one draw."""
    wf = scenario.waveform
    if beamformer is None:
        beamformer = build_analog_beamformer(scenario, stats, stats_sub, n0)
    omega = frequency_response(realization, wf, bins=wf.active_bins())
    omega_eff = [
        np.einsum("nd,knu->kdu", beamformer.group_block(g).conj(), omega[g])
        for g in range(len(omega))
    ]
    precoder = zf_precoder(omega_eff, beamformer, scenario.es,
                           delta=scenario.zf_delta)
    drive = 1.0
    if pa is not None:
        # calibrate the shared drive on the hottest branch: eigen-blocks
        # concentrate power on some antennas and the mean would push those
        # PAs beyond the behavioral model's fitted range
        hot = float(np.max(per_antenna_powers(beamformer, precoder)))
        drive = drive_for_backoff(pa, hot, scenario.pa_backoff_db)
    return Link(scenario=scenario, realization=realization, omega=omega,
                beamformer=beamformer, precoder=precoder, n0=n0, pa=pa,
                drive=drive)


def per_antenna_powers(beamformer: AnalogBeamformer,
                       precoder: DigitalPrecoder) -> np.ndarray:
    """Average transmit power per antenna implied by the precoding stage."""
    p = np.zeros(beamformer.n_antennas)
    for g in range(len(precoder.w)):
        bw = np.einsum("nd,kdu->knu", beamformer.group_block(g),
                       precoder.w[g])
        p += precoder.c[g] * np.mean(np.sum(np.abs(bw) ** 2, axis=2), axis=0)
    return p


@dataclass
class Frames:
    """One batch of simulated frames.

    ``bits`` (F, U, K*bps) payload bits; ``d`` (F, K, U) symbols;
    ``x`` (F, D, T) digital time signal before DPD; ``y`` (F, N_t, T)
    amplified transmit signal.
    """

    bits: np.ndarray
    d: np.ndarray
    x: np.ndarray
    y: np.ndarray


def _precode_bins(link: Link, d: np.ndarray) -> np.ndarray:
    """Map symbols (F, K, U) to RF-chain bin values (F, D, K)."""
    parts = []
    u0 = 0
    for g, om in enumerate(link.omega):
        n_u = om.shape[2]
        wg = link.precoder.scaled(g)
        parts.append(np.einsum("kdu,fku->fdk", wg, d[:, :, u0:u0 + n_u]))
        u0 += n_u
    return np.concatenate(parts, axis=1)


def transmit(link: Link, rng: np.random.Generator, n_frames: int) -> Frames:
    """Draw payload and run it through the full transmit chain."""
    wf = link.scenario.waveform
    n_users = link.n_users
    bps = wf.bits_per_symbol
    bits = rng.integers(0, 2, size=(n_frames, n_users, wf.n_active * bps),
                        dtype=np.int8)
    d = np.empty((n_frames, wf.n_active, n_users), dtype=complex)
    for f in range(n_frames):
        for u in range(n_users):
            d[f, :, u] = qam_map(bits[f, u], wf.mod_order)
    u_bins = _precode_bins(link, d)
    x = ofdm_modulate(u_bins, wf)
    x_hat = x if link.dpd is None else link.dpd.apply(x)
    x_bar = np.einsum("nd,fdt->fnt", link.beamformer.matrix, x_hat)
    if link.pa is None:
        y = x_bar
    else:
        y = pa_bank_apply(link.pa, link.drive * x_bar, circular=True) / link.drive
    return Frames(bits=bits, d=d, x=x, y=y)


def draw_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular Gaussian array (scale by sqrt(N_o) at use)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        / np.sqrt(2.0)


def rx_symbols(link: Link, y: np.ndarray,
               noise: np.ndarray | None = None) -> np.ndarray:
    """Per-user received bin values r (F, K, U).

    Applies the per-bin channel to the unitary spectrum of the transmit
    block and adds the supplied (already scaled) noise array.
    """
    wf = link.scenario.waveform
    y_f = ofdm_spectrum(y, wf)[..., wf.active_bins()]
    parts = []
    for g, om in enumerate(link.omega):
        parts.append(np.einsum("knu,fnk->fku", om.conj(), y_f))
    r = np.concatenate(parts, axis=2)
    if noise is not None:
        r = r + noise
    return r


def run_frames(link: Link, rng_data: np.random.Generator,
               rng_noise: np.random.Generator | None,
               n_frames: int) -> tuple[Frames, np.ndarray]:
    """Transmit plus receive; returns the frames and r (F, K, U)."""
    frames = transmit(link, rng_data, n_frames)
    noise = None
    if rng_noise is not None and link.n0 > 0:
        wf = link.scenario.waveform
        noise = np.sqrt(link.n0) * draw_noise(
            rng_noise, (n_frames, wf.n_active, link.n_users))
    return frames, rx_symbols(link, frames.y, noise)


def conditional_realization(scenario: Scenario, stats: CcmSet,
                            base: ChannelRealization, target: tuple[int, int],
                            draw_index: int) -> ChannelRealization:
    """Redraw every user's channel except the target's, deterministically.

    Used for conditional averages: the target user (g, u) keeps its taps
    from ``base`` while everyone else gets fresh independent draws seeded
    by ``draw_index``.
    """
    rng = substream(scenario.seed, "conditional", target[0], target[1],
                    draw_index)
    fresh = sample_realization(stats, scenario, rng)
    g0, u0 = target
    fresh.taps[g0][u0] = base.taps[g0][u0]
    return fresh

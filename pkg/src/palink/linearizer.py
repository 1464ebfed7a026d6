"""Compensation of PA distortion: transmit-side DPD and receiver post-EQ.

The predistorter is one memory polynomial per RF chain, identified with an
indirect learning loop: the N_t-dimensional PA output is projected back to
the D RF-chain space through the per-group pseudo-inverses
(anti-beamforming), a postdistorter is fitted on the projected signal by
blockwise damped least squares, and its coefficients are copied into the
predistorter for the next block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import Link, _precode_bins
from .errors import DimensionMismatch, ZeroCoefficient, ZeroEnergy
from .pa import mp_apply, mp_regressors, pa_bank_apply
from .waveform import ofdm_modulate, qam_map

__all__ = [
    "DpdBank",
    "anti_beamform",
    "dpd_apply",
    "dpd_train",
    "posteq_estimate",
    "posteq_apply",
    "save_dpd_bank",
    "load_dpd_bank",
]

DPD_MEMORY_SPAN = 4
DPD_ORDERS = 4


@dataclass
class DpdBank:
    """Per-RF-chain predistorter coefficients plus adaptation state.

    ``coeffs`` has shape (D, 2*Pi' - 1, Upsilon'); ``output_scale`` holds
    the per-chain power renormalization applied after the polynomial so
    the precoder power constraint still holds downstream of the DPD.
    ``clip_factor`` bounds predistorted magnitudes at a multiple of their
    RMS; expansion of rare amplitude peaks would otherwise drive the
    polynomial PA model far outside its fitted range.
    """

    coeffs: np.ndarray
    output_scale: np.ndarray
    beta: float = 0.5
    block_len: int = 8192
    n_blocks: int = 10
    clip_factor: float = 4.0
    ill_conditioned: bool = False
    block_error: list = field(default_factory=list)

    @classmethod
    def identity(cls, n_chains: int, memory_span: int = DPD_MEMORY_SPAN,
                 n_orders: int = DPD_ORDERS, **kw) -> "DpdBank":
        coeffs = np.zeros((n_chains, 2 * memory_span - 1, n_orders),
                          dtype=complex)
        coeffs[:, memory_span - 1, 0] = 1.0
        return cls(coeffs=coeffs, output_scale=np.ones(n_chains), **kw)

    @property
    def n_chains(self) -> int:
        return self.coeffs.shape[0]

    @property
    def memory_span(self) -> int:
        return (self.coeffs.shape[1] + 1) // 2

    @property
    def n_orders(self) -> int:
        return self.coeffs.shape[2]

    def apply(self, x: np.ndarray, circular: bool = True) -> np.ndarray:
        return dpd_apply(self, x, circular=circular)


def _clip_peaks(out: np.ndarray, ref: np.ndarray, factor: float) -> np.ndarray:
    """Phase-preserving magnitude clip at ``factor`` times the RMS of ``ref``.

    The reference is the predistorter input: its RMS is bounded by the
    power constraint, whereas the polynomial output can contain extreme
    extrapolated samples that would inflate an output-referenced limit.
    """
    if factor <= 0:
        return out
    rms = np.sqrt(np.mean(np.abs(ref) ** 2, axis=-1, keepdims=True))
    limit = factor * np.maximum(rms, 1e-300)
    mag = np.abs(out)
    return np.where(mag > limit, out * (limit / np.maximum(mag, 1e-300)), out)


def dpd_apply(bank: DpdBank, x: np.ndarray, circular: bool = True) -> np.ndarray:
    """Predistort (..., D, T) per chain; frames processed circularly."""
    x = np.asarray(x, dtype=complex)
    if x.shape[-2] != bank.n_chains:
        raise DimensionMismatch(
            f"signal has {x.shape[-2]} chains, bank has {bank.n_chains}"
        )
    out = np.empty_like(x)
    for d in range(bank.n_chains):
        out[..., d, :] = bank.output_scale[d] * _clip_peaks(
            mp_apply(bank.coeffs[d], x[..., d, :], circular=circular),
            x[..., d, :], bank.clip_factor)
    return out


def anti_beamform(b_ab: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Project PA outputs (..., N_t, T) back to RF-chain space (..., D, T)."""
    b_ab = np.asarray(b_ab)
    y = np.asarray(y)
    if y.shape[-2] != b_ab.shape[1]:
        raise DimensionMismatch(
            f"observation has {y.shape[-2]} rows, anti-beamformer expects "
            f"{b_ab.shape[1]}"
        )
    return np.einsum("dn,...nt->...dt", b_ab, y)


def _training_signal(link: Link, rng: np.random.Generator,
                     n_frames: int) -> np.ndarray:
    """Digital payload frames (F, D, T) with live precoder statistics."""
    wf = link.scenario.waveform
    n_users = link.n_users
    bps = wf.bits_per_symbol
    bits = rng.integers(0, 2, size=(n_frames, n_users, wf.n_active * bps),
                        dtype=np.int8)
    d = np.empty((n_frames, wf.n_active, n_users), dtype=complex)
    for f in range(n_frames):
        for u in range(n_users):
            d[f, :, u] = qam_map(bits[f, u], wf.mod_order)
    return ofdm_modulate(_precode_bins(link, d), wf)


def dpd_train(link: Link, rng: np.random.Generator, *, beta: float = 0.5,
              n_blocks: int = 10, block_len: int = 8192,
              clip_factor: float = 4.0,
              memory_span: int = DPD_MEMORY_SPAN,
              n_orders: int = DPD_ORDERS,
              bank: DpdBank | None = None) -> DpdBank:
    """Identify the per-chain predistorters on the live transmit chain.

    Each block pushes fresh precoded payload through the current bank, the
    analog beamformer and the PA bank, projects the observation back with
    the anti-beamformer, and applies the damped LS update
    ``w <- w + beta (X^H X)^{-1} X^H e`` per chain with regressors X built
    from the projected signal.  ``e`` is the indirect-learning residual
    ``x_hat - X w`` (predistorter output minus the current postdistorter
    copy run on the feedback), whose fixed point makes the DPD-PA cascade
    linear.  The feedback is normalized by its per-chain linear gain so
    adaptation shapes distortion and memory rather than absolute gain.
    Near-singular Gram matrices get diagonal loading and set
    ``ill_conditioned``.
    """
    if link.pa is None:
        raise DimensionMismatch("DPD training needs a PA in the link")
    if bank is None:
        bank = DpdBank.identity(link.beamformer.n_rf_chains,
                                memory_span=memory_span, n_orders=n_orders,
                                beta=beta, block_len=block_len,
                                n_blocks=n_blocks, clip_factor=clip_factor)
    else:
        bank = DpdBank(coeffs=bank.coeffs.copy(),
                       output_scale=np.ones(bank.n_chains), beta=beta,
                       block_len=block_len, n_blocks=n_blocks,
                       clip_factor=clip_factor)
        memory_span = bank.memory_span
        n_orders = bank.n_orders
    wf = link.scenario.waveform
    frames_per_block = max(1, int(np.ceil(block_len / wf.fft_size)))
    b_ab = link.beamformer.anti_beamformer()
    b = link.beamformer.matrix
    last_x = None
    for _ in range(n_blocks):
        x = _training_signal(link, rng, frames_per_block)
        x_hat = np.empty_like(x)
        for dch in range(bank.n_chains):
            x_hat[:, dch, :] = _clip_peaks(
                mp_apply(bank.coeffs[dch], x[:, dch, :], circular=True),
                x[:, dch, :], clip_factor)
        y = pa_bank_apply(link.pa, link.drive * np.einsum(
            "nd,fdt->fnt", b, x_hat), circular=True) / link.drive
        x_tilde = anti_beamform(b_ab, y)
        for dch in range(bank.n_chains):
            g = (np.vdot(x_hat[:, dch, :], x_tilde[:, dch, :])
                 / np.vdot(x_hat[:, dch, :], x_hat[:, dch, :]))
            if abs(g) > 1e-9:
                x_tilde[:, dch, :] /= g
        block_err = 0.0
        for dch in range(bank.n_chains):
            phi = np.vstack([
                mp_regressors(x_tilde[f, dch], memory_span, n_orders,
                              circular=True)
                for f in range(frames_per_block)
            ])
            e = x_hat[:, dch, :].reshape(-1) - phi @ bank.coeffs[dch].reshape(-1)
            block_err += float(np.mean(np.abs(e) ** 2)
                               / np.mean(np.abs(x_hat[:, dch, :]) ** 2))
            if beta == 0.0:
                continue
            # equilibrate columns: raw high-order basis terms span many
            # decades and would swamp the Gram conditioning
            col = np.linalg.norm(phi, axis=0)
            col = np.where(col > 0, col, 1.0)
            phi = phi / col
            gram = phi.conj().T @ phi
            n_coef = gram.shape[0]
            loading = 1e-8
            cond = np.linalg.cond(gram)
            if not np.isfinite(cond) or cond > 1e8:
                loading = 1e-4
                bank.ill_conditioned = True
            gram = gram + loading * (np.trace(gram).real / n_coef) \
                * np.eye(n_coef)
            # damped replacement: the ridge pins the full coefficient
            # vector, so quasi-unobservable directions of the oversampled
            # (strongly colored) input cannot random-walk across blocks
            w_fit = np.linalg.solve(
                gram, phi.conj().T @ x_hat[:, dch, :].reshape(-1)) / col
            bank.coeffs[dch] = (1.0 - beta) * bank.coeffs[dch] \
                + beta * w_fit.reshape(2 * memory_span - 1, n_orders)
        bank.block_error.append(block_err / bank.n_chains)
        last_x = x
    # per-chain renormalization so the radiated power matches the precoder
    if last_x is not None and beta > 0.0:
        x_hat = np.empty_like(last_x)
        for dch in range(bank.n_chains):
            x_hat[:, dch, :] = _clip_peaks(
                mp_apply(bank.coeffs[dch], last_x[:, dch, :], circular=True),
                last_x[:, dch, :], clip_factor)
        p_in = np.mean(np.abs(last_x) ** 2, axis=(0, 2))
        p_out = np.mean(np.abs(x_hat) ** 2, axis=(0, 2))
        bank.output_scale = np.sqrt(p_in / np.maximum(p_out, 1e-30))
    return bank


# ---------------------------------------------------------------------------
# coefficient files: PA text format with a chain column
# ---------------------------------------------------------------------------

def save_dpd_bank(bank: DpdBank, path):
    pi = bank.memory_span
    lines = [
        "# palink DPD coefficient bank",
        "version 1",
        f"chains {bank.n_chains}",
        f"pi {pi}",
        f"upsilon {bank.n_orders}",
        f"clip_factor {float(bank.clip_factor)!r}",
        "scale " + " ".join(f"{float(s)!r}" for s in bank.output_scale),
    ]
    for dch in range(bank.n_chains):
        for row, w in enumerate(range(-pi + 1, pi)):
            for v in range(bank.n_orders):
                a = bank.coeffs[dch, row, v]
                lines.append(
                    f"tap {dch} {w} {v} {float(a.real)!r} {float(a.imag)!r}")
    from pathlib import Path
    Path(path).write_text("\n".join(lines) + "\n")


def load_dpd_bank(path) -> DpdBank:
    from pathlib import Path

    from .errors import ParseError
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read DPD file {path}: {exc}") from exc
    meta = {}
    taps = []
    scales = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "tap":
                taps.append((int(parts[1]), int(parts[2]), int(parts[3]),
                             float(parts[4]) + 1j * float(parts[5])))
            elif parts[0] == "scale":
                scales = np.array([float(v) for v in parts[1:]])
            else:
                meta[parts[0]] = parts[1]
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{ln}: {exc}") from exc
    try:
        if int(meta["version"]) != 1:
            raise ParseError(f"{path}: unsupported version {meta['version']}")
        n_chains = int(meta["chains"])
        pi = int(meta["pi"])
        upsilon = int(meta["upsilon"])
    except KeyError as exc:
        raise ParseError(f"{path}: missing header field {exc}") from exc
    coeffs = np.zeros((n_chains, 2 * pi - 1, upsilon), dtype=complex)
    for dch, w, v, a in taps:
        if not (0 <= dch < n_chains and -pi < w < pi and 0 <= v < upsilon):
            raise ParseError(f"{path}: tap ({dch}, {w}, {v}) out of range")
        coeffs[dch, w + pi - 1, v] = a
    if scales is None or scales.size != n_chains:
        raise ParseError(f"{path}: missing or mis-sized scale line")
    return DpdBank(coeffs=coeffs, output_scale=scales,
                   clip_factor=float(meta.get("clip_factor", 4.0)))


# ---------------------------------------------------------------------------
# post-equalization at the user terminal
# ---------------------------------------------------------------------------

def posteq_estimate(r: np.ndarray, d: np.ndarray,
                    eps: float = 1e-12) -> np.ndarray:
    """Per-bin moment-ratio coefficients alpha ``E[r d*] / E[|d|^2]``.

    ``r`` and ``d`` are pilot ensembles of shape (F, K, U) (or (K, U) for a
    single frame); moments average over frames.
    """
    r = np.asarray(r)
    d = np.asarray(d)
    if r.shape != d.shape:
        raise DimensionMismatch(f"r {r.shape} vs d {d.shape}")
    if r.ndim == 2:
        r = r[None]
        d = d[None]
    num = np.mean(r * d.conj(), axis=0)
    den = np.mean(np.abs(d) ** 2, axis=0)
    if np.any(den < eps):
        raise ZeroEnergy("pilot energy below epsilon on some bins")
    return num / den


def posteq_apply(alpha: np.ndarray, r: np.ndarray,
                 eps: float = 1e-12) -> np.ndarray:
    """Divide received bins by their estimated coefficients."""
    alpha = np.asarray(alpha)
    if np.any(np.abs(alpha) < eps):
        raise ZeroCoefficient("post-equalizer coefficient near zero")
    return np.asarray(r) / alpha

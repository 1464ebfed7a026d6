"""Gray-coded square QAM and OFDM synthesis/analysis on the oversampled grid.

Conventions
-----------
The transmitter synthesizes ``x_n = (1/sqrt(K)) sum_k X_k exp(+j 2 pi k n / N)``
on the ``N = fft_size`` grid, with only the K active bins populated.  Two
forward transforms are provided:

* :func:`ofdm_demodulate` is the exact inverse of :func:`ofdm_modulate`
  (scaling ``sqrt(K)/N``), used wherever symbol values must round-trip.
* :func:`ofdm_spectrum` is the unitary analysis transform ``1/sqrt(N)``,
  used by the per-subcarrier linearization machinery; it preserves noise
  variance per bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthError, ValidationError

__all__ = [
    "WaveformConfig",
    "qam_constellation",
    "qam_map",
    "qam_demap_hard",
    "ofdm_modulate",
    "ofdm_demodulate",
    "ofdm_spectrum",
]

_SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class WaveformConfig:
    """OFDM numerology: K active bins on an oversampled fft_size grid."""

    n_active: int
    fft_size: int
    cp_len: int
    mod_order: int

    def __post_init__(self):
        if self.n_active < 1:
            raise ValidationError("waveform.n_active must be positive")
        if self.fft_size < self.n_active:
            raise ValidationError("waveform.fft_size must be >= n_active")
        if self.cp_len < 0:
            raise ValidationError("waveform.cp_len must be nonnegative")
        if self.mod_order not in _SUPPORTED_ORDERS:
            raise ValidationError(
                f"waveform.mod_order must be one of {_SUPPORTED_ORDERS}"
            )

    @property
    def oversampling(self) -> float:
        """Oversampling factor mu = fft_size / n_active (rational, >= 1)."""
        return self.fft_size / self.n_active

    @property
    def cp_samples(self) -> int:
        """Cyclic prefix length on the oversampled grid."""
        return int(round(self.cp_len * self.oversampling))

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.mod_order))

    def active_bins(self) -> np.ndarray:
        """FFT indices of the K active bins, negative frequencies first.

        Bins sit symmetrically around DC (DC itself unused); for odd K the
        extra bin goes to the positive side.  The degenerate fully loaded
        grid (K == fft_size, no oversampling) uses every bin.
        """
        k = self.n_active
        if k == self.fft_size:
            return np.arange(k)
        n_neg = k // 2
        n_pos = k - n_neg
        neg = np.arange(self.fft_size - n_neg, self.fft_size)
        pos = np.arange(1, n_pos + 1)
        return np.concatenate([neg, pos])


# ---------------------------------------------------------------------------
# QAM
# ---------------------------------------------------------------------------

def _check_order(m: int) -> int:
    side = int(round(np.sqrt(m)))
    if side * side != m or m not in _SUPPORTED_ORDERS:
        raise ValidationError(f"mod_order {m} is not a supported square QAM size")
    return side


def _gray_decode(v: np.ndarray) -> np.ndarray:
    # inverse of g = i ^ (i >> 1), word length <= 8 bits here
    out = v.copy()
    shift = 1
    while shift < 8:
        out = out ^ (out >> shift)
        shift *= 2
    return out


def qam_constellation(m: int) -> np.ndarray:
    """All M constellation points, indexed by the integer value of their bits.

    Bit word layout: the first log2(sqrt(M)) bits select the I level, the
    rest the Q level; each axis is Gray coded.  Average symbol energy is 1.
    """
    side = _check_order(m)
    nb = int(np.log2(side))
    idx = np.arange(m)
    vi = idx >> nb
    vq = idx & (side - 1)
    li = _gray_decode(vi)
    lq = _gray_decode(vq)
    scale = np.sqrt(2.0 * (m - 1) / 3.0)
    return ((2 * li - (side - 1)) + 1j * (2 * lq - (side - 1))) / scale


def qam_map(bits: np.ndarray, m: int) -> np.ndarray:
    """Map a bit array (values 0/1) to unit-energy Gray QAM symbols."""
    side = _check_order(m)
    nb_sym = 2 * int(np.log2(side))
    bits = np.asarray(bits).reshape(-1)
    if bits.size % nb_sym != 0:
        raise LengthError(
            f"bit count {bits.size} not divisible by log2(M)={nb_sym}"
        )
    words = bits.reshape(-1, nb_sym)
    weights = 1 << np.arange(nb_sym - 1, -1, -1)
    idx = words @ weights
    return qam_constellation(m)[idx]


def qam_demap_hard(symbols: np.ndarray, m: int) -> np.ndarray:
    """Hard-decision demap; exact inverse of :func:`qam_map` without noise."""
    side = _check_order(m)
    nb = int(np.log2(side))
    symbols = np.asarray(symbols).reshape(-1)
    scale = np.sqrt(2.0 * (m - 1) / 3.0)
    levels_i = np.clip(np.round((symbols.real * scale + side - 1) / 2), 0, side - 1)
    levels_q = np.clip(np.round((symbols.imag * scale + side - 1) / 2), 0, side - 1)
    vi = levels_i.astype(np.int64)
    vq = levels_q.astype(np.int64)
    gi = vi ^ (vi >> 1)
    gq = vq ^ (vq >> 1)
    words = (gi << nb) | gq
    shifts = np.arange(2 * nb - 1, -1, -1)
    return ((words[:, None] >> shifts) & 1).astype(np.int8).reshape(-1)


# ---------------------------------------------------------------------------
# OFDM
# ---------------------------------------------------------------------------

def ofdm_modulate(freq_values: np.ndarray, config: WaveformConfig,
                  with_cp: bool = False) -> np.ndarray:
    """Synthesize the oversampled time block from K active-bin values.

    ``freq_values`` has shape (..., K) in :meth:`WaveformConfig.active_bins`
    order.  Output shape is (..., fft_size) or (..., cp_samples + fft_size)
    when ``with_cp``; the CP is a cyclic copy of the block tail.
    """
    freq_values = np.asarray(freq_values)
    if freq_values.shape[-1] != config.n_active:
        raise LengthError(
            f"expected {config.n_active} active-bin values, "
            f"got {freq_values.shape[-1]}"
        )
    grid = np.zeros(freq_values.shape[:-1] + (config.fft_size,), dtype=complex)
    grid[..., config.active_bins()] = freq_values
    x = np.fft.ifft(grid, axis=-1) * (config.fft_size / np.sqrt(config.n_active))
    if with_cp and config.cp_samples > 0:
        x = np.concatenate([x[..., -config.cp_samples:], x], axis=-1)
    return x


def _strip_cp(block: np.ndarray, config: WaveformConfig) -> np.ndarray:
    n = config.fft_size
    if block.shape[-1] == n:
        return block
    if block.shape[-1] == n + config.cp_samples:
        return block[..., config.cp_samples:]
    raise LengthError(
        f"block length {block.shape[-1]} is neither fft_size={n} "
        f"nor fft_size+cp={n + config.cp_samples}"
    )


def ofdm_demodulate(block: np.ndarray, config: WaveformConfig) -> np.ndarray:
    """Recover active-bin values; exact inverse of :func:`ofdm_modulate`."""
    x = _strip_cp(np.asarray(block), config)
    grid = np.fft.fft(x, axis=-1) * (np.sqrt(config.n_active) / config.fft_size)
    return grid[..., config.active_bins()]


def ofdm_spectrum(block: np.ndarray, config: WaveformConfig,
                  active_only: bool = False) -> np.ndarray:
    """Unitary forward transform of a time block (CP stripped if present).

    This is the per-bin analysis view used for linearization estimates:
    white noise of variance s**2 keeps per-bin variance s**2.
    """
    x = _strip_cp(np.asarray(block), config)
    grid = np.fft.fft(x, axis=-1) / np.sqrt(config.fft_size)
    if active_only:
        return grid[..., config.active_bins()]
    return grid

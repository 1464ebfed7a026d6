"""Spatial channel statistics and realizations for the ULA downlink.

Covariance matrices follow the one-ring scattering model: each multipath
component (MPC) occupies an angular sector and its covariance is the sector
integral of steering-vector outer products.  For a half-wavelength ULA the
integrand depends only on the antenna index difference, so the matrix is
Hermitian Toeplitz and one row of quadratures suffices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import toeplitz

from .errors import DecompositionError, DelayExceedsCp, QuadratureError
from .rng import substream
from .scenario import MpcConfig, Scenario
from .waveform import WaveformConfig

__all__ = [
    "steering",
    "build_ccm",
    "CcmSet",
    "build_ccm_set",
    "ChannelRealization",
    "sample_realization",
    "frequency_response",
    "save_ccm_cache",
    "load_ccm_cache",
]

CCM_CACHE_VERSION = 1


def steering(angle: float, n_antennas: int) -> np.ndarray:
    """Unit-norm ULA steering vector for azimuth ``angle`` in radians."""
    assert abs(angle) <= np.pi / 2 + 1e-12, "azimuth outside [-pi/2, pi/2]"
    m = np.arange(n_antennas)
    return np.exp(1j * np.pi * m * np.sin(angle)) / np.sqrt(n_antennas)


def _one_ring_row(mpc: MpcConfig, n_antennas: int,
                  tol: float = 1e-10, max_order: int = 8192) -> np.ndarray:
    """First row generator f[d] of the Toeplitz one-ring CCM, d = 0..N-1."""
    center = np.deg2rad(mpc.center_angle_deg)
    half = np.deg2rad(mpc.half_width_deg)
    lo, hi = center - half, center + half
    d = np.arange(n_antennas)
    prev = None
    order = 16
    while order <= max_order:
        x, w = leggauss(order)
        theta = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        ww = 0.5 * (hi - lo) * w
        basis = np.exp(1j * np.pi * d[:, None] * np.sin(theta)[None, :])
        f = (mpc.gain / (2.0 * half * n_antennas)) * (basis @ ww)
        if prev is not None and np.max(np.abs(f - prev)) < tol:
            return f
        prev = f
        order *= 2
    raise QuadratureError(
        f"one-ring quadrature did not reach {tol:g} at order {max_order}"
    )


def build_ccm(mpc: MpcConfig, n_antennas: int) -> np.ndarray:
    """Channel covariance matrix of one MPC; Hermitian PSD with trace = gain."""
    f = _one_ring_row(mpc, n_antennas)
    # R[m, n] = f[m - n]; conjugate side fills the upper triangle
    return toeplitz(f, np.conj(f))


def _psd_sqrt(r: np.ndarray, label: str) -> np.ndarray:
    """Factor F with F F^H = R, clipping quadrature-level negatives at 0."""
    vals, vecs = np.linalg.eigh((r + r.conj().T) / 2)
    floor = -1e-8 * max(np.trace(r).real, np.finfo(float).tiny)
    if np.min(vals) < floor:
        raise DecompositionError(
            f"{label}: eigenvalue {np.min(vals):.3e} below PSD tolerance"
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass
class CcmSet:
    """Per-MPC covariance matrices plus the summed nulling statistics.

    ``per_mpc[g][u][l]`` is the CCM of user u's l-th MPC in group g;
    ``victims`` holds the nulling-only sectors.  The scaled sums carrying
    the E_s/G factor and noise loading are built on demand because the
    loading depends on the operating noise level.
    """

    n_antennas: int
    per_mpc: list
    victims: list
    scenario_hash: str
    _sqrt_cache: dict = field(default_factory=dict, repr=False)

    def group_sum(self, g: int) -> np.ndarray:
        """Unscaled sum of CCMs over users and MPCs of group g."""
        acc = np.zeros((self.n_antennas, self.n_antennas), dtype=complex)
        for user in self.per_mpc[g]:
            for r in user:
                acc += r
        return acc

    def scaled_group_sum(self, g: int, es: float) -> np.ndarray:
        return (es / len(self.per_mpc)) * self.group_sum(g)

    def total_sum(self, es: float, n0: float) -> np.ndarray:
        """All-group sum plus victim sectors plus noise diagonal loading."""
        n_groups = len(self.per_mpc)
        acc = np.zeros((self.n_antennas, self.n_antennas), dtype=complex)
        for g in range(n_groups):
            acc += self.group_sum(g)
        for v in self.victims:
            acc += v
        return (es / n_groups) * acc + n0 * np.eye(self.n_antennas)

    def sqrt_factor(self, g: int, u: int, l: int) -> np.ndarray:
        key = (g, u, l)
        if key not in self._sqrt_cache:
            self._sqrt_cache[key] = _psd_sqrt(
                self.per_mpc[g][u][l], f"ccm[{g}][{u}][{l}]"
            )
        return self._sqrt_cache[key]


def build_ccm_set(scenario: Scenario, n_antennas: int | None = None) -> CcmSet:
    """Build every CCM the scenario needs on an ``n_antennas``-element array.

    Passing the subarray size yields the reduced-dimension statistics used
    by partially connected beamformers (same sectors, array at the origin).
    """
    n = n_antennas if n_antennas is not None else scenario.array.n_antennas
    per_mpc = [
        [[build_ccm(m, n) for m in user] for user in g.mpcs]
        for g in scenario.groups
    ]
    victims = [build_ccm(v, n) for v in scenario.victims]
    return CcmSet(n_antennas=n, per_mpc=per_mpc, victims=victims,
                  scenario_hash=scenario.content_hash())


@dataclass
class ChannelRealization:
    """Sampled spatial vectors: taps[g][u] is a list of (delay, kappa, h)."""

    n_antennas: int
    taps: list

    def n_groups(self) -> int:
        return len(self.taps)


def sample_realization(stats: CcmSet, scenario: Scenario,
                       rng: np.random.Generator) -> ChannelRealization:
    """Draw one Rician channel realization from the scenario statistics.

    Each MPC contributes ``h = kappa * a(theta_c) + R^(1/2) z`` with z
    standard complex Gaussian, ``|kappa|^2 = rician_factor * gain`` and a
    uniformly distributed LOS phase.  Users are drawn independently.
    """
    if stats.n_antennas != scenario.array.n_antennas:
        raise DecompositionError(
            "CCM set was built for a different array size than the scenario"
        )
    fixed_phase_rng = None
    if scenario.kappa_phase == "per_scenario":
        fixed_phase_rng = substream(scenario.seed, "kappa-phase")
    taps = []
    for g, group in enumerate(scenario.groups):
        group_taps = []
        for u, user in enumerate(group.mpcs):
            user_taps = []
            for l, mpc in enumerate(user):
                phase_rng = fixed_phase_rng if fixed_phase_rng is not None else rng
                phase = phase_rng.uniform(0.0, 2.0 * np.pi)
                kappa = np.sqrt(mpc.rician_factor * mpc.gain) * np.exp(1j * phase)
                f = stats.sqrt_factor(g, u, l)
                z = (rng.standard_normal(stats.n_antennas)
                     + 1j * rng.standard_normal(stats.n_antennas)) / np.sqrt(2)
                h = kappa * steering(np.deg2rad(mpc.center_angle_deg),
                                     stats.n_antennas) + f @ z
                user_taps.append((mpc.delay, kappa, h))
            group_taps.append(user_taps)
        taps.append(group_taps)
    return ChannelRealization(n_antennas=stats.n_antennas, taps=taps)


def frequency_response(real: ChannelRealization, waveform: WaveformConfig,
                       bins: np.ndarray | None = None) -> list[np.ndarray]:
    """Per-subcarrier response matrices Omega_k for every group.

    Taps at symbol-rate delay ``l`` land on the oversampled grid at
    ``round(l * mu)`` and the response is the DFT over those grid delays.
    Returns one (n_bins, N_t, U_g) array per group, evaluated on ``bins``
    (default: the full fft_size grid; active bins are
    ``waveform.active_bins()``).
    """
    if bins is None:
        bins = np.arange(waveform.fft_size)
    bins = np.asarray(bins)
    mu = waveform.oversampling
    out = []
    for group_taps in real.taps:
        omega = np.zeros((bins.size, real.n_antennas, len(group_taps)),
                         dtype=complex)
        for u, user_taps in enumerate(group_taps):
            for delay_sym, _, h in user_taps:
                l_up = int(round(delay_sym * mu))
                if l_up >= waveform.cp_samples and l_up > 0:
                    raise DelayExceedsCp(
                        f"tap at oversampled delay {l_up} >= cyclic prefix "
                        f"{waveform.cp_samples}"
                    )
                phase = np.exp(-2j * np.pi * l_up * bins / waveform.fft_size)
                omega[:, :, u] += phase[:, None] * h[None, :]
        out.append(omega)
    return out


# ---------------------------------------------------------------------------
# CCM cache (skip quadrature on re-runs)
# ---------------------------------------------------------------------------

def save_ccm_cache(stats: CcmSet, path):
    arrays = {}
    shape = []
    for g, group in enumerate(stats.per_mpc):
        shape.append([len(user) for user in group])
        for u, user in enumerate(group):
            for l, r in enumerate(user):
                arrays[f"r_{g}_{u}_{l}"] = r
    for vi, v in enumerate(stats.victims):
        arrays[f"v_{vi}"] = v
    arrays["meta"] = np.array(
        [CCM_CACHE_VERSION, stats.n_antennas, len(stats.victims)]
    )
    arrays["layout"] = np.array(
        [len(shape)] + [x for row in shape for x in ([len(row)] + row)]
    )
    arrays["scenario_hash"] = np.frombuffer(
        stats.scenario_hash.encode(), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_ccm_cache(path, scenario: Scenario,
                   n_antennas: int | None = None) -> CcmSet | None:
    """Load a cached CCM set; returns None on any mismatch."""
    n = n_antennas if n_antennas is not None else scenario.array.n_antennas
    try:
        data = np.load(path)
    except (OSError, ValueError):
        return None
    meta = data["meta"]
    if meta[0] != CCM_CACHE_VERSION or meta[1] != n:
        return None
    cached_hash = bytes(data["scenario_hash"]).decode()
    if cached_hash != scenario.content_hash():
        return None
    layout = data["layout"]
    n_groups = int(layout[0])
    per_mpc = []
    pos = 1
    for g in range(n_groups):
        n_users = int(layout[pos])
        counts = layout[pos + 1: pos + 1 + n_users]
        pos += 1 + n_users
        per_mpc.append([
            [data[f"r_{g}_{u}_{l}"] for l in range(int(counts[u]))]
            for u in range(n_users)
        ])
    victims = [data[f"v_{vi}"] for vi in range(int(meta[2]))]
    return CcmSet(n_antennas=n, per_mpc=per_mpc, victims=victims,
                  scenario_hash=cached_hash)

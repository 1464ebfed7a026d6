"""Analog beamformers and per-subcarrier regularized ZF precoding.

Four connectivity types are supported.  The statistical eigen-beamformers
solve ``R_group v = lambda R_total v`` by Cholesky whitening of the loaded
total covariance (positive definite by construction), which reduces the
problem to an ordinary Hermitian eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .channel import CcmSet, steering
from .errors import DimensionMismatch, EigenFailure, SingularError
from .scenario import Architecture, Scenario

__all__ = [
    "AnalogBeamformer",
    "DigitalPrecoder",
    "geb_fully_connected",
    "geb_partial",
    "dft_partial",
    "fully_digital",
    "build_analog_beamformer",
    "zf_precoder",
]


@dataclass
class AnalogBeamformer:
    """Analog stage: B (N_t x D), per-group column slices, anti-beamformer."""

    architecture: Architecture
    matrix: np.ndarray
    group_cols: list[slice]
    eigenvalues: list[np.ndarray] | None = None

    @property
    def n_antennas(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_rf_chains(self) -> int:
        return self.matrix.shape[1]

    @property
    def subarray_size(self) -> int | None:
        if not self.architecture.is_partial:
            return None
        return self.n_antennas // self.n_rf_chains

    def group_block(self, g: int) -> np.ndarray:
        return self.matrix[:, self.group_cols[g]]

    def anti_beamformer(self) -> np.ndarray:
        """Stacked per-group pseudo-inverses, shape (D, N_t)."""
        rows = []
        for sl in self.group_cols:
            b = self.matrix[:, sl]
            gram = b.conj().T @ b
            rows.append(np.linalg.solve(gram, b.conj().T))
        return np.vstack(rows)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    ref = v[i]
    if ref == 0:
        return v
    return v * (np.conj(ref) / np.abs(ref))


def _generalized_eigvecs(a: np.ndarray, b: np.ndarray, count: int):
    """Top ``count`` eigenpairs of a v = lambda b v with b positive definite."""
    try:
        chol = np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"total covariance not positive definite: {exc}")
    n = b.shape[0]
    l_inv = solve_triangular(chol, np.eye(n), lower=True)
    m = l_inv @ a @ l_inv.conj().T
    try:
        vals, vecs = np.linalg.eigh((m + m.conj().T) / 2)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"whitened eigendecomposition failed: {exc}")
    order = np.argsort(vals)[::-1][:count]
    out_vals = vals[order]
    out_vecs = np.empty((n, count), dtype=complex)
    for j, idx in enumerate(order):
        v = l_inv.conj().T @ vecs[:, idx]
        v = v / np.linalg.norm(v)
        out_vecs[:, j] = _fix_phase(v)
    return out_vals, out_vecs


def _group_slices(rf_per_group: list[int]) -> list[slice]:
    bounds = np.concatenate([[0], np.cumsum(rf_per_group)])
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _loaded_total(stats: CcmSet, es: float, n0: float) -> np.ndarray:
    """Total covariance with its noise loading, floored so the pencil stays
    positive definite in the zero-noise limit."""
    r_total = stats.total_sum(es, n0)
    n = r_total.shape[0]
    floor = 1e-9 * np.trace(r_total).real / n
    if n0 < floor:
        r_total = r_total + floor * np.eye(n)
    return r_total


def geb_fully_connected(stats: CcmSet, scenario: Scenario,
                        n0: float) -> AnalogBeamformer:
    """Per-group dominant generalized eigenvectors of (own sum, total sum)."""
    r_total = _loaded_total(stats, scenario.es, n0)
    cols = []
    eigenvalues = []
    for g, group in enumerate(scenario.groups):
        r_own = stats.scaled_group_sum(g, scenario.es)
        vals, vecs = _generalized_eigvecs(r_own, r_total, group.rf_chains)
        eigenvalues.append(vals)
        cols.append(vecs)
    matrix = np.hstack(cols)
    return AnalogBeamformer(
        architecture=Architecture.FULLY_CONNECTED,
        matrix=matrix,
        group_cols=_group_slices([g.rf_chains for g in scenario.groups]),
        eigenvalues=eigenvalues,
    )


def geb_partial(stats_sub: CcmSet, scenario: Scenario,
                n0: float) -> AnalogBeamformer:
    """Block-diagonal eigen-beamformer built from subarray statistics.

    Block (g, d) holds the d-th dominant generalized eigenvector of the
    group's subarray covariance pair; every RF chain drives its own
    ``N_s``-element subarray.
    """
    ns = scenario.array.subarray_size
    if stats_sub.n_antennas != ns:
        raise DimensionMismatch(
            f"subarray statistics built for {stats_sub.n_antennas} elements, "
            f"scenario expects N_s={ns}"
        )
    nt = scenario.array.n_antennas
    d_total = scenario.array.n_rf_chains
    r_total = _loaded_total(stats_sub, scenario.es, n0)
    matrix = np.zeros((nt, d_total), dtype=complex)
    eigenvalues = []
    chain = 0
    for g, group in enumerate(scenario.groups):
        r_own = stats_sub.scaled_group_sum(g, scenario.es)
        vals, vecs = _generalized_eigvecs(r_own, r_total, group.rf_chains)
        eigenvalues.append(vals)
        for d in range(group.rf_chains):
            rows = slice(chain * ns, (chain + 1) * ns)
            matrix[rows, chain] = vecs[:, d]
            chain += 1
    return AnalogBeamformer(
        architecture=Architecture.PARTIAL_GEB,
        matrix=matrix,
        group_cols=_group_slices([g.rf_chains for g in scenario.groups]),
        eigenvalues=eigenvalues,
    )


def strong_mpc_angle(scenario: Scenario, g: int, u: int) -> float:
    """Center angle (radians) of the highest-gain MPC of user (g, u)."""
    mpcs = scenario.groups[g].mpcs[u]
    best = max(mpcs, key=lambda m: m.gain)
    return float(np.deg2rad(best.center_angle_deg))


def dft_partial(scenario: Scenario) -> AnalogBeamformer:
    """Phase-only subarray beamformer steering at strong-MPC directions.

    Chain d of group g serves user ``d mod U_g``; each block is the
    N_s-element steering vector of that user's strong MPC, so every entry
    has magnitude 1/sqrt(N_s).
    """
    ns = scenario.array.subarray_size
    nt = scenario.array.n_antennas
    d_total = scenario.array.n_rf_chains
    matrix = np.zeros((nt, d_total), dtype=complex)
    chain = 0
    for g, group in enumerate(scenario.groups):
        for d in range(group.rf_chains):
            angle = strong_mpc_angle(scenario, g, d % group.n_users)
            rows = slice(chain * ns, (chain + 1) * ns)
            matrix[rows, chain] = steering(angle, ns)
            chain += 1
    return AnalogBeamformer(
        architecture=Architecture.PARTIAL_DFT,
        matrix=matrix,
        group_cols=_group_slices([g.rf_chains for g in scenario.groups]),
    )


def fully_digital(scenario: Scenario) -> AnalogBeamformer:
    nt = scenario.array.n_antennas
    return AnalogBeamformer(
        architecture=Architecture.FULLY_DIGITAL,
        matrix=np.eye(nt, dtype=complex),
        group_cols=_group_slices([g.rf_chains for g in scenario.groups]),
    )


def build_analog_beamformer(scenario: Scenario, stats: CcmSet,
                            stats_sub: CcmSet | None, n0: float) -> AnalogBeamformer:
    """Dispatch on the scenario's architecture."""
    arch = scenario.array.architecture
    if arch is Architecture.FULLY_DIGITAL:
        return fully_digital(scenario)
    if arch is Architecture.FULLY_CONNECTED:
        return geb_fully_connected(stats, scenario, n0)
    if arch is Architecture.PARTIAL_GEB:
        if stats_sub is None:
            raise DimensionMismatch("partial GEB needs subarray statistics")
        return geb_partial(stats_sub, scenario, n0)
    return dft_partial(scenario)


# ---------------------------------------------------------------------------
# digital precoder
# ---------------------------------------------------------------------------

@dataclass
class DigitalPrecoder:
    """Per-bin per-group ZF matrices and the group power-scaling factors.

    ``w[g]`` has shape (K, D_g, U_g); the transmitted digital vector at bin
    k is ``bdiag(sqrt(c[g]) w[g][k]) d_k``.
    """

    w: list[np.ndarray]
    c: np.ndarray
    delta: float

    def scaled(self, g: int) -> np.ndarray:
        return np.sqrt(self.c[g]) * self.w[g]


def zf_precoder(omega_eff: list[np.ndarray], beamformer: AnalogBeamformer,
                es: float, delta: float = 1e-6) -> DigitalPrecoder:
    """Regularized ZF per bin and group, then per-group power scaling.

    ``omega_eff[g]`` holds the effective channels B_g^H Omega_k, shape
    (K, D_g, U_g).  ``delta`` scales the regularizer by the mean diagonal
    of the Gram matrix; ``delta=0`` requests exact ZF and raises
    SingularError on rank-deficient bins.  Scaling enforces an average
    transmit power of ``es`` split evenly across groups.
    """
    n_groups = len(omega_eff)
    w = []
    c = np.zeros(n_groups)
    for g, om in enumerate(omega_eff):
        n_users = om.shape[2]
        gram = np.einsum("kdu,kdv->kuv", om.conj(), om)
        if delta > 0:
            load = delta * np.trace(gram, axis1=1, axis2=2).real / n_users
            gram = gram + load[:, None, None] * np.eye(n_users)
        else:
            conds = np.linalg.cond(gram)
            if np.any(conds > 1e12):
                raise SingularError(
                    f"group {g}: Gram matrix rank-deficient with delta=0 "
                    f"(cond={np.max(conds):.2e})"
                )
        # W = Omega_eff gram^{-1}: solve on the Hermitian Gram per bin
        inv = np.linalg.solve(gram, np.broadcast_to(
            np.eye(n_users), gram.shape).copy())
        wk = np.einsum("kdu,kuv->kdv", om, inv)
        b = beamformer.group_block(g)
        bw = np.einsum("nd,kdu->knu", b, wk)
        p_g = np.mean(np.sum(np.abs(bw) ** 2, axis=(1, 2)))
        c[g] = es / (n_groups * p_g)
        w.append(wk)
    return DigitalPrecoder(w=w, c=c, delta=delta)

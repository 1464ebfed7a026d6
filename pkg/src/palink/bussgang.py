"""Spatio-frequency linearization of the nonlinear transmit chain.

Per subcarrier, the amplified transmit vector is split into a Wiener-optimal
linear map of the digitally precoded signal plus an uncorrelated distortion
term.  The linear map's shape follows the array connectivity: a full
N_t x D matrix for fully connected arrays, one N_s vector per RF chain for
partially connected arrays (assembled into a block-diagonal matrix), and a
scalar per antenna for fully digital arrays; the distortion covariance is
full, block-diagonal, or diagonal accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientFrames, LayoutMismatch
from .scenario import Architecture

__all__ = [
    "BussgangModel",
    "estimate_bussgang",
    "assemble_block_A",
    "distortion_covariance",
    "save_bussgang",
    "load_bussgang",
]

BUSSGANG_DUMP_VERSION = 1


@dataclass
class BussgangModel:
    """Per-bin linearization matrices and distortion second moments.

    ``a`` is always stored assembled as (K, N_t, D); ``r_eta`` is the
    architecture-specific covariance storage: (K, N_t, N_t) full,
    (K, D, N_s, N_s) per-subarray blocks, or (K, N_t) diagonal.
    """

    architecture: Architecture
    bins: np.ndarray
    a: np.ndarray
    r_eta: np.ndarray
    n_frames_used: int
    excluded_bins: np.ndarray

    @property
    def n_antennas(self) -> int:
        return self.a.shape[1]

    @property
    def n_chains(self) -> int:
        return self.a.shape[2]

    def group_matrix(self, group_cols: slice) -> np.ndarray:
        """A_k columns of one group, shape (K, N_t, D_g)."""
        return self.a[:, :, group_cols]

    def eta_quadform(self, omega: np.ndarray) -> np.ndarray:
        """Per-bin distortion power ``omega^H R_eta omega``; omega (K, N_t)."""
        if self.architecture is Architecture.FULLY_DIGITAL:
            return np.einsum("kn,kn->k", self.r_eta, np.abs(omega) ** 2).real
        if self.architecture.is_partial:
            ns = self.r_eta.shape[-1]
            om = omega.reshape(omega.shape[0], -1, ns)
            return np.einsum("kdn,kdnm,kdm->k", om.conj(), self.r_eta,
                             om).real
        return np.einsum("kn,knm,km->k", omega.conj(), self.r_eta,
                         omega).real

    def full_r_eta(self, k: int) -> np.ndarray:
        """Assembled N_t x N_t distortion covariance at bin index k."""
        if self.architecture is Architecture.FULLY_DIGITAL:
            return np.diag(self.r_eta[k].astype(complex))
        if self.architecture.is_partial:
            blocks = self.r_eta[k]
            n = self.n_antennas
            ns = blocks.shape[-1]
            out = np.zeros((n, n), dtype=complex)
            for j in range(blocks.shape[0]):
                sl = slice(j * ns, (j + 1) * ns)
                out[sl, sl] = blocks[j]
            return out
        return self.r_eta[k]


def assemble_block_A(vectors: np.ndarray, n_antennas: int) -> np.ndarray:
    """Stack per-chain subarray vectors (K, D, N_s) block-diagonally.

    Equivalent to the elementary-vector Kronecker assembly: chain j's
    vector occupies rows j*N_s .. (j+1)*N_s - 1 of column j.
    """
    vectors = np.asarray(vectors)
    if vectors.ndim != 3:
        raise LayoutMismatch("expected per-chain vectors of shape (K, D, N_s)")
    n_bins, n_chains, ns = vectors.shape
    if n_chains * ns != n_antennas:
        raise LayoutMismatch(
            f"{n_chains} chains x {ns} elements != N_t={n_antennas}"
        )
    a = np.zeros((n_bins, n_antennas, n_chains), dtype=complex)
    for j in range(n_chains):
        a[:, j * ns:(j + 1) * ns, j] = vectors[:, j, :]
    return a


def distortion_covariance(architecture: Architecture, a: np.ndarray,
                          x_f: np.ndarray, y_f: np.ndarray,
                          clip: bool = True) -> np.ndarray:
    """Covariance of the residual ``y - A x`` per bin, structure-aware.

    Symmetrized, and (by default) eigenvalue-clipped to the PSD cone to
    absorb finite-sample indefiniteness.
    """
    eta = y_f - np.einsum("knd,fdk->fnk", a, x_f)
    n_frames = x_f.shape[0]
    if architecture is Architecture.FULLY_DIGITAL:
        return np.mean(np.abs(eta) ** 2, axis=0).T.copy()
    if architecture.is_partial:
        ns = y_f.shape[1] // x_f.shape[1]
        eta_b = eta.reshape(n_frames, -1, ns, eta.shape[-1])
        r = np.einsum("fdnk,fdmk->kdnm", eta_b, eta_b.conj()) / n_frames
        r = (r + np.conj(np.swapaxes(r, -1, -2))) / 2
        return _psd_clip(r) if clip else r
    r = np.einsum("fnk,fmk->knm", eta, eta.conj()) / n_frames
    r = (r + np.conj(np.swapaxes(r, -1, -2))) / 2
    return _psd_clip(r) if clip else r


def _psd_clip(r: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(r)
    vals = np.clip(vals, 0.0, None)
    return np.einsum("...nv,...v,...mv->...nm", vecs, vals, vecs.conj())


def estimate_bussgang(x_f: np.ndarray, y_f: np.ndarray,
                      architecture: Architecture,
                      load_factor: float = 1e-10) -> BussgangModel:
    """Wiener-fit the per-bin linear map from a paired frame ensemble.

    ``x_f`` (F, D, K) are the digitally precoded bin values, ``y_f``
    (F, N_t, K) the amplified transmit bin values, both on the unitary
    analysis grid.  Bins whose input energy vanishes are excluded and
    flagged; near-singular input covariances get relative diagonal loading.
    """
    x_f = np.asarray(x_f)
    y_f = np.asarray(y_f)
    n_frames, n_chains, n_bins = x_f.shape
    n_ant = y_f.shape[1]
    needed = max(2, n_chains if architecture is Architecture.FULLY_CONNECTED
                 else 2)
    if n_frames < needed:
        raise InsufficientFrames(
            f"{n_frames} frames < {needed} required for identification"
        )

    if architecture is Architecture.FULLY_CONNECTED:
        c_xx = np.einsum("fdk,fek->kde", x_f, x_f.conj()) / n_frames
        c_yx = np.einsum("fnk,fdk->knd", y_f, x_f.conj()) / n_frames
        tr = np.trace(c_xx, axis1=1, axis2=2).real
        excluded = tr < 1e3 * np.finfo(float).tiny
        loaded = c_xx + (load_factor * np.maximum(tr, 1e-300) / n_chains)[
            :, None, None] * np.eye(n_chains)
        # A = C_yx C_xx^{-1}  <=>  A^H = C_xx^{-1} C_yx^H (Hermitian C_xx)
        a = np.conj(np.swapaxes(
            np.linalg.solve(loaded, np.conj(np.swapaxes(c_yx, 1, 2))), 1, 2))
        a[excluded] = 0.0
    elif architecture.is_partial:
        if n_ant % n_chains:
            raise LayoutMismatch(f"N_t={n_ant} not a multiple of D={n_chains}")
        ns = n_ant // n_chains
        y_b = y_f.reshape(n_frames, n_chains, ns, n_bins)
        c_xx = np.mean(np.abs(x_f) ** 2, axis=0)                  # (D, K)
        c_yx = np.einsum("fdnk,fdk->kdn", y_b, x_f.conj()) / n_frames
        excluded = np.any(c_xx.T < 1e3 * np.finfo(float).tiny, axis=1)
        denom = np.maximum(c_xx.T, 1e-300)[:, :, None]
        vectors = np.where(excluded[:, None, None], 0.0, c_yx / denom)
        a = assemble_block_A(vectors, n_ant)
    else:
        c_xx = np.mean(np.abs(x_f) ** 2, axis=0)                  # (N_t, K)
        c_yx = np.mean(y_f * x_f.conj(), axis=0)                  # (N_t, K)
        excluded = np.any(c_xx.T < 1e3 * np.finfo(float).tiny, axis=1)
        scal = np.where(c_xx > 0, c_yx / np.maximum(c_xx, 1e-300), 0.0)
        a = np.zeros((n_bins, n_ant, n_ant), dtype=complex)
        idx = np.arange(n_ant)
        a[:, idx, idx] = scal.T

    r_eta = distortion_covariance(architecture, a, x_f, y_f)
    return BussgangModel(
        architecture=architecture,
        bins=np.arange(n_bins),
        a=a,
        r_eta=r_eta,
        n_frames_used=n_frames,
        excluded_bins=np.nonzero(excluded)[0],
    )


def save_bussgang(model: BussgangModel, path):
    np.savez(
        path,
        version=np.array([BUSSGANG_DUMP_VERSION]),
        architecture=np.frombuffer(
            model.architecture.value.encode(), dtype=np.uint8),
        bins=model.bins,
        a=model.a,
        r_eta=model.r_eta,
        n_frames_used=np.array([model.n_frames_used]),
        excluded_bins=model.excluded_bins,
    )


def load_bussgang(path) -> BussgangModel:
    data = np.load(path)
    if data["version"][0] != BUSSGANG_DUMP_VERSION:
        raise ValueError(f"unsupported dump version {data['version'][0]}")
    return BussgangModel(
        architecture=Architecture(bytes(data["architecture"]).decode()),
        bins=data["bins"],
        a=data["a"],
        r_eta=data["r_eta"],
        n_frames_used=int(data["n_frames_used"][0]),
        excluded_bins=data["excluded_bins"],
    )

"""Sample covariance and signal/noise subspace split."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import IdentifiabilityError

log = logging.getLogger(__name__)


@dataclass
class SubspacePair:
    signal: np.ndarray  # U^S, (N, K)
    noise: np.ndarray  # U^N, (N, N - K)
    eigenvalues: np.ndarray  # descending, (N,)
    tie_at_split: bool = False

    @property
    def noise_projector(self) -> np.ndarray:
        return self.noise @ self.noise.conj().T

    @property
    def signal_projector(self) -> np.ndarray:
        return self.signal @ self.signal.conj().T


def sample_covariance(y: np.ndarray) -> np.ndarray:
    """(1/T) Y Y^H, symmetrized.  ``y`` is (N, T) or a stack (M, N, T)."""
    y = np.asarray(y)
    if y.ndim == 1:
        y = y[:, None]
    T = y.shape[-1]
    R = y @ np.swapaxes(y.conj(), -1, -2) / T
    return (R + np.swapaxes(R.conj(), -1, -2)) / 2


def eigendecompose(R: np.ndarray, n_targets: int, tie_rtol: float = 1e-10) -> SubspacePair:
    """Hermitian eigendecomposition split into the K dominant eigenvectors and the rest.

    Eigenvalues are sorted descending; equal eigenvalues keep their original
    order (stable sort on (-lambda, index)).  A tie across the K boundary makes
    the split non-unique and is flagged.
    """
    R = np.asarray(R)
    N = R.shape[0]
    if R.shape != (N, N):
        raise ValueError(f"covariance must be square, got {R.shape}")
    if not 0 <= n_targets < N:
        raise IdentifiabilityError(
            f"need 0 <= K < N for a non-empty noise subspace (K = {n_targets}, N = {N})")
    if not np.all(np.isfinite(R)):
        raise FloatingPointError("covariance has non-finite entries")
    w, V = np.linalg.eigh((R + R.conj().T) / 2)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]
    K = n_targets
    tie = False
    if 0 < K < N:
        scale = max(abs(w[0]), np.finfo(float).tiny)
        tie = bool(abs(w[K - 1] - w[K]) <= tie_rtol * scale)
        if tie:
            log.debug("eigenvalue tie at the signal/noise boundary (K = %d)", K)
    return SubspacePair(V[:, :K], V[:, K:], w, tie)

"""Spectral normalisation by persistent power iteration."""
import logging
from dataclasses import dataclass

import numpy as np

from ..tensor import DTYPE, scale

logger = logging.getLogger(__name__)


def as_matrix(w):
    """View a weight whose last axis is the output axis as (out, rest)."""
    return w.reshape(-1, w.shape[-1]).T


@dataclass
class SpectralNormState:
    """Left singular-vector estimate ``u`` (unit norm) for one weight.

    ``u`` is updated in place so modules can expose it as a buffer.
    """

    u: np.ndarray
    n_power_iterations: int = 1
    sigma: float = float("nan")

    @classmethod
    def init(cls, n_out, rng, n_power_iterations=1):
        u = rng.normal((n_out,))
        return cls((u / np.linalg.norm(u)).astype(DTYPE), n_power_iterations)


def _normalize(v, eps):
    norm = np.linalg.norm(v)
    return v / max(norm, eps)


def estimate_sigma(mat, state, update=True, eps=1e-12):
    """Power-iteration estimate of the top singular value of ``mat``.

    With ``update`` the state's ``u`` advances ``n_power_iterations`` steps;
    otherwise sigma is re-read from the stored ``u`` against the current
    matrix. Either way sigma = u^T mat v with v = mat^T u / |mat^T u|.
    """
    mat = np.asarray(mat, dtype=np.float64)
    u = state.u.astype(np.float64)
    if update:
        for _ in range(state.n_power_iterations):
            v = _normalize(mat.T @ u, eps)
            u = _normalize(mat @ v, eps)
        state.u[...] = u
        u = state.u.astype(np.float64)
    v = _normalize(mat.T @ u, eps)
    sigma = float(u @ mat @ v)
    if sigma < eps:
        logger.warning("spectral norm estimate %.3g clamped to %.3g (zero weight?)", sigma, eps)
        sigma = eps
    state.sigma = sigma
    return sigma


def spectral_normalize(w, state, update=True, eps=1e-12):
    """Return ``w / sigma(w)``; sigma is a constant for the backward pass."""
    sigma = estimate_sigma(as_matrix(w.data), state, update, eps)
    return scale(w, 1.0 / sigma)

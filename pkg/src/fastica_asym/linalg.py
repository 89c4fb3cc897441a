"""Small dense symmetric-matrix kernels."""

from __future__ import annotations

import numpy as np

SYMMETRY_TOL = 1e-12


class SingularCovarianceError(np.linalg.LinAlgError):
    """Matrix is not (numerically) positive definite."""


def _check_symmetric(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return M


def inv_sqrt(M: np.ndarray, eig_floor: float | None = None) -> np.ndarray:
    """Symmetric inverse square root ``M^{-1/2}`` of an SPD matrix.

    Eigenvalues at or below ``eig_floor`` (default ``1e-12 * lambda_max``) raise
    :class:`SingularCovarianceError`.
    """
    M = _check_symmetric(M)
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    floor = 1e-12 * max(lam[-1], 0.0) if eig_floor is None else eig_floor
    if lam[0] <= floor or lam[-1] <= 0:
        raise SingularCovarianceError(
            f"matrix is not positive definite (min eigenvalue {lam[0]:.3g}, floor {floor:.3g})")
    R = (V / np.sqrt(lam)) @ V.T
    return 0.5 * (R + R.T)


def sqrtm_spd(M: np.ndarray) -> np.ndarray:
    M = _check_symmetric(M)
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    if lam[0] < 0:
        raise SingularCovarianceError("matrix has a negative eigenvalue")
    R = (V * np.sqrt(lam)) @ V.T
    return 0.5 * (R + R.T)


def sym_orth(W: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor ``(W W^T)^{-1/2} W``."""
    W = np.asarray(W, dtype=float)
    try:
        return inv_sqrt(W @ W.T) @ W
    except SingularCovarianceError:
        raise np.linalg.LinAlgError("sym_orth: W is rank deficient") from None


def covariance(data: np.ndarray, center="empirical") -> np.ndarray:
    """``(1/N) sum (y - c)(y - c)^T`` over the columns of ``data``.

    ``center`` is either a length-``d`` vector or ``"empirical"`` for the sample mean.
    The 1/N normalization is deliberate.
    """
    data = np.asarray(data, dtype=float)
    if isinstance(center, str):
        if center != "empirical":
            raise ValueError(f"center must be a vector or 'empirical', got {center!r}")
        c = data.mean(axis=1)
    else:
        c = np.asarray(center, dtype=float)
    yc = data - c[:, None]
    # elementwise products + pairwise summation: fixed reduction order, no BLAS threading
    C = (yc[:, None, :] * yc[None, :, :]).mean(axis=2)
    return 0.5 * (C + C.T)

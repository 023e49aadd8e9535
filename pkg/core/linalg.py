"""Symmetric positive-definite factorizations shared by the backward pass and the box-QP."""
import numpy as np
from scipy import linalg

from .exceptions import NotPositiveDefinite


def symmetrize(matrix):
    return 0.5 * (matrix + matrix.T)


def spd_factor(matrix, timestep=None, block='controls'):
    """
    Cholesky-factor ``matrix`` or raise :class:`NotPositiveDefinite`.

    The attempted decomposition is the positive-definiteness test; no
    eigenvalues are computed. Empty matrices factor trivially.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return None
    if not np.all(np.isfinite(matrix)):
        raise NotPositiveDefinite(timestep, block)
    try:
        return linalg.cho_factor(matrix, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(timestep, block) from exc


def spd_solve(factor, rhs):
    """Solve with a factor from :func:`spd_factor` (``rhs`` may be a vector or a matrix)."""
    rhs = np.asarray(rhs, dtype=float)
    if factor is None or rhs.size == 0:
        return np.zeros_like(rhs)
    return linalg.cho_solve(factor, rhs, check_finite=False)


def is_positive_definite(matrix):
    try:
        spd_factor(matrix)
    except NotPositiveDefinite:
        return False
    return True

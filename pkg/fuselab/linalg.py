"""
Small dense linear algebra helpers shared by the filters and the fusion rules.

Nothing here forms an explicit inverse unless the caller genuinely needs the matrix itself;
solves go through a factorization.
"""
from __future__ import annotations

import typing

import numpy as np
from scipy import linalg

from fuselab.exceptions import NotPositiveDefiniteError

SYMMETRY_RTOL = 1e-9


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def symmetry_tolerance(matrix: np.ndarray) -> float:
    """
    The trace scaled tolerance used for every "symmetric positive semidefinite" check.

    >>> symmetry_tolerance(np.zeros((2, 2)))
    1e-09
    """
    matrix = np.atleast_2d(matrix)
    n = matrix.shape[0]
    return SYMMETRY_RTOL * (1.0 + float(np.trace(np.abs(matrix))) / n)


def min_eigenvalue(matrix: np.ndarray) -> float:
    return float(linalg.eigvalsh(symmetrize(np.atleast_2d(matrix)))[0])


def is_symmetric(matrix: np.ndarray) -> bool:
    matrix = np.atleast_2d(matrix)
    if matrix.shape[0] != matrix.shape[1]:
        return False
    return bool(np.max(np.abs(matrix - matrix.T), initial=0.0) <= symmetry_tolerance(matrix))


def is_psd(matrix: np.ndarray) -> bool:
    matrix = np.atleast_2d(matrix)
    return is_symmetric(matrix) and min_eigenvalue(matrix) >= -symmetry_tolerance(matrix)


def is_pd(matrix: np.ndarray) -> bool:
    matrix = np.atleast_2d(matrix)
    if not is_symmetric(matrix):
        return False
    try:
        linalg.cholesky(symmetrize(matrix), lower=True)
    except linalg.LinAlgError:
        return False
    return True


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """
    A square root factor L with L Lᵀ = matrix that tolerates singular (semidefinite) input.

    >>> L = psd_sqrt(np.diag([4.0, 0.0]))
    >>> np.allclose(L @ L.T, np.diag([4.0, 0.0]))
    True
    """
    values, vectors = linalg.eigh(symmetrize(np.atleast_2d(matrix)))
    return vectors * np.sqrt(np.clip(values, 0.0, None))


def spd_factor(matrix: np.ndarray, sensor: typing.Optional[int] = None) -> typing.Tuple[np.ndarray, bool]:
    """
    Cholesky factor a symmetric positive definite matrix for `cho_solve`.
    :param matrix: The matrix to factorize.
    :param sensor: (Optional) sensor index carried into the error for diagnostics.
    :return: The `(factor, lower)` pair scipy's `cho_solve` expects.
    """
    try:
        return linalg.cho_factor(symmetrize(np.atleast_2d(matrix)), lower=True)
    except linalg.LinAlgError as exc:
        where = f" for sensor {sensor}" if sensor is not None else ""
        raise NotPositiveDefiniteError(f"matrix is not positive definite{where}", sensor=sensor) from exc


def spd_logdet(factor: typing.Tuple[np.ndarray, bool]) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def spd_inverse(factor: typing.Tuple[np.ndarray, bool]) -> np.ndarray:
    n = factor[0].shape[0]
    return symmetrize(linalg.cho_solve(factor, np.eye(n)))

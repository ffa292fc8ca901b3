"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import NonPositiveMetric, NotHermitian

HERMITIAN_ATOL = 1e-12
METRIC_EIG_MIN = 1e-10


def check_hermitian(A, n=None, name="matrix", atol=HERMITIAN_ATOL):
    """Return ``A`` as a complex ``(n, n)`` array, raising if it is not Hermitian.

    Small asymmetries below ``atol`` are symmetrized away so downstream
    eigensolvers see an exactly Hermitian input.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim == 0 and (n is None or n == 1):
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise NotHermitian(f"{name} must be a square matrix, got shape {A.shape}")
    if n is not None and A.shape[0] != n:
        raise NotHermitian(f"{name} must be {n}x{n}, got {A.shape[0]}x{A.shape[1]}")
    if not np.all(np.isfinite(A)):
        raise NotHermitian(f"{name} has non-finite entries")
    if np.max(np.abs(A - A.conj().T)) > atol:
        raise NotHermitian(f"{name} is not Hermitian within {atol:g}")
    return 0.5 * (A + A.conj().T)


def check_hermitian_stack(A, n=None, name="matrices"):
    """Validate a stack of Hermitian matrices of shape ``(..., n, n)``."""
    A = np.asarray(A, dtype=complex)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise NotHermitian(f"{name} must have shape (..., n, n), got {A.shape}")
    if n is not None and A.shape[-1] != n:
        raise NotHermitian(f"{name} must have trailing shape ({n}, {n})")
    AH = np.swapaxes(A, -1, -2).conj()
    if A.size and np.max(np.abs(A - AH)) > HERMITIAN_ATOL * max(1.0, np.max(np.abs(A))):
        raise NotHermitian(f"{name} are not Hermitian")
    return 0.5 * (A + AH)


def check_metric(omega, n=None):
    """Validate a positive-definite Hermitian metric; returns it as an array."""
    omega = check_hermitian(omega, n=n, name="omega")
    lo = np.linalg.eigvalsh(omega)[0]
    if lo <= METRIC_EIG_MIN:
        raise NonPositiveMetric(
            f"metric must be positive definite (smallest eigenvalue {lo:.3g})")
    return omega


def inverse_sqrt(omega):
    """Hermitian inverse square root of a positive-definite matrix."""
    w, U = np.linalg.eigh(omega)
    return (U / np.sqrt(w)) @ U.conj().T


def is_positive_definite(A, tol=0.0):
    return bool(np.linalg.eigvalsh(A)[0] > tol)

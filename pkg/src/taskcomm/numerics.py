"""Complex linear-algebra kernels shared by every other module.

All matrices are dense numpy arrays of dtype complex128.  Hermitian
positive (semi-)definite arguments are expected to be numerically
Hermitian; functions that build such matrices themselves symmetrize the
result to scrub roundoff.  Operations are pure and safe to call from
multiple threads.
"""

import numpy as np
import scipy.linalg as la


class NotPositiveDefinite(Exception):
    """A Cholesky factorization failed on a supposedly positive definite matrix."""


class DimensionMismatch(Exception):
    """Operand shapes are inconsistent."""


def psd_tolerance(A):
    """Eigenvalue scale below which a Hermitian PSD matrix counts as singular.

    Fixed at 1e-10 * trace / dim, so the threshold follows the matrix scale.
    """
    A = np.asarray(A)
    return 1e-10 * abs(np.trace(A).real) / A.shape[0]


def hermitian_part(A):
    """Return (A + A^H) / 2, scrubbing roundoff off a nominally Hermitian matrix."""
    A = np.asarray(A, dtype=complex)
    return 0.5 * (A + A.conj().T)


def _cholesky_lower(A):
    A = np.asarray(A, dtype=complex)
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix contains non-finite entries")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"Cholesky failed on {A.shape[0]}x{A.shape[1]} matrix"
        ) from exc


def logdet_hpd(A):
    """log det(A) for Hermitian positive definite A, via Cholesky.

    Returns the sum of 2*log of the Cholesky diagonal, which is exact up to
    roundoff and never overflows for representable determinants.

    Raises NotPositiveDefinite if the factorization fails.
    """
    L = _cholesky_lower(A)
    return 2.0 * float(np.sum(np.log(np.diag(L).real)))


def hermitian_solve(A, B):
    """Solve A X = B for Hermitian positive definite A.

    B may be a vector or a matrix with A.shape[0] rows.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch(f"A is {A.shape}, B is {B.shape}")
    L = _cholesky_lower(A)
    return la.cho_solve((L, True), B)


def hpd_inverse(A):
    """Inverse of a Hermitian positive definite matrix, symmetrized."""
    A = np.asarray(A, dtype=complex)
    return hermitian_part(hermitian_solve(A, np.eye(A.shape[0], dtype=complex)))


def kron(A, B):
    """Kronecker product with entry (i*Br + k, j*Bc + l) = A[i,j] * B[k,l]."""
    return np.kron(np.asarray(A, dtype=complex), np.asarray(B, dtype=complex))


def vec(A):
    """Column-stack a matrix into a vector (column-major order)."""
    return np.asarray(A, dtype=complex).reshape(-1, order="F")


def devec(v, rows, cols):
    """Inverse of vec: reshape a length rows*cols vector back into a matrix."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    if v.size != rows * cols:
        raise DimensionMismatch(f"vector of length {v.size} cannot fill {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def matrix_sqrt_psd(A):
    """Hermitian square root of a Hermitian PSD matrix.

    Uses an eigendecomposition; tiny negative eigenvalues produced by
    roundoff (or by genuinely rank-deficient inputs) are clamped to zero
    rather than raising, so degenerate covariances are handled.
    """
    A = np.asarray(A, dtype=complex)
    w, Q = np.linalg.eigh(A)
    w = np.clip(w, 0.0, None)
    S = (Q * np.sqrt(w)) @ Q.conj().T
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite("matrix square root produced non-finite entries")
    return hermitian_part(S)


def max_abs_row_sum(A):
    """max_i sum_j |a_ij| (complex modulus), for square A.

    For Hermitian PSD A this upper-bounds the largest eigenvalue.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {A.shape}")
    out = float(np.abs(A).sum(axis=1).max())
    if not np.isfinite(out):
        raise ValueError("matrix contains non-finite entries")
    return out

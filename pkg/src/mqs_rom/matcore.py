"""Dense and sparse linear-algebra kernels.

All rank decisions go through one relative singular-value threshold
(``DEFAULT_RANK_TOL`` times the largest singular value), so kernel and image
bases computed anywhere in the package agree on dimensions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractViolation, FactorizationError, ParameterError

DEFAULT_RANK_TOL = 1e-10
SYMMETRY_TOL = 1e-12
# above this many columns the pivoted-QR route is used for kernels/images
QR_THRESHOLD = 2000


@dataclass(frozen=True)
class OrthonormalBasis:
    """Orthonormal columns spanning a kernel or image, with the tolerance used."""

    matrix: np.ndarray
    tol: float
    singular_values: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def to_dense(M) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


def _check_tol(tol):
    if not (0.0 < tol < 1.0):
        raise ParameterError(f"rank tolerance must lie in (0, 1), got {tol!r}")


def _numerical_rank(s: np.ndarray, tol: float) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def _svd_split(M: np.ndarray, tol: float):
    """Right singular vectors split into (image of M^T, kernel of M)."""
    rows, cols = M.shape
    if rows == 0 or cols == 0 or not np.any(M):
        return np.zeros((cols, 0)), np.eye(cols), np.zeros(0)
    _, s, vt = sla.svd(M, full_matrices=True, lapack_driver="gesdd")
    rank = _numerical_rank(s, tol)
    return vt[:rank].T.copy(), vt[rank:].T.copy(), s


def _qr_split(M: np.ndarray, tol: float):
    """Same split as ``_svd_split`` via column-pivoted QR of M^T."""
    rows, cols = M.shape
    if rows == 0 or cols == 0 or not np.any(M):
        return np.zeros((cols, 0)), np.eye(cols), np.zeros(0)
    q, r, _ = sla.qr(M.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = _numerical_rank(diag, tol)
    return q[:, :rank].copy(), q[:, rank:].copy(), diag


def _split(M, tol, method):
    _check_tol(tol)
    D = to_dense(M)
    if method == "auto":
        method = "qr" if D.shape[1] > QR_THRESHOLD else "svd"
    if method == "svd":
        return _svd_split(D, tol)
    if method == "qr":
        return _qr_split(D, tol)
    raise ParameterError(f"unknown rank-revealing method {method!r}")


def kernel_basis(M, tol: float = DEFAULT_RANK_TOL, method: str = "auto") -> OrthonormalBasis:
    """Orthonormal basis of ker(M) at relative tolerance ``tol``."""
    _, ker, s = _split(M, tol, method)
    return OrthonormalBasis(ker, tol, s)


def image_basis(M, tol: float = DEFAULT_RANK_TOL, method: str = "auto") -> OrthonormalBasis:
    """Orthonormal basis of the column space of M at relative tolerance ``tol``.

    Computed from the rank-revealing factorization of M^T, so that
    ``image_basis(M.T).dim + kernel_basis(M).dim == M.shape[1]``.
    """
    MT = M.T if sp.issparse(M) else np.asarray(M, dtype=float).T
    im, _, s = _split(MT, tol, method)
    return OrthonormalBasis(im, tol, s)


def relative_asymmetry(M) -> float:
    D = to_dense(M)
    nrm = np.linalg.norm(D)
    if nrm == 0.0:
        return 0.0
    return float(np.linalg.norm(D - D.T) / nrm)


def symmetrize(M) -> np.ndarray:
    """Check symmetry to ``SYMMETRY_TOL`` and return (M + M^T)/2 as a dense array."""
    D = to_dense(M)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {D.shape}")
    asym = relative_asymmetry(D)
    if asym > SYMMETRY_TOL:
        raise ContractViolation(f"matrix is not symmetric (relative asymmetry {asym:.3e})")
    return 0.5 * (D + D.T)


def sym_eig_extreme(M, vectors: bool = False):
    """Smallest and largest eigenvalue of a symmetric matrix.

    With ``vectors=True`` the corresponding unit eigenvectors are returned
    as a second tuple ``(v_min, v_max)``.
    """
    S = symmetrize(M)
    n = S.shape[0]
    if n == 0:
        raise ParameterError("empty matrix has no eigenvalues")
    if vectors:
        w, v = sla.eigh(S)
        return (float(w[0]), float(w[-1])), (v[:, 0], v[:, -1])
    w = sla.eigh(S, eigvals_only=True)
    return float(w[0]), float(w[-1])


def thin_svd(M):
    """Economy SVD ``M = U diag(s) Vt`` with non-increasing ``s``."""
    D = to_dense(M)
    try:
        return sla.svd(D, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return sla.svd(D, full_matrices=False, lapack_driver="gesvd")


def spectral_norm(M) -> float:
    D = to_dense(M)
    if D.size == 0:
        return 0.0
    return float(thin_svd(D)[1][0])


def sym_sqrt_inv(M) -> np.ndarray:
    """M^{-1/2} of a symmetric positive definite matrix via eigendecomposition."""
    S = symmetrize(M)
    if S.shape[0] == 0:
        return np.zeros((0, 0))
    w, v = sla.eigh(S)
    if w[0] <= 0.0:
        raise FactorizationError(
            f"matrix is not positive definite (smallest eigenvalue {w[0]:.3e})",
            pivot_index=0, pivot_value=float(w[0]))
    return (v / np.sqrt(w)) @ v.T


def solve_spd(M, b):
    """Solve ``M x = b`` for symmetric positive definite M (Cholesky)."""
    D = to_dense(M)
    c, info = sla.lapack.dpotrf(D, lower=False, clean=True)
    if info > 0:
        raise FactorizationError(
            f"Cholesky failed: leading minor {info} is not positive definite",
            pivot_index=info - 1, pivot_value=float(D[info - 1, info - 1]))
    if info < 0:
        raise ParameterError(f"illegal argument {-info} passed to dpotrf")
    return sla.cho_solve((c, False), np.asarray(b, dtype=float))


class LUSolver:
    """Reusable LU factorization of a square matrix (sparse or dense)."""

    def __init__(self, M, pivot_tol: float = 1e-14):
        self.sparse = sp.issparse(M)
        if self.sparse:
            A = sp.csc_matrix(M)
            try:
                # symmetric-pattern ordering with mild diagonal preference; the
                # iteration matrices here are structurally symmetric
                self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)
            except RuntimeError as exc:
                raise FactorizationError(f"sparse LU failed: {exc}") from exc
            udiag = np.abs(self._lu.U.diagonal())
            scale = abs(A).max() if A.nnz else 0.0
        else:
            A = np.asarray(M, dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ParameterError(f"LU needs a square matrix, got shape {A.shape}")
            with warnings.catch_warnings():
                # an exactly singular pivot is reported below as FactorizationError
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu = sla.lu_factor(A, check_finite=True)
            udiag = np.abs(np.diag(self._lu[0]))
            scale = np.abs(A).max() if A.size else 0.0
        if udiag.size:
            k = int(np.argmin(udiag))
            if udiag[k] <= pivot_tol * max(scale, np.finfo(float).tiny):
                raise FactorizationError(
                    f"matrix is numerically singular: pivot {k} has magnitude {udiag[k]:.3e}",
                    pivot_index=k, pivot_value=float(udiag[k]))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.sparse:
            return self._lu.solve(b)
        return sla.lu_solve(self._lu, b)


def solve_lu(M, b):
    """Solve ``M x = b`` for square nonsingular M via (sparse) LU."""
    return LUSolver(M).solve(b)

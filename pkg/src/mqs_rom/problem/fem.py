"""Block-structured FEM problem data shared by the 2D and 3D-type generators.

Both discretizations are described by the same ingredients:

* a discrete curl ``Cd`` whose columns are ordered conducting unknowns first,
* a set of *flux elements*.  Element ``e`` owns a group of rows of ``Cd``,
  a scale ``s_e`` and a volume ``vol_e``.  Its flux density is
  ``b_e = s_e * (Cd a)[rows_e]`` and it contributes
  ``vol_e * s_e**2 * nu(|b_e|)`` to the diagonal reluctivity matrix on its rows,

so that ``K(a) = Cd^T M_nu(Cd a) Cd`` holds exactly.  For P1 triangles an
element is one triangle with two gradient rows; for the staggered-grid
problem an element is the half of a face lying in one adjacent cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .. import matcore
from ..errors import IngestionError, StructuralError
from .reluctivity import ReluctivityCurve


class _TripleProductAssembler:
    """Fixed-pattern assembly of ``Cd^T D Cd`` for element-block matrices ``D``.

    ``D`` is given by its stacked ``d x d`` element blocks on a fixed subset
    of elements.  The sparse pattern of the product and a linear map from the
    block values to its data array are built once, so every later assembly
    is a single sparse matrix-vector product.
    """

    def __init__(self, Cd, elem_rows, n):
        Cd = sp.csr_matrix(Cd)
        Cd.sort_indices()
        nnz_row = np.diff(Cd.indptr)
        w = max(int(nnz_row.max()), 1) if nnz_row.size else 1
        nf = Cd.shape[0]
        cols = np.zeros((nf, w), dtype=np.int64)
        vals = np.zeros((nf, w))
        for r in range(w):
            has = nnz_row > r
            idx = Cd.indptr[:-1][has] + r
            cols[has, r] = Cd.indices[idx]
            vals[has, r] = Cd.data[idx]
        ne, d = elem_rows.shape
        # block entry k = (e, i, j) couples rows ri = rows[e, i], rj = rows[e, j]
        ri = np.repeat(elem_rows, d, axis=1).ravel()
        rj = np.tile(elem_rows, (1, d)).ravel()
        k = np.arange(ri.size)
        I = cols[ri][:, :, None] + np.zeros((1, 1, w), dtype=np.int64)
        J = cols[rj][:, None, :] + np.zeros((1, w, 1), dtype=np.int64)
        V = vals[ri][:, :, None] * vals[rj][:, None, :]
        K = np.broadcast_to(k[:, None, None], V.shape)
        keep = V.ravel() != 0
        lin = (I.ravel() * n + J.ravel())[keep]
        uniq, pos = np.unique(lin, return_inverse=True)
        self.P = sp.csr_matrix((V.ravel()[keep], (pos, K.ravel()[keep])), shape=(uniq.size, ri.size))
        self.rows = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(self.rows, minlength=n))]).astype(np.int32)
        self.n = n

    def assemble(self, blocks) -> sp.csr_matrix:
        data = self.P @ np.asarray(blocks, dtype=float).ravel()
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class FemProblem:
    """Matrices of the semidiscrete field/circuit DAE.

    Attributes
    ----------
    n1, n2, m : int
        Conducting unknowns, non-conducting unknowns and ports.
    M11 : sparse (n1, n1)
        Conductivity matrix restricted to the conducting unknowns (SPD).
    Cd : sparse (n_f, n1 + n2)
        Discrete curl ``[C1 C2]``.
    Upsilon : ndarray (n_f, m)
        Winding data with ``X = Cd^T Upsilon``.
    R : ndarray (m, m)
        Coil resistances (SPD).
    curve : ReluctivityCurve
    elem_rows, elem_scale, elem_vol, elem_cond : ndarray
        Flux-element description (see module docstring).
    dimension : str
        ``"2d"`` or ``"3d"``.
    meta : dict
        Free-form generator metadata (grid sizes, geometry).
    """

    n1: int
    n2: int
    m: int
    M11: sp.csr_matrix
    Cd: sp.csr_matrix
    Upsilon: np.ndarray
    R: np.ndarray
    curve: ReluctivityCurve
    elem_rows: np.ndarray
    elem_scale: np.ndarray
    elem_vol: np.ndarray
    elem_cond: np.ndarray
    dimension: str = "2d"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "M11", sp.csr_matrix(self.M11, dtype=float))
        object.__setattr__(self, "Cd", sp.csr_matrix(self.Cd, dtype=float))
        object.__setattr__(self, "Upsilon", np.asarray(matcore.to_dense(self.Upsilon), dtype=float))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        rows = np.asarray(self.elem_rows, dtype=np.int64)
        if rows.ndim == 1:
            rows = rows[:, None]
        object.__setattr__(self, "elem_rows", rows)
        object.__setattr__(self, "elem_scale", np.asarray(self.elem_scale, dtype=float))
        object.__setattr__(self, "elem_vol", np.asarray(self.elem_vol, dtype=float))
        object.__setattr__(self, "elem_cond", np.asarray(self.elem_cond, dtype=bool))
        self._check_shapes()
        Cdc = self.Cd.tocsc()
        X = np.asarray(Cdc.T @ self.Upsilon)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "C1", Cdc[:, :self.n1].tocsr())
        object.__setattr__(self, "C2", Cdc[:, self.n1:].tocsr())
        w = self.elem_vol * self.elem_scale ** 2
        object.__setattr__(self, "_w_geom", w)
        object.__setattr__(self, "Mf_diag", self._scatter_rows(w))
        object.__setattr__(self, "Mf1_diag", self._scatter_rows(np.where(self.elem_cond, w, 0.0)))
        self._check_conducting_support()

    # -- basic shapes -----------------------------------------------------
    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def n_faces(self) -> int:
        return self.Cd.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elem_rows.shape[0]

    @property
    def X1(self) -> np.ndarray:
        return self.X[:self.n1]

    @property
    def X2(self) -> np.ndarray:
        return self.X[self.n1:]

    @property
    def Mf(self) -> sp.csr_matrix:
        return sp.diags(self.Mf_diag).tocsr()

    @property
    def Mf1(self) -> sp.csr_matrix:
        return sp.diags(self.Mf1_diag).tocsr()

    def _check_shapes(self):
        n = self.n1 + self.n2
        if self.n1 < 1 or self.n2 < 1 or self.m < 1:
            raise StructuralError(f"need n1, n2, m >= 1, got {self.n1}, {self.n2}, {self.m}")
        if self.M11.shape != (self.n1, self.n1):
            raise StructuralError(f"M11 has shape {self.M11.shape}, expected {(self.n1, self.n1)}")
        if self.Cd.shape[1] != n:
            raise StructuralError(f"Cd has {self.Cd.shape[1]} columns, expected {n}")
        if self.Upsilon.shape != (self.Cd.shape[0], self.m):
            raise StructuralError(f"Upsilon has shape {self.Upsilon.shape}, expected "
                                  f"{(self.Cd.shape[0], self.m)}")
        if self.R.shape != (self.m, self.m):
            raise StructuralError(f"R has shape {self.R.shape}, expected {(self.m, self.m)}")
        ne = self.elem_rows.shape[0]
        for name in ("elem_scale", "elem_vol", "elem_cond"):
            if getattr(self, name).shape != (ne,):
                raise StructuralError(f"{name} must have one entry per element")
        if ne == 0:
            raise StructuralError("problem has no flux elements")
        if self.elem_rows.min() < 0 or self.elem_rows.max() >= self.Cd.shape[0]:
            raise StructuralError("element row index out of range")
        if np.any(self.elem_vol <= 0) or np.any(self.elem_scale == 0):
            raise StructuralError("element volumes must be positive and scales nonzero")
        if self.dimension not in ("2d", "3d"):
            raise StructuralError(f"unknown dimension flag {self.dimension!r}")

    def _check_conducting_support(self):
        # conducting elements may only see conducting unknowns; otherwise the
        # nonlinear block would leak into K12/K22
        rows = np.unique(self.elem_rows[self.elem_cond])
        if rows.size and self.C2[rows].nnz:
            raise StructuralError("conducting flux elements touch non-conducting unknowns")

    def _scatter_rows(self, per_elem):
        out = np.zeros(self.n_faces)
        d = self.elem_rows.shape[1]
        np.add.at(out, self.elem_rows.ravel(), np.repeat(per_elem, d))
        return out

    # -- element kernels --------------------------------------------------
    def element_flux(self, a):
        """Per-element flux vectors ``b_e`` (n_el, d) and magnitudes."""
        a = np.asarray(a, dtype=float)
        if a.shape != (self.n,):
            raise StructuralError(f"state has shape {a.shape}, expected ({self.n},)")
        c = self.Cd @ a
        b = c[self.elem_rows] * self.elem_scale[:, None]
        return b, np.sqrt(np.einsum("ij,ij->i", b, b))

    def nu_row_weights(self, a, part: str = "all"):
        """Diagonal of ``M_nu(Cd a)`` restricted to a subset of elements.

        ``part`` is ``"all"``, ``"linear"`` (non-conducting elements, which do
        not depend on ``a``) or ``"nonlinear"`` (conducting elements).
        """
        if part == "linear":
            w = np.where(self.elem_cond, 0.0, self._w_geom * self.curve.nu_I)
            return self._scatter_rows(w)
        _, beta = self.element_flux(a)
        nu = self.curve.nu(beta, self.elem_cond)
        w = self._w_geom * nu
        if part == "nonlinear":
            w = np.where(self.elem_cond, w, 0.0)
        elif part != "all":
            raise ValueError(f"unknown part {part!r}")
        return self._scatter_rows(w)

    def curl_form(self, row_weights) -> sp.csr_matrix:
        """``Cd^T diag(row_weights) Cd``."""
        return (self.Cd.T @ sp.diags(row_weights) @ self.Cd).tocsr()

    def _element_blocks(self, a, mask):
        b, beta = self.element_flux(a)
        nu = self.curve.nu(beta, self.elem_cond)
        dnz = self.curve.dnu_over_z(beta, self.elem_cond)
        d = self.elem_rows.shape[1]
        w = self._w_geom[mask]
        # b = s c, so s^2 c c^T = b b^T
        return w[:, None, None] * (nu[mask][:, None, None] * np.eye(d)[None]
                                   + dnz[mask][:, None, None] * np.einsum("ei,ej->eij", b[mask], b[mask]))

    def _mask(self, part):
        if part == "all":
            return np.ones(self.n_elements, bool)
        if part == "nonlinear":
            return self.elem_cond.copy()
        if part == "linear":
            return ~self.elem_cond
        raise ValueError(f"unknown part {part!r}")

    def jacobian_curl(self, a, part: str = "all") -> sp.csr_matrix:
        """Jacobian ``Cd^T D(a) Cd`` of ``a -> K(a) a`` (restricted to ``part``).

        Uses a cached fixed-pattern assembler; equal to
        ``Cd.T @ jacobian_row_blocks(a, part) @ Cd``.
        """
        cache = self.__dict__.setdefault("_assemblers", {})
        if part not in cache:
            cache[part] = _TripleProductAssembler(self.Cd, self.elem_rows[self._mask(part)], self.n)
        return cache[part].assemble(self._element_blocks(a, self._mask(part)))

    def jacobian_row_blocks(self, a, part: str = "all") -> sp.csr_matrix:
        """Block-diagonal derivative of ``c -> M_nu(c) c`` at ``c = Cd a``.

        Each element contributes ``vol s^2 [nu I + (nu'(beta)/beta) s^2 c c^T]``
        on its rows.
        """
        mask = self._mask(part)
        d = self.elem_rows.shape[1]
        blocks = self._element_blocks(a, mask)
        rr = self.elem_rows[mask]
        I = np.repeat(rr, d, axis=1).ravel()
        J = np.tile(rr, (1, d)).ravel()
        D = sp.coo_matrix((blocks.ravel(), (I, J)), shape=(self.n_faces, self.n_faces))
        return D.tocsr()

    def stiffness_unit(self) -> sp.csr_matrix:
        """``K_L = Cd^T M_f Cd`` (unit reluctivity)."""
        return self.curl_form(self.Mf_diag)

    def stiffness_unit_conducting(self) -> sp.csr_matrix:
        """``K_{L,1} = C1^T M_{f,1} C1``."""
        return (self.C1.T @ sp.diags(self.Mf1_diag) @ self.C1).tocsr()

    def magnetic_energy(self, a, quadrature: str = "closed") -> float:
        """Magnetic energy ``sum_e vol_e * theta_e(|b_e|)``.

        ``quadrature="adaptive"`` evaluates each energy density by adaptive
        Simpson quadrature instead of the closed form.
        """
        _, beta = self.element_flux(a)
        if quadrature == "closed":
            dens = self.curve.energy_density(beta, self.elem_cond)
        elif quadrature == "adaptive":
            dens = np.array([self.curve.energy_density_quad(bb, bool(c))
                             for bb, c in zip(beta, self.elem_cond)])
        else:
            raise ValueError(f"unknown quadrature {quadrature!r}")
        return float(np.dot(self.elem_vol, dens))

    def max_flux(self, a) -> float:
        _, beta = self.element_flux(a)
        return float(np.max(beta[self.elem_cond])) if self.elem_cond.any() else 0.0

    # -- validation -------------------------------------------------------
    def kernel_C2(self, tol: float = matcore.DEFAULT_RANK_TOL):
        return matcore.kernel_basis(self.C2, tol)

    def validate(self, rank_tol: float = 1e-10, error=IngestionError):
        """Re-check the structural invariants; raise ``error`` on failure."""
        if matcore.relative_asymmetry(self.M11) > matcore.SYMMETRY_TOL:
            raise error("M11 is not symmetric")
        try:
            matcore.solve_spd(self.M11, np.ones(self.n1))
        except Exception as exc:
            raise error(f"M11 is not positive definite: {exc}") from exc
        if matcore.relative_asymmetry(self.R) > matcore.SYMMETRY_TOL:
            raise error("R is not symmetric")
        lam_min, _ = matcore.sym_eig_extreme(self.R)
        if lam_min <= 0:
            raise error(f"R is not positive definite (lambda_min = {lam_min:.3e})")
        s = matcore.thin_svd(self.X2)[1]
        if s.size < self.m or s[0] == 0 or s[-1] <= rank_tol * s[0]:
            raise error("X2 rank deficient: the winding matrix on non-conducting unknowns "
                        "must have full column rank")
        if np.any(self.Mf_diag <= 0):
            raise error("face mass matrix M_f is not positive definite")
        return True


def as_csr(M):
    return sp.csr_matrix(M, dtype=float)

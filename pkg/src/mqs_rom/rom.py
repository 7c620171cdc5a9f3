"""POD and POD-DEIM reduced models of the ODE form.

The POD basis acts on the conducting block only; the ``m`` current-coupled
coordinates of the ODE state are kept.  With the ODE recovery matrix
``U_ode`` the reduced model is the Galerkin projection with
``U = U_ode blockdiag(U_a1, I)``, so that the reduced state matrix
``A(x) = -U^T K(U x) U`` stays symmetric negative semidefinite and the
storage function of the full model restricts to the reduced one.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import matcore
from .errors import ConstructionError, DegenerateBasisError, ParameterError
from .problem.io import read_matrix_market, read_meta, write_matrix_market, write_meta
from .regularization import GalerkinSystem, OdeSystem

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class PodBasis:
    """Leading left singular vectors of a snapshot matrix."""

    matrix: np.ndarray
    singular_values: np.ndarray

    @property
    def r(self) -> int:
        return self.matrix.shape[1]

    def tail(self) -> float:
        """``sqrt(sum_{j > r} sigma_j^2)``."""
        return float(np.sqrt(np.sum(self.singular_values[self.r:] ** 2)))


def numerical_rank(sv, tol: float = matcore.DEFAULT_RANK_TOL) -> int:
    sv = np.asarray(sv)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def pod_basis(X, r: int | None = None, tol: float | None = None) -> PodBasis:
    """POD basis of the snapshot matrix ``X`` (one snapshot per column).

    Exactly one of ``r`` (fixed dimension) and ``tol`` must be given.  With
    ``tol`` the dimension is the smallest ``k`` with
    ``sigma_{k+1} / sigma_1 <= tol``.  A requested dimension larger than the
    numerical rank is clipped with a warning.
    """
    if (r is None) == (tol is None):
        raise ParameterError("give exactly one of r and tol")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.any(X):
        raise DegenerateBasisError("snapshot matrix is empty or zero")
    Uf, s, _ = matcore.thin_svd(X)
    rank = numerical_rank(s)
    if tol is not None:
        if tol <= 0:
            raise ParameterError("tol must be positive")
        ratio = np.append(s[1:], 0.0) / s[0]
        k = int(np.argmax(ratio <= tol)) + 1
    else:
        if r < 1:
            raise ParameterError("r must be at least 1")
        k = int(r)
    if k > rank:
        warnings.warn(f"requested dimension {k} exceeds the numerical rank {rank}; clipped",
                      RuntimeWarning, stacklevel=2)
        k = rank
    return PodBasis(matrix=np.ascontiguousarray(Uf[:, :k]), singular_values=s)


def _check_orthonormal(V, name):
    err = np.abs(V.T @ V - np.eye(V.shape[1])).max() if V.size else 0.0
    if err > ORTHO_TOL * max(1, V.shape[1]):
        raise ConstructionError(f"{name} is not orthonormal (max |V^T V - I| = {err:.3e})")


class RomPod(GalerkinSystem):
    """POD-reduced model with state ``[a1_hat; z]``.

    Parameters
    ----------
    ode : OdeSystem
    Ua1 : ndarray (n1, r)
        Orthonormal POD basis of the conducting block.
    """

    kind = "pod"

    def __init__(self, ode: OdeSystem, Ua1):
        Ua1 = np.asarray(Ua1, dtype=float)
        n1, m = ode.dae.n1, ode.dae.m
        if Ua1.ndim != 2 or Ua1.shape[0] != n1 or not 1 <= Ua1.shape[1] <= n1:
            raise ParameterError(f"Ua1 has shape {Ua1.shape}, expected ({n1}, r) with 1 <= r <= {n1}")
        _check_orthonormal(Ua1, "Ua1")
        r = Ua1.shape[1]
        T = sla.block_diag(Ua1, np.eye(m))
        super().__init__(ode.dae, ode.U @ T, Ua1, ode.C @ T, r)
        self.ode = ode
        self.Ua1 = Ua1
        self.Y2, self.S = ode.Y2, ode.S
        lam = matcore.sym_eig_extreme(self.E)[0]
        if lam <= 0:
            raise ConstructionError(f"reduced E is not positive definite (lambda_min = {lam:.3e})")

    def E_identity_residual(self) -> float:
        """Relative gap between ``E`` and ``blockdiag(Ua1^T M11 Ua1, 0) + U^T B_cal R B_cal^T U``."""
        dae = self.dae
        M = np.zeros_like(self.E)
        M[:self.r, :self.r] = self.Ua1.T @ (dae.problem.M11 @ self.Ua1)
        UB = self.U.T @ dae.B_cal
        ref = M + UB @ dae.R @ UB.T
        return float(np.linalg.norm(self.E - ref) / max(np.linalg.norm(ref), np.finfo(float).tiny))

    def reconstruct(self, x):
        """ODE state ``[Ua1 a1_hat; z]`` of a reduced state."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return np.hstack([x[:, :self.r] @ self.Ua1.T, x[:, self.r:]])
        return np.concatenate([self.Ua1 @ x[:self.r], x[self.r:]])


def build_pod(ode: OdeSystem, Ua1) -> RomPod:
    rom = RomPod(ode, Ua1)
    res = rom.E_identity_residual()
    if res > 1e-10:
        raise ConstructionError(f"reduced E violates the projection identity (residual {res:.3e})")
    return rom


def deim_select(Uf) -> np.ndarray:
    """Greedy DEIM interpolation indices for the columns of ``Uf``.

    Ties in ``argmax`` resolve to the smallest row index.
    """
    Uf = np.asarray(Uf, dtype=float)
    if Uf.ndim == 1:
        Uf = Uf[:, None]
    n, ell = Uf.shape
    if ell == 0 or ell > n:
        raise ParameterError(f"cannot select {ell} indices from {n} rows")
    idx = []
    for i in range(ell):
        u = Uf[:, i]
        if i == 0:
            res = u
        else:
            c = sla.solve(Uf[idx, :i], u[idx])
            res = u - Uf[:, :i] @ c
        scale = max(np.abs(u).max(), np.finfo(float).tiny)
        k = int(np.argmax(np.abs(res)))
        if np.abs(res[k]) <= 1e-14 * scale or not np.any(u):
            raise DegenerateBasisError(f"DEIM column {i} is zero or linearly dependent on the previous ones")
        idx.append(k)
    return np.array(idx, dtype=np.int64)


class SampledNonlinearity:
    """Evaluate selected rows of ``f1`` (and of its Jacobian) from local data.

    Only the conducting flux elements that touch the sampled unknowns are
    visited, and only the unknowns those elements depend on are read.
    """

    def __init__(self, dae, indices):
        p = dae.problem
        self.dae = dae
        self.indices = np.asarray(indices, dtype=np.int64)
        C1 = sp.csc_matrix(p.C1)
        faces = np.unique(C1[:, self.indices].tocoo().row)
        hit = np.isin(p.elem_rows, faces).any(axis=1) & p.elem_cond
        self.elements = np.flatnonzero(hit)
        rows = np.unique(p.elem_rows[self.elements])
        C1r = sp.csr_matrix(p.C1)[rows]
        self.deps = np.unique(C1r.tocoo().col)
        self.C_dep = sp.csr_matrix(C1r[:, self.deps])          # local rows x deps
        self.C_idx = sp.csr_matrix(C1r[:, self.indices])       # local rows x sampled
        pos = {r: i for i, r in enumerate(rows)}
        self.local_rows = np.vectorize(pos.get, otypes=[np.int64])(p.elem_rows[self.elements])
        self.scale = p.elem_scale[self.elements]
        self.wgeom = p._w_geom[self.elements]
        self.n_rows = rows.size

    @property
    def n_deps(self) -> int:
        return self.deps.size

    def _flux(self, a_dep):
        c = self.C_dep @ a_dep
        b = c[self.local_rows] * self.scale[:, None]
        return c, b, np.sqrt(np.einsum("ij,ij->i", b, b))

    def evaluate(self, a_dep):
        """``S^T f1(a1)`` given the dependency values ``a1[deps]``."""
        c, _, beta = self._flux(a_dep)
        curve = self.dae.problem.curve
        w = np.zeros(self.n_rows)
        d = self.local_rows.shape[1]
        np.add.at(w, self.local_rows.ravel(), np.repeat(self.wgeom * curve.nu_C(beta), d))
        return -(self.C_idx.T @ (w * c))

    def jacobian(self, a_dep):
        """Derivative of :meth:`evaluate` with respect to ``a1[deps]``."""
        _, b, beta = self._flux(a_dep)
        curve = self.dae.problem.curve
        d = self.local_rows.shape[1]
        blocks = self.wgeom[:, None, None] * (curve.nu_C(beta)[:, None, None] * np.eye(d)[None]
                                              + curve.dnu_C_over_z(beta)[:, None, None]
                                              * np.einsum("ei,ej->eij", b, b))
        I = np.repeat(self.local_rows, d, axis=1).ravel()
        J = np.tile(self.local_rows, (1, d)).ravel()
        D = sp.csr_matrix((blocks.ravel(), (I, J)), shape=(self.n_rows, self.n_rows))
        return -np.asarray((self.C_idx.T @ D @ self.C_dep).todense())


class RomDeim(RomPod):
    """POD-DEIM model: the POD nonlinearity is replaced by its DEIM interpolant."""

    kind = "deim"

    def __init__(self, pod: RomPod, Uf, indices=None):
        Uf = np.asarray(Uf, dtype=float)
        super().__init__(pod.ode, pod.Ua1)
        n1 = self.dae.n1
        if Uf.ndim != 2 or Uf.shape[0] != n1 or Uf.shape[1] < 1:
            raise ParameterError(f"Uf has shape {Uf.shape}, expected ({n1}, l)")
        _check_orthonormal(Uf, "Uf")
        self.Uf = Uf
        self.ell = Uf.shape[1]
        self.indices = deim_select(Uf) if indices is None else np.asarray(indices, dtype=np.int64)
        if self.indices.size != self.ell or np.unique(self.indices).size != self.ell:
            raise ParameterError("DEIM index set must hold l distinct rows")
        PU = Uf[self.indices]
        s = matcore.thin_svd(PU)[1]
        if s[-1] <= matcore.DEFAULT_RANK_TOL * s[0]:
            raise ConstructionError("S^T Uf is singular")
        self.cond = float(s[0] / s[-1])
        self.inv_norm = float(1.0 / s[-1])
        self.M_deim = self.Ua1.T @ Uf @ sla.inv(PU)
        self.sampler = SampledNonlinearity(self.dae, self.indices)
        self._Ua1_dep = self.Ua1[self.sampler.deps]
        log.info("DEIM l=%d, cond(S^T Uf)=%.3e", self.ell, self.cond)

    def f1_reduced(self, x1):
        return self.M_deim @ self.sampler.evaluate(self._Ua1_dep @ x1)

    def jac(self, x):
        J = self.A_l.copy()
        x1 = np.asarray(x, dtype=float)[:self.r]
        Js = self.sampler.jacobian(self._Ua1_dep @ x1)
        J[:self.r, :self.r] += self.M_deim @ Js @ self._Ua1_dep
        return J


def build_deim(pod: RomPod, Xf, ell: int | None = None, tol: float | None = None) -> RomDeim:
    """DEIM model from nonlinearity snapshots ``Xf`` with ``ell`` (or ``tol``) basis vectors."""
    basis = pod_basis(Xf, r=ell, tol=tol)
    rom = RomDeim(pod, basis.matrix)
    rom.f1_singular_values = basis.singular_values
    return rom


def eval_reduced_rhs(rom, x, u=None):
    """``A(x) x + B u`` for a reduced model (POD: exact projection; DEIM: interpolated)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (rom.n_state,):
        raise ParameterError(f"state has shape {x.shape}, expected ({rom.n_state},)")
    out = rom.rhs(x)
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape != (rom.m,):
            raise ParameterError(f"input has shape {u.shape}, expected ({rom.m},)")
        out = out + rom.B @ u
    return out


def save_rom(directory, pod: RomPod, deim: RomDeim | None = None) -> list[Path]:
    """Write the bases (Matrix Market), DEIM indices and reduced matrices."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = [write_matrix_market(d / "Ua1.mtx", pod.Ua1),
             write_matrix_market(d / "E.mtx", pod.E),
             write_matrix_market(d / "A_l.mtx", pod.A_l),
             write_matrix_market(d / "B.mtx", pod.B),
             write_matrix_market(d / "C.mtx", pod.C)]
    meta = {"r": pod.r, "m": pod.m}
    if deim is not None:
        files.append(write_matrix_market(d / "Uf.mtx", deim.Uf))
        np.savetxt(d / "deim_indices.txt", deim.indices, fmt="%d")
        files.append(d / "deim_indices.txt")
        meta.update({"ell": deim.ell, "cond_deim": deim.cond})
    write_meta(d / "meta", meta)
    files.append(d / "meta")
    return files


def load_rom(directory, ode: OdeSystem):
    """Rebuild ``(RomPod, RomDeim | None)`` from :func:`save_rom` output."""
    d = Path(directory)
    meta = read_meta(d / "meta")
    Ua1 = read_matrix_market(d / "Ua1.mtx").toarray()
    pod = build_pod(ode, Ua1)
    deim = None
    if "ell" in meta:
        Uf = read_matrix_market(d / "Uf.mtx").toarray()
        idx = np.atleast_1d(np.loadtxt(d / "deim_indices.txt", dtype=np.int64))
        deim = RomDeim(pod, Uf, idx)
    return pod, deim

"""Projection-based regularization, index certificate, condensed form and ODE form.

With ``Yhat`` an orthonormal basis of ``im(C2^T)`` the state is restricted to
``a = V1 x_r`` with ``V1 = blockdiag(I, Yhat)``; the components along
``ker(C2)`` appear in no equation and are set to zero.  The remaining
descriptor system ``E_r x_r' = A_r(x_r) x_r + B_r u`` is regular with index
one, and eliminating its algebraic part yields an ODE in ``n1 + m`` unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import matcore
from .errors import (AssumptionViolation, ConstructionError, IndexViolation,
                     StructuralError)
from .mqs_system import MqsDae

STRUCTURE_TOL = 1e-10


def _rel(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(a - b) / scale)


def sample_states(system, count: int = 3, seed: int = 42, flux: float = 1.0):
    """Random states of ``system`` scaled to a peak element flux density ``flux``.

    ``system`` needs ``n_state`` and ``lift``; keeping the flux in the
    physical range avoids overflow of the exponential reluctivity curve.
    """
    rng = np.random.default_rng(seed)
    problem = system.dae.problem
    out = []
    for _ in range(count):
        x = rng.standard_normal(system.n_state)
        _, beta = problem.element_flux(system.lift(x))
        peak = float(beta.max())
        out.append(x * (flux / peak) if peak > 0 else x)
    return out


class RegularizedSystem:
    """Regularized DAE ``E_r x' = A_r(x) x + B_r u``, ``y = C_r x``.

    Parameters
    ----------
    dae : MqsDae
    rank_tol : float
        Relative tolerance for all rank decisions.
    """

    kind = "regularized"

    def __init__(self, dae: MqsDae, rank_tol: float = matcore.DEFAULT_RANK_TOL):
        self.dae = dae
        p = dae.problem
        self.rank_tol = rank_tol
        n1, n2, m = p.n1, p.n2, p.m
        self.m = m
        lam_R = matcore.sym_eig_extreme(p.R)[0]
        if lam_R <= 0:
            raise AssumptionViolation(f"R must be symmetric positive definite (lambda_min = {lam_R:.3e})")
        sX2 = matcore.thin_svd(p.X2)[1]
        if sX2.size < m or sX2[0] == 0 or sX2[-1] <= rank_tol * sX2[0]:
            raise StructuralError("X2 rank deficient: winding matrix must have full column rank")

        self.Y_C2 = matcore.kernel_basis(p.C2, rank_tol).matrix
        self.k2 = self.Y_C2.shape[1]
        if self.k2 == 0:
            self.Yhat = np.eye(n2)
        else:
            self.Yhat = matcore.image_basis(p.C2.T, rank_tol).matrix
        if self.Yhat.shape[1] + self.k2 != n2:
            raise ConstructionError("kernel and image bases of C2 have inconsistent dimensions")
        self.n_r = n1 + self.Yhat.shape[1]
        self.n_state = self.n_r
        if self.k2 == 0:
            self.V1 = sp.identity(p.n, format="csr")
        else:
            self.V1 = sp.bmat([[sp.identity(n1), None],
                               [None, sp.csr_matrix(self.Yhat)]]).tocsr()
        self.sparse = self.k2 == 0
        V1 = self.V1
        self.E = (V1.T @ dae.E_cal @ V1).tocsr() if self.sparse else matcore.to_dense(V1.T @ dae.E_cal @ V1)
        self.E_dense = matcore.to_dense(self.E)
        self.B = np.asarray(V1.T @ dae.B_cal)
        YX2 = self.Yhat.T @ p.X2
        self.YX2 = YX2
        G = YX2.T @ YX2
        self.Zhat = YX2 @ sla.inv(G)
        self.Z = YX2 @ matcore.sym_sqrt_inv(G)
        self.Y = matcore.kernel_basis(YX2.T, rank_tol).matrix
        self.Y_sigma = np.vstack([np.zeros((n1, self.Y.shape[1])), self.Y])
        self.F_sigma = np.block([[np.eye(n1), p.X1], [np.zeros((self.Yhat.shape[1], n1)), YX2]])
        self.F_nu = matcore.to_dense(V1.T @ p.Cd.T)
        self.M_sigmaR = sla.block_diag(matcore.to_dense(p.M11), dae.R_inv)
        self._A_lin_cols = None
        self._C = None
        self._cond = None

    # -- evaluation ------------------------------------------------------
    def lift(self, x):
        """Vector potential ``a = V1 x`` (free components set to zero)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return (self.V1 @ x.T).T
        return self.V1 @ x

    def A_r(self, x) -> np.ndarray:
        a = self.lift(x)
        return -matcore.to_dense(self.V1.T @ self.dae.assemble_K(a) @ self.V1)

    def rhs(self, x):
        """``h(x) = A_r(x) x``."""
        return -(self.V1.T @ self.dae.K_times(self.lift(x)))

    def jac(self, x):
        J = -(self.V1.T @ self.dae.jacobian_K(self.lift(x)) @ self.V1)
        return J.tocsr() if self.sparse else matcore.to_dense(J)

    def output(self, x):
        return np.asarray(x) @ self.C_r.T

    def storage(self, x) -> float:
        return self.dae.storage(self.lift(x))

    def zero_state(self):
        return np.zeros(self.n_r)

    # -- structural objects ------------------------------------------------
    @property
    def Q(self) -> np.ndarray:
        """Projector onto ker(E_r): ``blockdiag(0, Y Y^T)``."""
        return self.Y_sigma @ self.Y_sigma.T

    def G1(self, x) -> np.ndarray:
        return self.E_dense - matcore.to_dense(self.jac(x)) @ self.Q

    def _A_on_Ysigma(self):
        # A_r Y_sigma does not depend on the state: Y_sigma has no a1 part
        if self._A_lin_cols is None:
            self._A_lin_cols = self.A_r(np.zeros(self.n_r)) @ self.Y_sigma
        return self._A_lin_cols

    @property
    def Pi_inf(self) -> np.ndarray:
        Ys = self.Y_sigma
        if Ys.shape[1] == 0:
            return np.zeros((self.n_r, self.n_r))
        AYs = self._A_on_Ysigma()
        return Ys @ sla.solve(Ys.T @ AYs, AYs.T)

    @property
    def C_r(self) -> np.ndarray:
        if self._C is None:
            self._C = output_matrix(self, check=False)
        return self._C

    def algebraic_residual(self, x, u=None):
        """Residual of the algebraic constraints ``Y_sigma^T (A_r(x) x + B_r u)``."""
        r = self.Y_sigma.T @ self.rhs(x)
        if u is not None:
            r = r + self.Y_sigma.T @ self.B @ u
        return r

    def dump(self, directory, include_w: bool = True):
        """Write ``Yhat``, ``C_r`` and (optionally) ``W`` as Matrix Market files."""
        from pathlib import Path
        from .problem.io import write_matrix_market
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = [write_matrix_market(d / "Yhat.mtx", self.Yhat),
                 write_matrix_market(d / "Cr.mtx", self.C_r)]
        if include_w:
            files.append(write_matrix_market(d / "W.mtx", condensed_form(self).W))
        return files


def regularize(dae: MqsDae, rank_tol: float = matcore.DEFAULT_RANK_TOL) -> RegularizedSystem:
    """Project out ``ker(C2)`` and drop the trivial equations."""
    return RegularizedSystem(dae, rank_tol)


@dataclass
class IndexCertificate:
    sigma_min: float
    norm_E: float
    independence_residual: float
    passed: bool
    tol: float


def check_index_one(reg: RegularizedSystem, states=None, tol: float = 1e-10,
                    seed: int = 42, raise_on_fail: bool = True) -> IndexCertificate:
    """Nonsingularity and state independence of ``G1 = E_r - J_h(x) Q``.

    ``tol`` is relative to ``||E_r||_2``.
    """
    if states is None:
        states = sample_states(reg, 3, seed)
    Gs = [reg.G1(x) for x in states]
    indep = max((_rel(Gs[i], Gs[j]) for i in range(len(Gs)) for j in range(i + 1, len(Gs))),
                default=0.0)
    smin = min(float(matcore.thin_svd(G)[1][-1]) for G in Gs)
    nE = matcore.spectral_norm(reg.E_dense)
    ok = smin > tol * nE and indep <= STRUCTURE_TOL
    cert = IndexCertificate(smin, nE, indep, ok, tol)
    if raise_on_fail and not ok:
        raise IndexViolation(f"index-one certificate failed: sigma_min(G1) = {smin:.3e}, "
                             f"||E_r|| = {nE:.3e}, state dependence = {indep:.3e}")
    return cert


def check_regular_pencil(reg: RegularizedSystem, states=None, seed: int = 42) -> float:
    """Smallest singular value of ``[E_r; A_r(x)]`` over sampled states.

    Positive values certify ``ker(E_r) cap ker(A_r(x)) = {0}``.
    """
    if states is None:
        states = sample_states(reg, 3, seed)
    return min(float(matcore.thin_svd(np.vstack([reg.E_dense, reg.A_r(x)]))[1][-1])
               for x in states)


@dataclass
class CondensedForm:
    """Congruence ``W`` bringing ``(E_r, A_r)`` to block-diagonal form.

    ``W^T E_r W = diag(E11, I, 0)`` and ``W^T A_r(x) W = diag(A11(x), 0, -I)``.
    """

    W: np.ndarray
    n_s: int
    n_0: int
    n_inf: int
    E11: np.ndarray
    reg: RegularizedSystem

    def A11(self, x):
        W1 = self.W[:, :self.n_s]
        return W1.T @ self.reg.A_r(x) @ W1

    @property
    def blocks(self):
        return (self.n_s, self.n_0, self.n_inf)

    def E_pinv(self) -> np.ndarray:
        """Symmetric reflexive inverse ``W diag(E11^{-1}, I, 0) W^T``."""
        D = sla.block_diag(sla.inv(self.E11), np.eye(self.n_0), np.zeros((self.n_inf, self.n_inf)))
        Em = self.W @ D @ self.W.T
        return 0.5 * (Em + Em.T)

    def pattern_residuals(self, x):
        """Off-pattern / on-pattern Frobenius ratios for ``W^T E_r W`` and ``W^T A_r(x) W``."""
        out = []
        for M in (self.W.T @ self.reg.E_dense @ self.W, self.W.T @ self.reg.A_r(x) @ self.W):
            mask = np.zeros(M.shape, bool)
            o = 0
            for k in self.blocks:
                mask[o:o + k, o:o + k] = True
                o += k
            on = np.linalg.norm(M[mask])
            out.append(float(np.linalg.norm(M[~mask]) / max(on, np.finfo(float).tiny)))
        return tuple(out)


def condensed_form(reg: RegularizedSystem, states=None, seed: int = 42,
                   tol: float = STRUCTURE_TOL) -> CondensedForm:
    """Build and verify the condensed form at sampled states."""
    if reg._cond is not None and states is None:
        return reg._cond
    E = reg.E_dense
    Ynu = matcore.kernel_basis(reg.F_nu.T, reg.rank_tol).matrix
    Ysig = reg.Y_sigma
    AYs = reg._A_on_Ysigma()
    EYn = E @ Ynu
    W1 = matcore.kernel_basis(np.hstack([EYn, AYs]).T, reg.rank_tol).matrix
    n0, ninf = Ynu.shape[1], Ysig.shape[1]
    blocks = [W1]
    if n0:
        blocks.append(Ynu @ matcore.sym_sqrt_inv(Ynu.T @ EYn))
    if ninf:
        blocks.append(Ysig @ matcore.sym_sqrt_inv(-(Ysig.T @ AYs)))
    W = np.hstack(blocks)
    if W.shape != (reg.n_r, reg.n_r):
        raise ConstructionError(f"condensed form has {W.shape[1]} columns, expected {reg.n_r}")
    E11 = W1.T @ E @ W1
    cf = CondensedForm(W=W, n_s=W1.shape[1], n_0=n0, n_inf=ninf, E11=0.5 * (E11 + E11.T), reg=reg)
    if cf.n_s:
        lam = matcore.sym_eig_extreme(cf.E11)[0]
        if lam <= 0:
            raise ConstructionError(f"E11 is not positive definite (lambda_min = {lam:.3e})")
    if states is None:
        states = sample_states(reg, 3, seed)
    for x in states:
        rE, rA = cf.pattern_residuals(x)
        if max(rE, rA) > tol:
            raise ConstructionError(f"condensed form pattern residuals {rE:.3e}, {rA:.3e} exceed {tol:.1e}")
        if cf.n_s:
            A11 = cf.A11(x)
            lam = matcore.sym_eig_extreme(0.5 * (A11 + A11.T))[1]
            if lam >= 0:
                raise ConstructionError(f"A11 is not negative definite (lambda_max = {lam:.3e})")
    reg._cond = cf
    return cf


def output_matrix(reg: RegularizedSystem, states=None, seed: int = 42, check: bool = True,
                  tol: float = STRUCTURE_TOL) -> np.ndarray:
    """``C_r = -[0 Zhat^T] A_r (I - Pi_inf)``; constant in the state.

    With ``check=True`` the formula ``-B_r^T E_r^- A_r(x)`` is evaluated at
    sampled states and compared, and ``B_r^T E_r^- B_r = R^{-1}`` is verified.
    """
    n1 = reg.dae.n1
    sel = np.vstack([np.zeros((n1, reg.m)), reg.Zhat])
    A0 = reg.A_r(np.zeros(reg.n_r))
    C = -sel.T @ A0 @ (np.eye(reg.n_r) - reg.Pi_inf)
    if check:
        Em = condensed_form(reg).E_pinv()
        if states is None:
            states = sample_states(reg, 3, seed)
        Cs = [-(reg.B.T @ Em @ reg.A_r(x)) for x in states]
        for Cx in Cs:
            if _rel(Cx, C) > tol:
                raise ConstructionError(f"output matrix depends on the state (residual {_rel(Cx, C):.3e})")
        res = _rel(reg.B.T @ Em @ reg.B, reg.dae.R_inv)
        if res > tol:
            raise ConstructionError(f"B_r^T E_r^- B_r differs from R^-1 (residual {res:.3e})")
    return C


class GalerkinSystem:
    """ODE ``E x' = A_l x + [Ua1^T f1(Ua1 x1); 0] + B u``, ``y = C x``.

    ``U`` maps the state to the vector potential, ``a = U x``, and the system
    matrices are ``E = U^T E_cal U``, ``A(x) = -U^T K(U x) U``,
    ``B = U^T B_cal``.  The ODE form and the POD models are instances.
    """

    sparse = False

    def __init__(self, dae: MqsDae, U: np.ndarray, Ua1: np.ndarray | None, C: np.ndarray,
                 r: int):
        self.dae = dae
        self.U = np.asarray(U, dtype=float)
        self.Ua1 = Ua1  # None means identity on a1
        self.r = r
        self.m = dae.m
        self.n_state = r + dae.m
        E = self.U.T @ (dae.E_cal @ self.U)
        self.E = 0.5 * (E + E.T)
        Al = -(self.U.T @ (dae.K_l @ self.U))
        self.A_l = 0.5 * (Al + Al.T)
        self.B = self.U.T @ dae.B_cal
        self.C = np.asarray(C, dtype=float)

    def _a1(self, x1):
        return x1 if self.Ua1 is None else self.Ua1 @ x1

    def f1_reduced(self, x1):
        f = self.dae.f1(self._a1(x1))
        return f if self.Ua1 is None else self.Ua1.T @ f

    def rhs(self, x):
        x = np.asarray(x, dtype=float)
        out = self.A_l @ x
        out[:self.r] += self.f1_reduced(x[:self.r])
        return out

    def jac(self, x):
        J = self.A_l.copy()
        Jf = self.dae.jacobian_f1(self._a1(np.asarray(x, dtype=float)[:self.r]))
        if self.Ua1 is None:
            J[:self.r, :self.r] += Jf.toarray()
        else:
            J[:self.r, :self.r] += self.Ua1.T @ (Jf @ self.Ua1)
        return J

    def A(self, x):
        """Full state matrix ``-U^T K(U x) U``."""
        return -(self.U.T @ (self.dae.assemble_K(self.lift(x)) @ self.U))

    def output(self, x):
        return np.asarray(x) @ self.C.T

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.U.T if x.ndim == 2 else self.U @ x

    def storage(self, x) -> float:
        return self.dae.storage(self.lift(x))

    def zero_state(self):
        return np.zeros(self.n_state)


class OdeSystem(GalerkinSystem):
    """Index-zero form in the state ``[a1; Z^T a21]``."""

    kind = "ode"

    def __init__(self, reg: RegularizedSystem):
        dae = reg.dae
        p = dae.problem
        n1, n2, m = p.n1, p.n2, p.m
        K = dae.K_l.tocsr()
        K21 = matcore.to_dense(K[n1:, :n1])
        K22 = matcore.to_dense(K[n1:, n1:])
        Y2 = reg.Yhat @ reg.Y
        Z2 = reg.Yhat @ reg.Z
        S = Y2.T @ K22 @ Y2
        if Y2.shape[1]:
            try:
                SY = matcore.solve_spd(S, Y2.T)  # S^{-1} Y2^T
            except Exception as exc:
                raise AssumptionViolation(f"Y2^T K22 Y2 is not positive definite: {exc}") from exc
        else:
            SY = np.zeros((0, n2))
        P1 = -Y2 @ (SY @ K21)
        P2 = Z2 - Y2 @ (SY @ (K22 @ Z2))
        U = np.block([[np.eye(n1), np.zeros((n1, m))], [P1, P2]])
        C = reg.Zhat.T @ reg.Yhat.T @ (np.hstack([K21, K22 @ Z2]) - K22 @ Y2 @ (SY @ np.hstack([K21, K22 @ Z2])))
        self.reg = reg
        self.Y2, self.Z2, self.S = Y2, Z2, S
        self.K21, self.K22 = K21, K22
        super().__init__(dae, U, None, C, n1)
        lam = matcore.sym_eig_extreme(self.E)[0]
        if lam <= 0:
            raise ConstructionError(f"E_ODE is not positive definite (lambda_min = {lam:.3e})")

    def from_regularized(self, x_r):
        """ODE state ``[a1; Z^T a21]`` of a regularized state."""
        x_r = np.asarray(x_r, dtype=float)
        n1 = self.dae.n1
        return np.concatenate([x_r[..., :n1], x_r[..., n1:] @ self.reg.Z], axis=-1) \
            if x_r.ndim == 2 else np.concatenate([x_r[:n1], self.reg.Z.T @ x_r[n1:]])


def to_ode(reg: RegularizedSystem) -> OdeSystem:
    return OdeSystem(reg)

"""The semidiscrete quasilinear field/circuit DAE.

:class:`MqsDae` evaluates the curl-curl operator ``K(a) = Cd^T M_nu(Cd a) Cd``,
its Jacobian and the constant/nonlinear split of the conducting block, and
provides the coupled system with state ``[a; i]`` for time integration.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import StructuralError
from .problem.fem import FemProblem


def _check_len(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise StructuralError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


class MqsDae:
    """Quasilinear MQS DAE built on a :class:`FemProblem`.

    The linear part ``K_l`` collects all non-conducting elements.  The
    nonlinear part ``K11_n(a1)`` collects every conducting element with its
    full field-dependent reluctivity, so that ``f1(a1) = -K11_n(a1) a1``
    vanishes at zero and inherits the strong monotonicity of ``nu_C(z) z``.

    Parameters
    ----------
    problem : FemProblem
    """

    def __init__(self, problem: FemProblem):
        self.problem = problem
        p = problem
        self.n1, self.n2, self.m = p.n1, p.n2, p.m
        self.n = p.n
        self.R = p.R
        self.R_inv = sla.inv(p.R)
        self.X = p.X
        self.K_l = p.curl_form(p.nu_row_weights(None, part="linear"))
        M = sp.lil_matrix((self.n, self.n))
        M[:self.n1, :self.n1] = p.M11
        self.M_sigma = M.tocsr()
        # E_cal = blockdiag(M11, 0) + X R^{-1} X^T
        self.E_cal = (self.M_sigma + sp.csr_matrix(self.X @ self.R_inv @ self.X.T)).tocsr()
        self.B_cal = self.X @ self.R_inv

    # -- operator evaluations ----------------------------------------------
    def assemble_K(self, a) -> sp.csr_matrix:
        """``K(a) = Cd^T M_nu(Cd a) Cd``."""
        a = _check_len(a, self.n, "a")
        return self.problem.curl_form(self.problem.nu_row_weights(a))

    def K_times(self, a) -> np.ndarray:
        """``K(a) a`` without forming the matrix."""
        a = _check_len(a, self.n, "a")
        p = self.problem
        return p.Cd.T @ (p.nu_row_weights(a) * (p.Cd @ a))

    def jacobian_K(self, a) -> sp.csr_matrix:
        """Jacobian of ``a -> K(a) a``."""
        a = _check_len(a, self.n, "a")
        return self.problem.jacobian_curl(a)

    def _pad(self, a1):
        a = np.zeros(self.n)
        a[:self.n1] = _check_len(a1, self.n1, "a1")
        return a

    def K11_n(self, a1) -> sp.csr_matrix:
        p = self.problem
        a = self._pad(a1)
        Kn = p.C1.T @ sp.diags(p.nu_row_weights(a, part="nonlinear")) @ p.C1
        return Kn.tocsr()

    def f1(self, a1) -> np.ndarray:
        """Nonlinearity ``f1(a1) = -K11_n(a1) a1``."""
        p = self.problem
        a = self._pad(a1)
        c = p.C1 @ a[:self.n1]
        return -(p.C1.T @ (p.nu_row_weights(a, part="nonlinear") * c))

    def jacobian_f1(self, a1) -> sp.csr_matrix:
        p = self.problem
        a = self._pad(a1)
        # conducting elements only touch a1, so the leading block is the whole Jacobian
        J = p.jacobian_curl(a, part="nonlinear")
        return -J[:self.n1, :self.n1].tocsr()

    def eval_rhs(self, a, i_current, u):
        """Right-hand sides ``(-K(a) a + X i, -R i + u)`` of the coupled DAE."""
        a = _check_len(a, self.n, "a")
        i_current = _check_len(i_current, self.m, "i")
        u = _check_len(u, self.m, "u")
        return -self.K_times(a) + self.X @ i_current, -self.R @ i_current + u

    # -- derived quantities ---------------------------------------------------
    @property
    def K_L(self) -> sp.csr_matrix:
        return self.problem.stiffness_unit()

    @property
    def K_L1(self) -> sp.csr_matrix:
        return self.problem.stiffness_unit_conducting()

    def output_from_derivative(self, a_dot, u):
        """``y = -d/dt B_cal^T a + R^{-1} u`` given ``d/dt a``."""
        return -self.B_cal.T @ a_dot + self.R_inv @ u

    def coupled_form(self) -> "CoupledFemSystem":
        return CoupledFemSystem(self)

    def storage(self, a) -> float:
        return self.problem.magnetic_energy(a)


class CoupledFemSystem:
    """Time-integration view of the coupled DAE with state ``x = [a; i]``.

    ``E x' = f(x) + B u`` with ``E = [[M_sigma, 0], [X^T, 0]]``,
    ``f = [-K(a) a + X i; -R i]``, ``B = [0; I]`` and output ``y = i``.
    """

    sparse = True
    kind = "fe"

    def __init__(self, dae: MqsDae):
        if dae.problem.dimension == "3d":
            k2 = dae.problem.kernel_C2().dim
            if k2 > 0:
                raise StructuralError(
                    f"the coupled FE system is singular (dim ker(C2) = {k2}); "
                    "regularize it first (regularization.regularize)")
        self.dae = dae
        n, m = dae.n, dae.m
        self.n_state = n + m
        self.m = m
        self.E = sp.bmat([[dae.M_sigma, None], [sp.csr_matrix(dae.X.T), sp.csr_matrix((m, m))]]).tocsr()
        self.B = np.vstack([np.zeros((n, m)), np.eye(m)])
        Xc = sp.coo_matrix(dae.X)
        Rc = sp.coo_matrix(-dae.R)
        self._static = (np.concatenate([Xc.row, Rc.row + n]), np.concatenate([Xc.col + n, Rc.col + n]),
                        np.concatenate([Xc.data, Rc.data]))

    def rhs(self, x):
        a, i = x[:self.dae.n], x[self.dae.n:]
        fa, fi = self.dae.eval_rhs(a, i, np.zeros(self.m))
        return np.concatenate([fa, fi])

    def jac(self, x):
        dae = self.dae
        J = dae.jacobian_K(x[:dae.n]).tocoo()
        r, c, v = self._static
        return sp.csr_matrix((np.concatenate([-J.data, v]),
                              (np.concatenate([J.row, r]), np.concatenate([J.col, c]))),
                             shape=(self.n_state, self.n_state))

    def output(self, x):
        return np.asarray(x)[..., self.dae.n:]

    def lift(self, x):
        """Vector potential ``a`` represented by the state."""
        return np.asarray(x)[..., :self.dae.n]

    def storage(self, x) -> float:
        return self.dae.storage(self.lift(x))

    def zero_state(self):
        return np.zeros(self.n_state)

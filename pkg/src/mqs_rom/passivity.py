"""Storage function, dissipation checks, DEIM error bounds and output passification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import AssumptionViolation, NormalizationError, ParameterError

DEFAULT_DISSIPATION_RTOL = 1e-6
DEFAULT_IO_RTOL = 1e-8


class StorageEvaluator:
    """Magnetic energy ``S(x) = sum_e vol_e theta_e(|b_e|)`` of a lifted state.

    Parameters
    ----------
    system
        Any object with ``dae`` and ``lift(x) -> a`` (FE, regularized, ODE
        and reduced systems all qualify).
    quadrature : {"closed", "adaptive"}
        ``"closed"`` integrates the Brauer energy density exactly,
        ``"adaptive"`` uses per-element adaptive Simpson quadrature.
    """

    def __init__(self, system, quadrature: str = "closed"):
        if quadrature not in ("closed", "adaptive"):
            raise ParameterError(f"unknown quadrature {quadrature!r}")
        self.system = system
        self.problem = system.dae.problem
        self.quadrature = quadrature

    def __call__(self, x) -> float:
        return self.problem.magnetic_energy(self.system.lift(np.asarray(x, dtype=float)),
                                            quadrature=self.quadrature)

    def series(self, X) -> np.ndarray:
        """Storage at every column of ``X``."""
        return np.array([self(X[:, k]) for k in range(X.shape[1])])


def storage(x, evaluator: StorageEvaluator) -> float:
    return evaluator(x)


def io_passivity_integral(u, y, t):
    """Running trapezoid integral of ``u^T y`` and its minimum.

    ``u`` and ``y`` hold one column per time node.
    """
    u, y, t = np.atleast_2d(u), np.atleast_2d(y), np.asarray(t, dtype=float)
    if u.shape != y.shape or u.shape[1] != t.size:
        raise ParameterError(f"sample shapes {u.shape}, {y.shape} do not match {t.size} nodes")
    power = np.einsum("ij,ij->j", u, y)
    inc = 0.5 * np.diff(t) * (power[1:] + power[:-1])
    running = np.concatenate([[0.0], np.cumsum(inc)])
    return running, float(running.min())


def _increments(power, dt, rule):
    if rule == "trapezoid":
        return 0.5 * dt * (power[1:] + power[:-1])
    if rule == "right":
        return dt * power[1:]
    raise ParameterError(f"unknown quadrature rule {rule!r}")


@dataclass
class PassivityReport:
    """Result of a dissipation check along a trajectory.

    ``slack[k] = S(t_{k+1}) - S(t_k) - int_{t_k}^{t_{k+1}} u^T y``; the
    dissipation inequality asks for ``slack <= tol``.
    """

    t: np.ndarray
    storage: np.ndarray
    slack: np.ndarray
    io_integral: np.ndarray
    tol: np.ndarray
    rule: str

    @property
    def max_violation(self) -> float:
        return float(np.max(self.slack - self.tol)) if self.slack.size else -np.inf

    @property
    def passed(self) -> bool:
        return bool(np.all(self.slack <= self.tol))

    @property
    def diss_slack_nodes(self) -> np.ndarray:
        """Cumulative slack ``S(t_k) - S(t_0) - int_0^{t_k} u^T y`` at the nodes."""
        return np.concatenate([[0.0], np.cumsum(self.slack)])


def check_dissipation(traj, evaluator: StorageEvaluator, rtol: float = DEFAULT_DISSIPATION_RTOL,
                      rule: str = "trapezoid") -> PassivityReport:
    """Check ``S(x_{k+1}) - S(x_k) <= int u^T y + tol_k`` on every step.

    ``tol_k = rtol * max(1, max |u^T y|) * dt_k``.  ``rule`` selects the
    quadrature of the supply integral: ``"trapezoid"`` or ``"right"``
    (right endpoint, which matches the implicit Euler discretization).
    """
    S = evaluator.series(traj.x)
    power = np.einsum("ij,ij->j", traj.u, traj.y)
    dt = np.diff(traj.t)
    inc = _increments(power, dt, rule)
    slack = np.diff(S) - inc
    tol = rtol * max(1.0, float(np.abs(power).max())) * dt
    running = np.concatenate([[0.0], np.cumsum(inc)])
    return PassivityReport(t=traj.t.copy(), storage=S, slack=slack, io_integral=running, tol=tol, rule=rule)


# -- DEIM error bounds -----------------------------------------------------

def log_lipschitz_bounds(rom, problem=None):
    """Upper bounds ``(mu1, mu2)`` on the logarithmic Lipschitz constant of ``A(x) x``.

    ``mu1 = -m_nu lambda_max(U^T K_L U)`` and
    ``mu2 = lambda_max(A_l) - m_nu_C lambda_max(Ua1^T K_L1 Ua1)`` with the unit
    reluctivity stiffness ``K_L = Cd^T M_f Cd`` and its conducting part
    ``K_L1``.  For the ODE form pass it directly (``Ua1`` is the identity).
    """
    dae = rom.dae
    problem = dae.problem if problem is None else problem
    curve = problem.curve
    U = rom.U
    Ua1 = rom.Ua1 if rom.Ua1 is not None else np.eye(dae.n1)
    G = U.T @ (problem.stiffness_unit() @ U)
    H = Ua1.T @ (problem.stiffness_unit_conducting() @ Ua1)
    mu1 = -curve.m_nu * matcore.sym_eig_extreme(0.5 * (G + G.T))[1]
    mu2 = matcore.sym_eig_extreme(rom.A_l)[1] - curve.m_nu_C * matcore.sym_eig_extreme(0.5 * (H + H.T))[1]
    for name, mu in (("mu1", mu1), ("mu2", mu2)):
        if not mu < 0:
            raise AssumptionViolation(f"{name} = {mu:.6e} is not negative; the exponential bound needs mu < 0")
    return float(mu1), float(mu2)


def deim_error_constant(f1_singular_values, inv_norm: float, ell: int) -> float:
    """``||(S^T Uf)^{-1}|| * sqrt(sum_{j > ell} sigma_j(X_f1)^2)``.

    Parameters
    ----------
    f1_singular_values : array
        All singular values of the nonlinearity snapshot matrix.
    inv_norm : float
        ``||(S^T Uf)^{-1}||_2``.
    ell : int
        DEIM dimension.
    """
    s = np.asarray(f1_singular_values, dtype=float)
    if not np.isfinite(inv_norm) or inv_norm <= 0:
        raise ParameterError("sampling matrix norm must be positive and finite")
    return float(inv_norm * np.sqrt(np.sum(s[ell:] ** 2)))


@dataclass(frozen=True)
class ErrorBound:
    """``theta(t) = (Delta / mu) (exp(mu t / lambda_min(E)) - 1)``."""

    delta_deim: float
    mu: float
    lambda_min_E: float
    norm_C: float

    def __post_init__(self):
        if not self.mu < 0:
            raise AssumptionViolation(f"mu = {self.mu:.6e} must be negative")
        if not self.lambda_min_E > 0:
            raise AssumptionViolation(f"lambda_min(E) = {self.lambda_min_E:.6e} must be positive")

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        return self.delta_deim / self.mu * np.expm1(self.mu * t / self.lambda_min_E)

    @property
    def asymptote(self) -> float:
        return -self.delta_deim / self.mu


def state_error_bound(bound: ErrorBound, t):
    return bound.theta(t)


def error_bounds(deim, f1_singular_values=None):
    """Bounds with ``mu1`` alone and with ``min(mu1, mu2)``; returns ``(b1, b2, (mu1, mu2))``."""
    sv = deim.f1_singular_values if f1_singular_values is None else f1_singular_values
    delta = deim_error_constant(sv, deim.inv_norm, deim.ell)
    mu1, mu2 = log_lipschitz_bounds(deim)
    lam = matcore.sym_eig_extreme(deim.E)[0]
    nC = matcore.spectral_norm(deim.C)
    return (ErrorBound(delta, mu1, lam, nC), ErrorBound(delta, min(mu1, mu2), lam, nC), (mu1, mu2))


def passify(traj, C, theta_values):
    """Perturbed output ``y_delta = C x + delta u`` with ``delta = ||C|| theta / ||u||``.

    Returns ``(y_delta, delta)``; ``delta`` is zero where ``u`` vanishes.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    theta_values = np.asarray(theta_values, dtype=float)
    nC = matcore.spectral_norm(C)
    unorm = np.linalg.norm(traj.u, axis=0)
    delta = np.zeros_like(unorm)
    nz = unorm > 0
    delta[nz] = nC * theta_values[nz] / unorm[nz]
    y = C @ traj.x
    return y + delta[None, :] * traj.u, delta


def relative_output_error(y_ref, y_cmp):
    """``sqrt(sum_i ((y_i - z_i) / max_t |y_i|)^2)`` per node."""
    y_ref, y_cmp = np.atleast_2d(y_ref), np.atleast_2d(y_cmp)
    if y_ref.shape != y_cmp.shape:
        raise ParameterError(f"shapes {y_ref.shape} and {y_cmp.shape} differ")
    scale = np.abs(y_ref).max(axis=1)
    if np.any(scale == 0):
        raise NormalizationError("a reference output component is identically zero")
    return np.sqrt(np.sum(((y_ref - y_cmp) / scale[:, None]) ** 2, axis=0))

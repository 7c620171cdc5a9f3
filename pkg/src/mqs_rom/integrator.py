"""Fixed-step BDF1/BDF2 integration of descriptor systems ``E x' = f(x) + B u``.

Any object with the attributes ``E``, ``B``, ``n_state``, ``m``, ``sparse``
and the methods ``rhs(x)``, ``jac(x)``, ``output(x)`` can be integrated: the
coupled FE system, the regularized DAE, the ODE form and the reduced models
all follow this protocol.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import matcore
from .errors import (FactorizationError, InitialConditionError, NewtonError,
                     ParameterError)

log = logging.getLogger(__name__)

DEFAULT_NEWTON_TOL = 1e-10
DEFAULT_MAX_ITER = 25


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes."""

    nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ParameterError("a time grid needs at least two nodes")
        if np.any(np.diff(t) <= 0):
            raise ParameterError("time nodes must be strictly increasing")
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, t0: float, t_end: float, steps: int) -> "TimeGrid":
        if steps < 1:
            raise ParameterError("need at least one step")
        return cls(np.linspace(t0, t_end, steps + 1))

    @property
    def steps(self) -> int:
        return self.nodes.size - 1

    @property
    def is_uniform(self) -> bool:
        h = np.diff(self.nodes)
        return bool(np.allclose(h, h[0], rtol=1e-12, atol=0.0))


@dataclass
class SineInput:
    """Per-channel sums of sinusoids ``sum_k amp_k sin(omega_k pi t)``.

    ``terms[j]`` is a list of ``(amp, omega)`` pairs for channel ``j``.
    """

    terms: list

    def __post_init__(self):
        self.terms = [[(float(a), float(w)) for a, w in ch] for ch in self.terms]

    @classmethod
    def single(cls, amps, omegas):
        return cls([[(a, w)] for a, w in zip(amps, omegas)])

    @property
    def m(self) -> int:
        return len(self.terms)

    def __call__(self, t):
        return np.array([sum(a * np.sin(w * np.pi * t) for a, w in ch) for ch in self.terms])

    def scaled(self, factor: float) -> "SineInput":
        return SineInput([[(factor * a, w) for a, w in ch] for ch in self.terms])


def zero_input(m: int):
    return lambda t: np.zeros(m)


@dataclass
class Trajectory:
    """Integration result; states, inputs and outputs hold one column per node."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    scheme: str = "bdf1"
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    corrections: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kind: str = ""

    @property
    def n_nodes(self) -> int:
        return self.t.size

    def to_csv(self, path):
        """Write ``t,x_1..x_n,u_1..u_m,y_1..y_m`` with 17 significant digits."""
        n, m = self.x.shape[0], self.u.shape[0]
        header = ",".join(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)]
                          + [f"y_{j + 1}" for j in range(self.y.shape[0])])
        data = np.column_stack([self.t, self.x.T, self.u.T, self.y.T])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, n: int, m: int, kind: str = "") -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 1 + n + 2 * m:
            raise ParameterError(f"{path}: expected {1 + n + 2 * m} columns, got {data.shape[1]}")
        return cls(t=data[:, 0], x=data[:, 1:1 + n].T, u=data[:, 1 + n:1 + n + m].T,
                   y=data[:, 1 + n + m:].T, kind=kind)


class ExplicitSystem:
    """Small helper wrapping user callables in the integration protocol."""

    def __init__(self, E, f, jac, B=None, C=None):
        self.E = np.atleast_2d(np.asarray(E, dtype=float))
        self.n_state = self.E.shape[0]
        self._f, self._jac = f, jac
        self.B = np.zeros((self.n_state, 0)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        self.m = self.B.shape[1]
        self.C = np.zeros((0, self.n_state)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        self.sparse = False
        self.kind = "explicit"

    def rhs(self, x):
        return np.atleast_1d(np.asarray(self._f(x), dtype=float))

    def jac(self, x):
        return np.atleast_2d(np.asarray(self._jac(x), dtype=float))

    def output(self, x):
        return np.asarray(x) @ self.C.T


def _solver(M, sparse):
    if sparse:
        return matcore.LUSolver(sp.csc_matrix(M))
    return matcore.LUSolver(matcore.to_dense(M))


def _newton(system, x_guess, E_over, hist, bu, tol, max_iter, step):
    """Solve ``E_over (x) - hist - f(x) - bu = 0`` with ``E_over = alpha E / dt``."""
    x = x_guess.copy()
    corr = np.inf
    for it in range(1, max_iter + 1):
        r = E_over @ x - hist - system.rhs(x) - bu
        J = system.jac(x)
        M = E_over - J
        try:
            dx = _solver(M, system.sparse).solve(-r)
        except FactorizationError as exc:
            raise NewtonError(f"step {step}: singular iteration matrix ({exc})",
                              step=step, iterations=it, residual=float(np.linalg.norm(r))) from exc
        x = x + dx
        corr = float(np.linalg.norm(dx))
        if not np.isfinite(corr):
            break
        if corr <= tol * (1.0 + np.linalg.norm(x)):
            return x, it, corr
    raise NewtonError(f"Newton failed at step {step} after {max_iter} iterations "
                      f"(last correction {corr:.3e})", step=step, iterations=max_iter, residual=corr)


def consistent_initial_state(system, x0, u0, tol: float = 1e-10, max_iter: int = DEFAULT_MAX_ITER):
    """Project ``x0`` onto the algebraic constraints at ``t0``.

    The components in ``ker(E)`` are adjusted (so ``E x0`` is unchanged)
    until the constraints ``L^T (f(x) + B u0) = 0`` hold, where the columns of
    ``L`` span the left kernel of ``E``.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not np.any(system.rhs(x) + system.B @ u0):
        return x  # every constraint holds trivially (e.g. zero state, zero input)
    E = matcore.to_dense(system.E)
    N = matcore.kernel_basis(E).matrix
    if N.shape[1] == 0:
        return np.asarray(x0, dtype=float).copy()
    L = matcore.kernel_basis(E.T).matrix
    if L.shape[1] != N.shape[1]:
        raise InitialConditionError("E has unequal left and right kernel dimensions")
    bu = system.B @ u0
    scale = 1.0 + np.linalg.norm(x)
    for _ in range(max_iter):
        g = L.T @ (system.rhs(x) + bu)
        Jr = L.T @ matcore.to_dense(system.jac(x)) @ N
        try:
            dz = matcore.solve_lu(Jr, -g)
        except FactorizationError as exc:
            raise InitialConditionError(f"algebraic part is singular: {exc}") from exc
        x = x + N @ dz
        if np.linalg.norm(N @ dz) <= tol * scale:
            return x
    raise InitialConditionError("could not project the initial state onto the constraint manifold")


def integrate(system, u, grid: TimeGrid, x0=None, scheme: str = "bdf1",
              newton_tol: float = DEFAULT_NEWTON_TOL, max_iter: int = DEFAULT_MAX_ITER,
              project_initial: bool = True) -> Trajectory:
    """Integrate ``E x' = f(x) + B u(t)`` on a fixed grid.

    Parameters
    ----------
    system : integration protocol object
    u : callable
        ``u(t) -> ndarray (m,)``.
    grid : TimeGrid
    x0 : ndarray, optional
        Initial state (zero by default).  For descriptor systems it is
        projected onto the algebraic constraints unless ``project_initial``
        is false.
    scheme : {"bdf1", "bdf2"}
        BDF2 requires a uniform grid and starts with one BDF1 step.

    Returns
    -------
    Trajectory
    """
    scheme = scheme.lower()
    if scheme not in ("bdf1", "bdf2"):
        raise ParameterError(f"unknown scheme {scheme!r}")
    if scheme == "bdf2" and not grid.is_uniform:
        raise ParameterError("BDF2 is implemented for uniform grids only")
    t = grid.nodes
    n = system.n_state
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (n,):
        raise ParameterError(f"initial state has shape {x.shape}, expected ({n},)")
    u0 = np.asarray(u(t[0]), dtype=float)
    if project_initial:
        x = consistent_initial_state(system, x, u0, tol=newton_tol, max_iter=max_iter)
    E = system.E
    X = np.empty((n, t.size))
    U = np.empty((u0.size, t.size))
    X[:, 0], U[:, 0] = x, u0
    iters = np.zeros(t.size - 1, dtype=int)
    corrs = np.zeros(t.size - 1)
    for k in range(t.size - 1):
        dt = t[k + 1] - t[k]
        uk = np.asarray(u(t[k + 1]), dtype=float)
        bu = system.B @ uk
        if scheme == "bdf1" or k == 0:
            alpha, hist_state = 1.0, X[:, k]
        else:
            alpha, hist_state = 1.5, 2.0 * X[:, k] - 0.5 * X[:, k - 1]
        E_over = E * (alpha / dt)
        hist = E @ hist_state / dt
        # extrapolated predictor
        guess = X[:, k] if k == 0 else 2.0 * X[:, k] - X[:, k - 1]
        x, it, corr = _newton(system, guess, E_over, hist, bu, newton_tol, max_iter, k + 1)
        X[:, k + 1], U[:, k + 1] = x, uk
        iters[k], corrs[k] = it, corr
    Y = np.asarray(system.output(X.T)).T
    if Y.ndim == 1:
        Y = Y[None, :]
    return Trajectory(t=t.copy(), x=X, u=U, y=Y, scheme=scheme, iterations=iters,
                      corrections=corrs, kind=getattr(system, "kind", ""))


def snapshots(traj: Trajectory, selector="a1", dae=None, n1: int | None = None) -> np.ndarray:
    """Snapshot matrix with one column per trajectory node.

    ``selector`` is ``"a1"`` (the first ``n1`` state components, which are
    the conducting unknowns in every full-order form), ``"f1"`` (the
    nonlinearity ``f1(a1(t_k))``, needs ``dae``), a slice, or an index array.
    """
    if traj.x.shape[1] == 0:
        raise ParameterError("empty trajectory")
    if isinstance(selector, str):
        if n1 is None:
            if dae is None:
                raise ParameterError("selector needs n1 or dae")
            n1 = dae.n1
        if selector == "a1":
            return traj.x[:n1].copy()
        if selector == "f1":
            if dae is None:
                raise ParameterError("f1 snapshots need the dae")
            return np.column_stack([dae.f1(traj.x[:n1, k]) for k in range(traj.x.shape[1])])
        raise ParameterError(f"unknown selector {selector!r}")
    return traj.x[selector].copy()

import numpy as np
import pytest

from mqs_rom.errors import AssumptionViolation, NormalizationError, ParameterError
from mqs_rom.integrator import TimeGrid, Trajectory, integrate
from mqs_rom.mqs_system import MqsDae
from mqs_rom.passivity import (ErrorBound, StorageEvaluator, check_dissipation,
                               deim_error_constant, error_bounds, io_passivity_integral,
                               log_lipschitz_bounds, passify, relative_output_error)
from mqs_rom.problem import build_transformer_2d, constant_curve
from mqs_rom.regularization import regularize, to_ode
from mqs_rom.rom import build_deim, build_pod, pod_basis

from conftest import TRAINING


def test_storage_vanishes_at_zero(ode8):
    ev = StorageEvaluator(ode8)
    assert ev(np.zeros(ode8.n_state)) == 0.0
    with pytest.raises(ParameterError):
        StorageEvaluator(ode8, quadrature="gauss")


def test_storage_is_quadratic_for_constant_reluctivity():
    p = build_transformer_2d(8, 8, curve=constant_curve(800.0, nu_I=400.0))
    dae = MqsDae(p)
    a = np.random.default_rng(0).standard_normal(p.n)
    K = dae.assemble_K(np.zeros(p.n))
    assert dae.storage(a) == pytest.approx(0.5 * a @ (K @ a), rel=1e-12)


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_io_integral_of_proportional_output(sign):
    t = np.linspace(0.0, 2.0, 401)
    u = np.vstack([np.sin(np.pi * t), np.cos(np.pi * t)])
    running, low = io_passivity_integral(u, sign * u, t)
    # int_0^2 (sin^2 + cos^2) = 2
    assert running[-1] == pytest.approx(sign * 2.0, rel=1e-12)
    assert (low >= 0) == (sign > 0) or low == 0.0


def test_io_integral_shape_check():
    with pytest.raises(ParameterError):
        io_passivity_integral(np.ones((2, 3)), np.ones((2, 4)), np.arange(3.0))


@pytest.mark.parametrize("rule", ["trapezoid", "right"])
def test_dissipation_along_ode_trajectory(ode_run, ode8, rule):
    rep = check_dissipation(ode_run, StorageEvaluator(ode8), rule=rule)
    assert rep.passed
    assert rep.diss_slack_nodes[0] == 0.0
    assert rep.diss_slack_nodes.size == ode_run.n_nodes


def test_dissipation_detects_an_active_system():
    """Energy growth with zero supply must be flagged."""
    class Fake:
        def __call__(self, x):
            return float(x[0])

        def series(self, X):
            return X[0].copy()

    t = np.linspace(0, 1, 11)
    tr = Trajectory(t=t, x=t[None, :].copy(), u=np.zeros((1, 11)), y=np.zeros((1, 11)))
    rep = check_dissipation(tr, Fake())
    assert not rep.passed and rep.max_violation > 0


def test_theta_properties():
    b = ErrorBound(delta_deim=2.0, mu=-4.0, lambda_min_E=0.5, norm_C=3.0)
    t = np.linspace(0, 1, 50)
    th = b.theta(t)
    assert th[0] == 0.0
    assert np.all(np.diff(th) > 0)
    assert th[-1] < b.asymptote == pytest.approx(0.5)
    assert np.all(np.diff(b.theta(np.linspace(0, 50, 100))) >= 0)
    assert b.theta(100.0) == pytest.approx(b.asymptote, rel=1e-12)
    # small-t slope Delta / lambda_min(E)
    assert b.theta(1e-9) == pytest.approx(2.0 / 0.5 * 1e-9, rel=1e-6)


@pytest.mark.parametrize("kw", [dict(mu=0.0), dict(mu=1.0), dict(lambda_min_E=0.0)])
def test_theta_assumptions(kw):
    args = dict(delta_deim=1.0, mu=-1.0, lambda_min_E=1.0, norm_C=1.0)
    args.update(kw)
    with pytest.raises(AssumptionViolation):
        ErrorBound(**args)


def test_deim_constant():
    s = np.array([5.0, 3.0, 4.0, 0.0])
    assert deim_error_constant(s, 2.0, 1) == pytest.approx(10.0)
    assert deim_error_constant(s, 2.0, 4) == 0.0
    with pytest.raises(ParameterError):
        deim_error_constant(s, 0.0, 1)


def test_delta_vanishes_at_full_rank(ode8, snaps, dae8):
    Xa, Xf = snaps
    pod = build_pod(ode8, pod_basis(Xa, tol=1e-7).matrix)
    rank = int(np.linalg.matrix_rank(Xf))
    deim = build_deim(pod, Xf, ell=rank)
    b1, b2, (mu1, mu2) = error_bounds(deim)
    assert b1.delta_deim <= 1e-6 * deim.inv_norm * deim.f1_singular_values[0]
    assert b2.mu == min(mu1, mu2) and mu1 < 0


def test_log_lipschitz_formula_constant_curve():
    nu = 900.0
    p = build_transformer_2d(8, 8, curve=constant_curve(nu, nu_I=nu))
    ode = to_ode(regularize(MqsDae(p)))
    mu1, _ = log_lipschitz_bounds(ode)
    G = ode.U.T @ (p.stiffness_unit() @ ode.U)
    assert mu1 == pytest.approx(-nu * np.linalg.eigvalsh(0.5 * (G + G.T)).max(), rel=1e-10)
    # the linear ODE vector field is then A x with A = -nu U^T K_L U
    x = np.random.default_rng(1).standard_normal(ode.n_state)
    assert np.allclose(ode.A(x) @ x, -nu * G @ x, rtol=1e-10, atol=1e-12 * np.abs(G @ x).max() * nu)


def test_passify_with_zero_input():
    t = np.linspace(0, 1, 5)
    tr = Trajectory(t=t, x=np.ones((3, 5)), u=np.zeros((2, 5)), y=np.zeros((2, 5)))
    C = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    y, d = passify(tr, C, np.linspace(0, 1, 5))
    assert not np.any(d)
    assert np.allclose(y, C @ tr.x)


def test_passify_perturbation_size():
    rng = np.random.default_rng(2)
    t = np.linspace(0, 1, 6)
    tr = Trajectory(t=t, x=rng.standard_normal((3, 6)), u=rng.standard_normal((2, 6)) + 3, y=np.zeros((2, 6)))
    C = rng.standard_normal((2, 3))
    theta = np.linspace(0, 0.3, 6)
    y, d = passify(tr, C, theta)
    gap = np.linalg.norm(y - C @ tr.x, axis=0)
    assert np.allclose(gap, np.linalg.norm(C, 2) * theta, rtol=1e-12)


def test_relative_output_error():
    y = np.array([[1.0, -2.0, 0.5], [4.0, 0.0, 1.0]])
    z = y + np.array([[0.2, 0.0, 0.0], [0.0, 0.4, 0.0]])
    assert np.allclose(relative_output_error(y, z), [0.1, 0.1, 0.0])
    with pytest.raises(NormalizationError):
        relative_output_error(np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ParameterError):
        relative_output_error(y, z[:, :2])


def test_io_passivity_of_regularized_model(reg8):
    grid = TimeGrid.uniform(0.0, 0.004, 80)
    tr = integrate(reg8, TRAINING, grid)
    _, low = io_passivity_integral(tr.u, tr.y, tr.t)
    assert low >= -1e-8 * np.abs(tr.u * tr.y).sum(axis=0).max() * grid.nodes[-1]

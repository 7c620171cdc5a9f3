import numpy as np
import pytest

from mqs_rom.errors import NewtonError, ParameterError
from mqs_rom.integrator import (ExplicitSystem, SineInput, TimeGrid, Trajectory,
                                consistent_initial_state, integrate, snapshots, zero_input)


def decay():
    return ExplicitSystem(E=[[1.0]], f=lambda x: -x, jac=lambda x: [[-1.0]], C=[[1.0]])


def riccati():
    """y' = -y^2 with exact solution 1 / (1 + t) for y(0) = 1."""
    return ExplicitSystem(E=[[1.0]], f=lambda x: -x**2, jac=lambda x: [[-2.0 * x[0]]], C=[[1.0]])


def test_exponential_decay():
    grid = TimeGrid.uniform(0.0, 1.0, 1000)
    tr = integrate(decay(), zero_input(0), grid, x0=[1.0])
    assert np.abs(tr.x[0] - np.exp(-grid.nodes)).max() <= 2e-3


def test_zero_input_keeps_zero_state(ode8):
    grid = TimeGrid.uniform(0.0, 1e-3, 10)
    tr = integrate(ode8, zero_input(2), grid)
    assert not np.any(tr.x) and not np.any(tr.y)


@pytest.mark.parametrize("scheme,order", [("bdf1", 1), ("bdf2", 2)])
def test_convergence_order(scheme, order):
    errs = []
    for steps in (40, 80, 160):
        tr = integrate(riccati(), zero_input(0), TimeGrid.uniform(0, 1, steps), x0=[1.0], scheme=scheme)
        errs.append(abs(tr.x[0, -1] - 0.5))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - order) < 0.15)


def test_bdf2_needs_uniform_grid():
    grid = TimeGrid(np.array([0.0, 0.1, 0.3]))
    with pytest.raises(ParameterError):
        integrate(decay(), zero_input(0), grid, x0=[1.0], scheme="bdf2")
    with pytest.raises(ParameterError):
        integrate(decay(), zero_input(0), grid, x0=[1.0], scheme="rk4")


def test_time_grid_validation():
    with pytest.raises(ParameterError):
        TimeGrid(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ParameterError):
        TimeGrid.uniform(0, 1, 0)
    assert TimeGrid.uniform(0, 1, 4).steps == 4


def test_newton_failure_reports_step():
    # an exponential right-hand side with one iteration allowed cannot converge
    sys = ExplicitSystem(E=[[1.0]], f=lambda x: -np.exp(x), jac=lambda x: [[-np.exp(x[0])]])
    with pytest.raises(NewtonError) as info:
        integrate(sys, zero_input(0), TimeGrid.uniform(0, 1, 5), x0=[2.0], max_iter=1)
    assert info.value.step == 1 and info.value.iterations == 1


def test_singular_iteration_matrix():
    sys = ExplicitSystem(E=[[0.0]], f=lambda x: 0 * x, jac=lambda x: [[0.0]])
    with pytest.raises(NewtonError):
        integrate(sys, zero_input(0), TimeGrid.uniform(0, 1, 2), x0=[0.0], project_initial=False)


def test_consistent_initial_state_on_a_dae():
    """x1' = -x1, 0 = x1 - x2 + u: the projection sets x2 = x1 + u and keeps x1."""
    E = np.diag([1.0, 0.0])
    sys = ExplicitSystem(E=E, f=lambda x: np.array([-x[0], x[0] - x[1]]),
                         jac=lambda x: np.array([[-1.0, 0.0], [1.0, -1.0]]), B=[[0.0], [1.0]])
    x = consistent_initial_state(sys, np.array([2.0, 0.0]), np.array([0.5]))
    assert np.allclose(x, [2.0, 2.5])
    tr = integrate(sys, lambda t: np.array([0.5]), TimeGrid.uniform(0, 1, 200), x0=[2.0, 0.0])
    assert np.allclose(tr.x[1], tr.x[0] + 0.5, atol=1e-12)


def test_sine_input():
    u = SineInput([[(2.0, 1.0), (1.0, 2.0)], [(3.0, 0.5)]])
    assert u.m == 2
    t = 0.25
    assert np.allclose(u(t), [2 * np.sin(np.pi / 4) + np.sin(np.pi / 2), 3 * np.sin(np.pi / 8)])
    assert np.allclose(u.scaled(2.0)(t), 2 * u(t))


def test_csv_round_trip(tmp_path, ode_run):
    path = tmp_path / "traj.csv"
    ode_run.to_csv(path)
    back = Trajectory.from_csv(path, ode_run.x.shape[0], ode_run.u.shape[0])
    assert np.array_equal(back.t, ode_run.t)
    assert np.array_equal(back.x, ode_run.x)
    assert np.array_equal(back.y, ode_run.y)
    with pytest.raises(ParameterError):
        Trajectory.from_csv(path, ode_run.x.shape[0] + 1, 2)


def test_deterministic(ode8, grid_short, ode_run):
    again = integrate(ode8, SineInput.single([45.5e3, 77e3], [900, 1700]), grid_short)
    assert np.array_equal(again.x, ode_run.x)


def test_snapshots(ode_run, dae8, snaps):
    Xa, Xf = snaps
    assert Xa.shape == (dae8.n1, ode_run.n_nodes)
    assert Xf.shape == Xa.shape
    assert np.allclose(Xf[:, 5], dae8.f1(Xa[:, 5]))
    assert np.linalg.matrix_rank(Xa) <= dae8.n1
    with pytest.raises(ParameterError):
        snapshots(ode_run, "b")
    assert snapshots(ode_run, slice(0, 3)).shape[0] == 3

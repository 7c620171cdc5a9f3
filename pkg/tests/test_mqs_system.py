import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mqs_rom.mqs_system import CoupledFemSystem, MqsDae
from mqs_rom.errors import StructuralError

from conftest import random_flux_state


def _fd_jacobian(f, x, h=1e-7):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        cols.append((f(x + e) - f(x - e)) / (2 * e[k]))
    return np.column_stack(cols)


def test_jacobian_K_against_finite_differences(dae8, tf8):
    a = random_flux_state(tf8, np.random.default_rng(0), peak=1.6)
    J = dae8.jacobian_K(a).toarray()
    Jfd = _fd_jacobian(dae8.K_times, a, h=1e-6 * np.abs(a).max())
    assert np.abs(J - Jfd).max() <= 1e-6 * np.abs(J).max()


def test_jacobian_f1_against_finite_differences(dae8, tf8):
    a = random_flux_state(tf8, np.random.default_rng(1), peak=1.9)
    a1 = a[:dae8.n1]
    J = dae8.jacobian_f1(a1).toarray()
    Jfd = _fd_jacobian(dae8.f1, a1, h=1e-6 * np.abs(a1).max())
    assert np.abs(J - Jfd).max() <= 1e-6 * np.abs(J).max()


def test_split_reproduces_K(dae8, tf8):
    a = random_flux_state(tf8, np.random.default_rng(2))
    full = -dae8.K_times(a)
    split = -(dae8.K_l @ a)
    split[:dae8.n1] += dae8.f1(a[:dae8.n1])
    assert np.linalg.norm(full - split) <= 1e-13 * np.linalg.norm(full)


def test_f1_vanishes_at_zero(dae8):
    assert not np.any(dae8.f1(np.zeros(dae8.n1)))


def test_K_is_symmetric_positive(dae8, tf8):
    a = random_flux_state(tf8, np.random.default_rng(3))
    K = dae8.assemble_K(a)
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    v = np.random.default_rng(4).standard_normal(tf8.n)
    assert v @ (K @ v) > 0


def test_storage_gradient_is_K_a(dae8, tf8):
    a = random_flux_state(tf8, np.random.default_rng(5), peak=1.4)
    grad = dae8.K_times(a)
    d = np.random.default_rng(6).standard_normal(tf8.n)
    h = 1e-6 * np.linalg.norm(a) / np.linalg.norm(d)
    fd = (dae8.storage(a + h * d) - dae8.storage(a - h * d)) / (2 * h)
    assert fd == pytest.approx(grad @ d, rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 2.2))
def test_strong_monotonicity(dae8, seed, peak):
    """(K(a)a - K(b)b)^T (a - b) >= m_nu (a - b)^T K_L (a - b)."""
    p = dae8.problem
    rng = np.random.default_rng(seed)
    a = random_flux_state(p, rng, peak)
    b = random_flux_state(p, rng, peak)
    d = a - b
    lhs = (dae8.K_times(a) - dae8.K_times(b)) @ d
    rhs = p.curve.m_nu * (d @ (dae8.K_L @ d))
    assert lhs >= rhs * (1 - 1e-10)


def test_coupled_jacobian(dae8, tf8):
    sys = CoupledFemSystem(dae8)
    rng = np.random.default_rng(7)
    x = np.concatenate([random_flux_state(tf8, rng), rng.standard_normal(2)])
    J = sys.jac(x).toarray()
    Jfd = _fd_jacobian(sys.rhs, x, h=1e-6 * np.abs(x).max())
    assert np.abs(J - Jfd).max() <= 1e-6 * np.abs(J).max()
    assert sys.output(x).tolist() == x[-2:].tolist()


def test_coupled_form_rejected_with_gauge_freedom(cube3):
    with pytest.raises(StructuralError):
        CoupledFemSystem(MqsDae(cube3))


def test_eval_rhs_shapes(dae8):
    with pytest.raises(StructuralError):
        dae8.eval_rhs(np.zeros(3), np.zeros(2), np.zeros(2))

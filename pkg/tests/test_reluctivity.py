import numpy as np
import pytest
from scipy.integrate import quad

from mqs_rom.errors import ParameterError
from mqs_rom.problem.reluctivity import (NU0, ReluctivityCurve, adaptive_simpson,
                                         constant_curve)


@pytest.fixture(scope="module")
def curve():
    return ReluctivityCurve()


def test_adaptive_simpson_polynomial_and_exp():
    assert adaptive_simpson(lambda x: x**3, 0.0, 2.0) == pytest.approx(4.0, rel=1e-12)
    assert adaptive_simpson(np.exp, 0.0, 1.0) == pytest.approx(np.e - 1, rel=1e-10)


@pytest.mark.parametrize("b", [0.0, 0.3, 1.0, 1.7, 2.2])
def test_energy_density_three_ways(curve, b):
    oracle = quad(lambda z: curve.nu_C(z) * z, 0.0, b, epsabs=0, epsrel=1e-13)[0]
    assert curve.energy_density_C(np.array([b]))[0] == pytest.approx(oracle, rel=1e-10, abs=1e-14)
    assert curve.energy_density_quad(b) == pytest.approx(oracle, rel=1e-9, abs=1e-14)


def test_energy_density_trapezoid_oracle(curve):
    z = np.linspace(0.0, 1.4, 200001)
    f = curve.nu_C(z) * z
    trap = np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(z))
    assert curve.energy_density_C(np.array([1.4]))[0] == pytest.approx(trap, rel=1e-8)


def test_derivative_matches_central_difference(curve):
    z = np.linspace(0.1, 2.4, 17)
    h = 1e-6
    fd = (curve.nu_C(z + h) - curve.nu_C(z - h)) / (2 * h)
    assert np.allclose(curve.dnu_C(z), fd, rtol=1e-6)
    assert np.allclose(curve.dnu_C_over_z(z), curve.dnu_C(z) / z, rtol=1e-12)


def test_monotonicity_constants(curve):
    assert 0 < curve.m_nu_C <= curve.nu_C(0.0) + 1e-9
    assert curve.m_nu == min(curve.m_nu_C, NU0)
    z = np.linspace(0, curve.zeta_max, 401)
    g = curve.nu_C(z) * z
    q = np.diff(g) / np.diff(z)
    assert q.min() >= curve.m_nu_C * (1 - 1e-6)
    assert q.max() <= curve.L_nu_C * (1 + 1e-6)


def test_constant_curve():
    c = constant_curve(500.0)
    assert c.is_constant
    assert c.m_nu_C == pytest.approx(500.0) and c.L_nu_C == pytest.approx(500.0)
    b = np.array([0.0, 0.5, 2.0])
    assert np.allclose(c.energy_density_C(b), 250.0 * b**2)


def test_invalid_parameters():
    with pytest.raises(ParameterError):
        ReluctivityCurve(k1=-1.0)
    with pytest.raises(ParameterError):
        ReluctivityCurve(nu_I=0.0)


def test_extended_range(curve):
    assert not curve.covers(3.0)
    ext = curve.extended(3.0)
    assert ext.covers(3.0) and ext.zeta_max >= 3.0

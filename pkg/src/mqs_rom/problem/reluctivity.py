"""Magnetic reluctivity curves and their monotonicity constants.

The conducting (iron) region uses the Brauer model

    nu_C(z) = k1 * exp(k2 * z**2) + k3,

and the non-conducting region a constant reluctivity ``nu_I``.  For the
passivity and error-bound machinery only the map ``g(z) = nu(z) * z`` matters:
its monotonicity constant enters the logarithmic Lipschitz estimates, and its
primitive is the magnetic energy density used by the storage function.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractViolation, ParameterError

MU0 = 4e-7 * np.pi
NU0 = 1.0 / MU0

BRAUER_DEFAULTS = (0.3774, 2.97, 388.33)


def adaptive_simpson(f, a: float, b: float, rtol: float = 1e-10, max_depth: int = 60) -> float:
    """Integrate a smooth scalar function on [a, b] with adaptive Simpson.

    The tolerance is relative to a coarse estimate of the integral of |f|,
    with an absolute floor so integrals that vanish do not recurse forever.
    """
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    scale = abs(b - a) * (abs(fa) + 4.0 * abs(fm) + abs(fb)) / 6.0
    atol = max(rtol * scale, 1e-300)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4.0 * flm + fm) / 6.0
        right = (b - m) * (fm + 4.0 * frm + fb) / 6.0
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
                + recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1))

    return recurse(a, b, fa, fm, fb, whole, atol, 0)


@dataclass(frozen=True)
class ReluctivityCurve:
    """Brauer curve for the conducting region plus a linear exterior.

    Parameters
    ----------
    k1, k2, k3 : float
        Brauer coefficients.  ``k1 = 0`` or ``k2 = 0`` gives a constant curve
        with value ``k1 + k3``.
    nu_I : float
        Reluctivity of the non-conducting region.
    zeta_max : float
        Upper end of the flux range on which the monotonicity and Lipschitz
        constants are certified.
    n_grid : int
        Number of sample points used for the certification.
    """

    k1: float = BRAUER_DEFAULTS[0]
    k2: float = BRAUER_DEFAULTS[1]
    k3: float = BRAUER_DEFAULTS[2]
    nu_I: float = NU0
    zeta_max: float = 2.5
    n_grid: int = 20001
    m_nu_C: float = field(init=False)
    L_nu_C: float = field(init=False)

    def __post_init__(self):
        for name in ("k1", "k2", "k3"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise ParameterError(f"Brauer coefficient {name} must be finite and non-negative")
        if not (self.nu_I > 0 and np.isfinite(self.nu_I)):
            raise ParameterError("nu_I must be positive")
        if not (self.zeta_max > 0 and np.isfinite(self.zeta_max)):
            raise ParameterError("zeta_max must be positive")
        if self.k1 + self.k3 <= 0:
            raise ParameterError("nu_C(0) = k1 + k3 must be positive")
        if self.n_grid < 3:
            raise ParameterError("n_grid must be at least 3")
        m, L = self._certify()
        object.__setattr__(self, "m_nu_C", m)
        object.__setattr__(self, "L_nu_C", L)

    # -- curve evaluation -------------------------------------------------
    @property
    def is_constant(self) -> bool:
        return self.k1 == 0.0 or self.k2 == 0.0

    @property
    def kind(self) -> str:
        return "constant" if self.is_constant else "brauer"

    def nu_C(self, z):
        z = np.asarray(z, dtype=float)
        if self.is_constant:
            return np.full_like(z, self.k1 + self.k3)
        return self.k1 * np.exp(self.k2 * z * z) + self.k3

    def dnu_C_over_z(self, z):
        """nu_C'(z) / z, which stays finite at z = 0."""
        z = np.asarray(z, dtype=float)
        if self.is_constant:
            return np.zeros_like(z)
        return 2.0 * self.k1 * self.k2 * np.exp(self.k2 * z * z)

    def dnu_C(self, z):
        return self.dnu_C_over_z(z) * np.asarray(z, dtype=float)

    def g_C(self, z):
        """Magnetic field strength map z -> nu_C(z) z."""
        return self.nu_C(z) * np.asarray(z, dtype=float)

    def dg_C(self, z):
        z = np.asarray(z, dtype=float)
        return self.nu_C(z) + self.dnu_C_over_z(z) * z * z

    def nu(self, z, conducting):
        """Reluctivity per element: nu_C where conducting, nu_I elsewhere."""
        z = np.asarray(z, dtype=float)
        return np.where(conducting, self.nu_C(z), self.nu_I)

    def dnu_over_z(self, z, conducting):
        z = np.asarray(z, dtype=float)
        return np.where(conducting, self.dnu_C_over_z(z), 0.0)

    # -- energy density ---------------------------------------------------
    def energy_density_C(self, b):
        """Closed-form primitive of nu_C(z) z from 0 to b."""
        b = np.asarray(b, dtype=float)
        b2 = b * b
        if self.is_constant:
            return 0.5 * (self.k1 + self.k3) * b2
        return self.k1 * np.expm1(self.k2 * b2) / (2.0 * self.k2) + 0.5 * self.k3 * b2

    def energy_density(self, b, conducting):
        b = np.asarray(b, dtype=float)
        return np.where(conducting, self.energy_density_C(b), 0.5 * self.nu_I * b * b)

    def energy_density_quad(self, b: float, conducting: bool = True, rtol: float = 1e-10) -> float:
        """Energy density by adaptive Simpson quadrature of nu(z) z."""
        if not conducting:
            return 0.5 * self.nu_I * b * b
        if self.is_constant:
            return 0.5 * (self.k1 + self.k3) * b * b
        return adaptive_simpson(lambda z: float(self.g_C(z)), 0.0, float(b), rtol=rtol)

    # -- monotonicity constants -------------------------------------------
    def _certify(self):
        z = np.linspace(0.0, self.zeta_max, self.n_grid)
        g = self.g_C(z)
        dq = np.diff(g) / np.diff(z)
        dg = self.dg_C(z)
        m = float(min(dg.min(), dq.min()))
        L = float(max(dg.max(), dq.max()))
        if not m > 0:
            raise ContractViolation(
                f"nu_C(z) z is not strongly monotone on [0, {self.zeta_max}] (m = {m:.3e})")
        return m, L

    @property
    def m_nu(self) -> float:
        return min(self.m_nu_C, self.nu_I)

    @property
    def L_nu(self) -> float:
        return max(self.L_nu_C, self.nu_I)

    def covers(self, zeta: float) -> bool:
        return float(zeta) <= self.zeta_max

    def extended(self, zeta: float, factor: float = 1.5) -> "ReluctivityCurve":
        """Copy certified on [0, factor * zeta] if ``zeta`` exceeds the current range."""
        if self.covers(zeta):
            return self
        return replace(self, zeta_max=float(factor * zeta))

    def params(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3, "nu_I": self.nu_I,
                "zeta_max": self.zeta_max}


def constant_curve(nu_C: float, nu_I: float = NU0, zeta_max: float = 2.5) -> ReluctivityCurve:
    """Linear material with reluctivity ``nu_C`` in the conducting region."""
    return ReluctivityCurve(k1=0.0, k2=0.0, k3=float(nu_C), nu_I=nu_I, zeta_max=zeta_max)

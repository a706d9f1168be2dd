"""Extended-charge form factors and the regularized Coulomb kernel.

The charge density kappa is real, even, and enters the dynamics only through
its radial Fourier transform. The two-body kernel is

    K = (1/4 pi) kappa * kappa * |.|^{-1},
    F[K](k) = COULOMB_FOURIER_CONSTANT * F[kappa](k)^2 / |k|^2 ,

with the constant fixed once for the symmetric transform convention and
pinned by a real-space convolution oracle in the test suite. The k = 0 value
of F[K] is set to zero, i.e. a periodic neutralizing background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .spectral import UniformGrid

# (2 pi)^3 / (4 pi) * F[|.|^{-1}] prefactor under the (2 pi)^{-3/2} convention:
# F[f*g] = (2 pi)^{3/2} F[f] F[g] applied twice, with F[|.|^{-1}] = sqrt(2/pi)/k^2.
COULOMB_FOURIER_CONSTANT = 2.0 * np.sqrt(2.0) * np.pi ** 1.5


class ChargeError(ValueError):
    pass


@dataclass(frozen=True)
class ChargeFormFactor:
    """Radial Fourier transform of the charge density.

    family "gaussian": kappa(x) = (2 pi)^{-3/2} exp(-x^2 / 2 w^2), so that
        F[kappa](k) = (2 pi)^{-3/2} w^3 exp(-w^2 k^2 / 2).
    family "table": radial samples, linearly interpolated, zero past the
        last node. Mostly for stress tests of the admissibility checks.
    family "zero": identically vanishing coupling (free dynamics).
    """

    family: str
    width: float = 1.0
    table_r: tuple = ()
    table_v: tuple = ()

    def fourier_radial(self, k_abs):
        """F[kappa] at radii |k| (array in, array out; real and even)."""
        k_abs = np.asarray(k_abs, dtype=float)
        if self.family == "gaussian":
            w = self.width
            return (2.0 * np.pi) ** -1.5 * w ** 3 * np.exp(-0.5 * (w * k_abs) ** 2)
        if self.family == "zero":
            return np.zeros_like(k_abs)
        if self.family == "table":
            return np.interp(k_abs, np.asarray(self.table_r), np.asarray(self.table_v),
                             left=self.table_v[0], right=0.0)
        raise ChargeError(f"unknown form factor family {self.family!r}")

    def fourier_on_grid(self, grid: UniformGrid):
        return self.fourier_radial(grid.k_abs)

    @property
    def is_zero(self):
        return self.family == "zero"


def gaussian_form_factor(width: float) -> ChargeFormFactor:
    if not (width > 0):
        raise ChargeError(f"gaussian width must be positive, got {width}")
    return ChargeFormFactor("gaussian", width=width)


def zero_form_factor() -> ChargeFormFactor:
    return ChargeFormFactor("zero")


def table_form_factor(radii, values) -> ChargeFormFactor:
    radii = tuple(float(r) for r in radii)
    values = tuple(float(v) for v in values)
    if len(radii) != len(values) or len(radii) < 2:
        raise ChargeError("table form factor needs matching radii/values, >= 2 nodes")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ChargeError("table radii must be strictly increasing")
    return ChargeFormFactor("table", table_r=radii, table_v=values)


def from_config(cfg: dict) -> ChargeFormFactor:
    """Build from the config schema {"family": "gaussian", "width": 1.0}."""
    family = cfg.get("family")
    if family == "gaussian":
        return gaussian_form_factor(float(cfg.get("width", 1.0)))
    if family == "zero":
        return zero_form_factor()
    if family == "table":
        return table_form_factor(cfg["radii"], cfg["values"])
    raise ChargeError(f"unknown kappa family {family!r}")


def coulomb_kernel_multiplier(kappa: ChargeFormFactor):
    """The Fourier multiplier F[K](k) as a callable of (kx, ky, kz).

    The zero mode is assigned the value 0 (neutral background); everywhere
    else F[K] = COULOMB_FOURIER_CONSTANT * F[kappa]^2 / |k|^2 >= 0.
    """

    def mult(kx, ky, kz):
        k2 = kx ** 2 + ky ** 2 + kz ** 2
        fk = kappa.fourier_radial(np.sqrt(k2))
        return np.where(k2 > 0, COULOMB_FOURIER_CONSTANT * fk ** 2 / np.where(k2 > 0, k2, 1.0), 0.0)

    return mult


def coulomb_multiplier_on_grid(kappa: ChargeFormFactor, grid: UniformGrid):
    """F[K] sampled on the grid's dual lattice, zero mode zeroed."""
    return coulomb_kernel_multiplier(kappa)(*grid.kvec)


def density_constants(kappa: ChargeFormFactor, quad_limit=200):
    """Radial quadrature of the admissibility constants.

    Returns B = ||(|.|^{-1} + 1) F[kappa]||_{L^2}, C = ||(|.|^{-1} + |.|^{1/2})
    F[kappa]||_{L^2}, each with a propagated quadrature error estimate.
    """
    if kappa.is_zero:
        return {"B_kappa": 0.0, "C_kappa": 0.0, "B_err": 0.0, "C_err": 0.0}

    upper = np.inf if kappa.family == "gaussian" else (kappa.table_r[-1] if kappa.family == "table" else np.inf)

    def integ(weight):
        def f(r):
            return 4.0 * np.pi * (weight(r) * kappa.fourier_radial(r)) ** 2 * r ** 2
        val, err = integrate.quad(f, 0.0, upper, limit=quad_limit)
        return val, err

    b2, b2_err = integ(lambda r: 1.0 / r + 1.0)
    c2, c2_err = integ(lambda r: 1.0 / r + np.sqrt(r))
    if not (np.isfinite(b2) and np.isfinite(c2)):
        raise ChargeError("admissibility integrals diverge for this form factor")
    b = np.sqrt(b2)
    c = np.sqrt(c2)
    return {
        "B_kappa": float(b),
        "C_kappa": float(c),
        "B_err": float(b2_err / (2.0 * b)) if b > 0 else 0.0,
        "C_err": float(c2_err / (2.0 * c)) if c > 0 else 0.0,
    }


def assumption_check(kappa: ChargeFormFactor, k_probe=None):
    """Evenness/realness probe plus finiteness of the admissibility constants."""
    if k_probe is None:
        k_probe = np.linspace(0.0, 12.0, 97)
    vals = kappa.fourier_radial(k_probe)
    if not np.isrealobj(vals):
        raise ChargeError("F[kappa] must be real")
    consts = density_constants(kappa)
    return consts

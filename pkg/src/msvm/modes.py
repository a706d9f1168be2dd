"""Classical photon mode functions and the induced vector potentials.

A mode function alpha(k, lambda) lives on the nonzero dual lattice with two
transverse polarizations. The induced (optionally charge-smeared) vector
potential in the Coulomb gauge is

    A(x)        = (2 pi)^{-3/2} sum_lam int (2|k|)^{-1/2} eps_lam(k)
                  ( e^{ikx} alpha(k,lam) + c.c. ) dk
    (kappa*A)(x) = same with the prefactor replaced by F[kappa](k) inside,

continuum integrals becoming dk_volume-weighted lattice sums. The k = 0
photon mode is excluded everywhere (1/sqrt|k| weights; measure zero in the
continuum).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .charge import ChargeFormFactor
from .spectral import (
    FOURIER_NORM,
    PolarizationBasis,
    UniformGrid,
    divergence_spectral,
    fourier_synthesis,
)


class ModeError(ValueError):
    pass


@dataclass
class ModeFunction:
    """alpha(k, lambda): complex values of shape (2, n, n, n), FFT k-order.

    The k = 0 entry is identically zero; constructors enforce it.
    """

    grid: UniformGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape != (2,) + self.grid.shape:
            raise ModeError(
                f"mode values must have shape (2, n, n, n), got {self.values.shape}"
            )
        if np.abs(self.values[:, 0, 0, 0]).max() > 0:
            raise ModeError("the k = 0 photon mode must vanish")

    def copy(self):
        return ModeFunction(self.grid, self.values.copy())

    @classmethod
    def zeros(cls, grid: UniformGrid):
        return cls(grid, np.zeros((2,) + grid.shape, dtype=complex))

    @classmethod
    def from_values(cls, grid: UniformGrid, values):
        vals = np.asarray(values, dtype=complex).copy()
        vals[:, 0, 0, 0] = 0.0
        return cls(grid, vals)


def gaussian_mode_function(grid: UniformGrid, amplitude=1.0, width=1.0,
                           phase_seed=0) -> ModeFunction:
    """Smooth admissible field fixture: Gaussian |k| profile, seeded phases."""
    rng = np.random.default_rng(phase_seed)
    kabs = grid.k_abs
    prof = amplitude * np.exp(-0.5 * (kabs / width) ** 2)
    phases = np.exp(2j * np.pi * rng.random((2,) + grid.shape))
    return ModeFunction.from_values(grid, prof[None] * phases)


def single_mode(grid: UniformGrid, k_index, lam, amplitude=1.0) -> ModeFunction:
    """One excited mode at integer lattice index ``k_index`` (tuple of 3)."""
    vals = np.zeros((2,) + grid.shape, dtype=complex)
    i, j, l = (int(m) % grid.n for m in k_index)
    if (i, j, l) == (0, 0, 0):
        raise ModeError("cannot excite the k = 0 mode")
    vals[lam, i, j, l] = amplitude
    return ModeFunction(grid, vals)


def mode_norm(alpha: ModeFunction, homogeneous_exponent=None,
              inhomogeneous_exponent=None) -> float:
    """Weighted L^2 mode norm: |k|^{2a} (homogeneous) or (1+|k|^2)^b weights.

    Exactly one exponent must be given. For a < 0 the k = 0 point is skipped
    (its amplitude is zero by the class invariant).
    """
    if (homogeneous_exponent is None) == (inhomogeneous_exponent is None):
        raise ModeError("give exactly one of the two exponents")
    g = alpha.grid
    amp2 = np.abs(alpha.values) ** 2
    if homogeneous_exponent is not None:
        a = homogeneous_exponent
        kabs = g.k_abs
        w = np.where(kabs > 0, np.where(kabs > 0, kabs, 1.0) ** (2 * a), 0.0)
    else:
        b = inhomogeneous_exponent
        w = (1.0 + g.k_squared) ** b
    total = (amp2 * w[None]).sum() * g.dk_volume
    return float(np.sqrt(total))


def field_metric_norm(alpha: ModeFunction) -> float:
    """The theorem metric || . ||_{h_{1/2} cap h_dot_{-1/2}} (sum of norms)."""
    return mode_norm(alpha, inhomogeneous_exponent=0.5) + mode_norm(
        alpha, homogeneous_exponent=-0.5
    )


def _mode_coefficients(alpha: ModeFunction, basis: PolarizationBasis,
                       kappa: ChargeFormFactor | None):
    """Per-mode vector coefficients c(k) = pref(k) sum_lam eps_lam alpha_lam."""
    g = alpha.grid
    kabs = g.k_abs
    pref = np.where(kabs > 0, 1.0 / np.sqrt(2.0 * np.where(kabs > 0, kabs, 1.0)), 0.0)
    if kappa is not None:
        pref = pref * FOURIER_NORM * kappa.fourier_radial(kabs)
    c = pref[None] * (
        basis.eps1 * alpha.values[0][None] + basis.eps2 * alpha.values[1][None]
    )
    return c  # (3, n, n, n) complex


def vector_potential(alpha: ModeFunction, basis: PolarizationBasis,
                     kappa: ChargeFormFactor | None = None) -> np.ndarray:
    """Real (3, n, n, n) vector potential A or its charge-smeared form kappa*A."""
    c = _mode_coefficients(alpha, basis, kappa)
    out = 2.0 * fourier_synthesis(alpha.grid, c).real
    return out


def divergence(grid: UniformGrid, vec_field: np.ndarray) -> np.ndarray:
    """Spectral divergence of a (3, n, n, n) vector field (gauge monitor)."""
    return divergence_spectral(grid, vec_field)


def gauge_divergence_rel(grid: UniformGrid, vec_field: np.ndarray) -> float:
    """sup |div A| normalized by the field's own gradient scale k_max |A|_inf."""
    div = divergence_spectral(grid, vec_field)
    scale = grid.k_max * float(np.abs(vec_field).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(div).max() / scale)


def frequency_cutoff(alpha: ModeFunction, cutoff: float) -> ModeFunction:
    """Zero all modes with |k| > cutoff. Idempotent; never increases norms."""
    if cutoff < 1.0:
        raise ModeError(f"cutoff must be >= 1, got {cutoff}")
    keep = alpha.grid.k_abs <= cutoff
    return ModeFunction(alpha.grid, alpha.values * keep[None])


def cutoff_tail_norms(alpha: ModeFunction, cutoff: float):
    """Norms of alpha - 1_{|k|<=cutoff} alpha in the theorem metric pieces."""
    tail = ModeFunction(alpha.grid, alpha.values * (alpha.grid.k_abs > cutoff)[None])
    return {
        "h_half": mode_norm(tail, inhomogeneous_exponent=0.5),
        "h_dot_minus_half": mode_norm(tail, homogeneous_exponent=-0.5),
        "metric": field_metric_norm(tail),
    }


def field_source(grid: UniformGrid, basis: PolarizationBasis,
                 kappa: ChargeFormFactor, current_hat: np.ndarray) -> np.ndarray:
    """Mode-equation source S(k, lam) = sqrt(4 pi^3 / |k|) F[kappa] eps_lam . F[J].

    ``current_hat`` is the (3, n, n, n) Fourier transform of the real current.
    Shared by the Schroedinger-side and kinetic-side field updates.
    """
    kabs = grid.k_abs
    pref = np.where(kabs > 0,
                    np.sqrt(4.0 * np.pi ** 3 / np.where(kabs > 0, kabs, 1.0)),
                    0.0) * kappa.fourier_radial(kabs)
    s1 = pref * (basis.eps1 * current_hat).sum(axis=0)
    s2 = pref * (basis.eps2 * current_hat).sum(axis=0)
    out = np.stack([s1, s2])
    out[:, 0, 0, 0] = 0.0
    return out


def vector_amplitude(alpha: ModeFunction, basis: PolarizationBasis) -> np.ndarray:
    """Per-mode vector amplitude a(k) of the potential: A = F-synthesis of a.

    a(k) = (2|k|)^{-1/2} sum_lam [ eps_lam(k) alpha(k,lam)
                                   + eps_lam(-k) conj(alpha(-k,lam)) ].
    Used by the wave-form residual monitor.
    """
    g = alpha.grid
    c = _mode_coefficients(alpha, basis, None)  # (3,n,n,n)
    # c(-k) with FFT ordering: reverse each axis then roll by one
    c_rev = c[:, ::-1, ::-1, ::-1]
    c_rev = np.roll(c_rev, 1, axis=(1, 2, 3))
    return c + np.conj(c_rev)

"""Periodic grids, continuum-normalized Fourier analysis, multipliers, and norms.

Everything downstream lives on a cubic box [-L/2, L/2)^3 with an n^3 grid
(n a power of two) and the dual lattice {2 pi m / L : m in [-n/2, n/2)}^3.
Transforms follow the symmetric convention

    F[f](k) = (2 pi)^{-3/2} int e^{-ikx} f(x) dx ,

approximated by cell-volume quadrature, so that discrete values of smooth,
well-resolved fields match their continuum transforms to spectral accuracy.
Natural units throughout (c = 1, m = 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi
FOURIER_NORM = (2.0 * np.pi) ** 1.5  # (2 pi)^{3/2}, the convolution-theorem factor


class SpectralError(ValueError):
    """Raised on misuse of grid/transform contracts (tags, singular weights)."""


@dataclass(frozen=True)
class UniformGrid:
    """Cubic periodic grid: n points per axis on [-L/2, L/2)^3."""

    n: int
    length: float

    def __post_init__(self):
        if self.n < 2 or (self.n & (self.n - 1)) != 0:
            raise SpectralError(f"grid size must be a power of two >= 2, got {self.n}")
        if not (self.length > 0):
            raise SpectralError(f"box length must be positive, got {self.length}")

    @property
    def dx(self):
        return self.length / self.n

    @property
    def cell_volume(self):
        return self.dx ** 3

    @property
    def volume(self):
        return self.length ** 3

    @property
    def dk(self):
        """Dual lattice spacing 2 pi / L."""
        return TWO_PI / self.length

    @property
    def dk_volume(self):
        """Mode weight for k-space quadrature sums, (2 pi / L)^3."""
        return self.dk ** 3

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @cached_property
    def x1(self):
        """Axis coordinates, ascending from -L/2."""
        return -0.5 * self.length + self.dx * np.arange(self.n)

    @cached_property
    def k1(self):
        """Axis dual coordinates in FFT (unshifted) order."""
        return TWO_PI * np.fft.fftfreq(self.n, d=self.dx)

    @cached_property
    def mode_index1(self):
        """Integer mode indices m in FFT order, m in [-n/2, n/2)."""
        return np.rint(np.fft.fftfreq(self.n) * self.n).astype(np.int64)

    @cached_property
    def kvec(self):
        """Dual lattice as three (n,n,n) arrays in FFT order."""
        return np.meshgrid(self.k1, self.k1, self.k1, indexing="ij")

    @cached_property
    def k1_deriv(self):
        """First-derivative wavenumbers: Nyquist zeroed so real fields keep
        real spectral derivatives (it has no conjugate partner on the grid)."""
        k = self.k1.copy()
        k[self.n // 2] = 0.0
        return k

    @cached_property
    def kvec_deriv(self):
        return np.meshgrid(self.k1_deriv, self.k1_deriv, self.k1_deriv, indexing="ij")

    @cached_property
    def k_squared(self):
        kx, ky, kz = self.kvec
        return kx ** 2 + ky ** 2 + kz ** 2

    @cached_property
    def k_abs(self):
        return np.sqrt(self.k_squared)

    @cached_property
    def xvec(self):
        return np.meshgrid(self.x1, self.x1, self.x1, indexing="ij")

    @cached_property
    def _half_shift_sign(self):
        # e^{-i k x0} with x0 = -L/2 per axis is exactly (-1)^m; real and involutive.
        s = np.where(self.mode_index1 % 2 != 0, -1.0, 1.0)
        return s[:, None, None] * s[None, :, None] * s[None, None, :]

    @property
    def k_max(self):
        """Nyquist wavenumber pi n / L."""
        return np.pi * self.n / self.length


@dataclass
class GridField:
    """Scalar (or stacked) field on a UniformGrid, tagged spatial or Fourier.

    ``values`` has shape (..., n, n, n); leading axes carry vector components
    or batches. The Fourier side is stored in FFT (unshifted) mode order.
    """

    grid: UniformGrid
    values: np.ndarray
    space: str = "x"  # "x" | "k"

    def __post_init__(self):
        if self.space not in ("x", "k"):
            raise SpectralError(f"space tag must be 'x' or 'k', got {self.space!r}")
        if self.values.shape[-3:] != self.grid.shape:
            raise SpectralError(
                f"field shape {self.values.shape} does not end in {self.grid.shape}"
            )

    def copy(self):
        return GridField(self.grid, self.values.copy(), self.space)


def dft_forward(f: GridField) -> GridField:
    """Spatial -> Fourier with the (2 pi)^{-3/2} continuum normalization."""
    if f.space != "x":
        raise SpectralError("dft_forward expects a spatial-side field")
    g = f.grid
    vals = np.fft.fftn(f.values, axes=(-3, -2, -1))
    vals *= g.cell_volume / FOURIER_NORM
    vals *= g._half_shift_sign
    return GridField(g, vals, "k")


def dft_inverse(f: GridField) -> GridField:
    """Fourier -> spatial, exact inverse of :func:`dft_forward`."""
    if f.space != "k":
        raise SpectralError("dft_inverse expects a Fourier-side field")
    g = f.grid
    vals = np.fft.ifftn(f.values * g._half_shift_sign, axes=(-3, -2, -1))
    vals *= g.n ** 3 * g.dk_volume / FOURIER_NORM
    return GridField(g, vals, "x")


def fourier_synthesis(grid: UniformGrid, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate (2 pi)^{-3/2} * sum_k w_k coeffs(k) e^{ikx} on the grid.

    This is the quadrature form of the continuum inverse transform and is the
    single source of truth for mode-sum weights (w_k = dk_volume).
    """
    return dft_inverse(GridField(grid, np.asarray(coeffs, dtype=complex), "k")).values


def apply_multiplier(f: GridField, multiplier, out_space=None, zero_mode="keep") -> GridField:
    """Pointwise Fourier multiplier m(k), returned on the requested side.

    ``multiplier`` is either an (n,n,n) array over the FFT-ordered dual lattice
    or a callable of (kx, ky, kz). The k = 0 policy is explicit: "keep" uses
    m(0) and raises if it is not finite; a float substitutes that value.
    """
    g = f.grid
    if callable(multiplier):
        m = np.asarray(multiplier(*g.kvec))
    else:
        m = np.asarray(multiplier)
    if m.shape != g.shape:
        raise SpectralError(f"multiplier shape {m.shape} != grid shape {g.shape}")
    if zero_mode == "keep":
        if not np.isfinite(m[0, 0, 0]):
            raise SpectralError("multiplier is singular at k = 0 and no value was declared")
    else:
        m = m.copy()
        m[0, 0, 0] = complex(zero_mode) if np.iscomplexobj(m) else float(zero_mode)
    bad = ~np.isfinite(m)
    if bad.any():
        i = np.argwhere(bad)[0]
        k_bad = (g.k1[i[0]], g.k1[i[1]], g.k1[i[2]])
        raise SpectralError(f"multiplier not finite at retained point k = {k_bad}")

    if out_space is None:
        out_space = f.space
    spec = f if f.space == "k" else dft_forward(f)
    out = GridField(g, spec.values * m, "k")
    if out_space == "x":
        out = dft_inverse(out)
    elif out_space != "k":
        raise SpectralError(f"unknown output side {out_space!r}")
    return out


def gradient(f: GridField) -> np.ndarray:
    """Spectral gradient; returns a real/complex (3, n, n, n) spatial array."""
    spec = f if f.space == "k" else dft_forward(f)
    g = f.grid
    comps = np.stack([1j * k * spec.values for k in g.kvec_deriv])
    out = dft_inverse(GridField(g, comps, "k")).values
    if f.space == "x" and not np.iscomplexobj(f.values):
        out = out.real
    return out


def divergence_spectral(grid: UniformGrid, vec: np.ndarray) -> np.ndarray:
    """Spectral divergence of a (3, n, n, n) spatial vector field."""
    spec = dft_forward(GridField(grid, vec.astype(complex), "x")).values
    div_hat = sum(1j * k * spec[a] for a, k in enumerate(grid.kvec_deriv))
    out = dft_inverse(GridField(grid, div_hat, "k")).values
    return out.real if not np.iscomplexobj(vec) else out


# ---------------------------------------------------------------------------
# Transverse polarization basis
# ---------------------------------------------------------------------------

_AXIS_FALLBACK_TOL = 1e-8


@dataclass(frozen=True)
class PolarizationBasis:
    """Two orthonormal transverse unit vectors per nonzero dual-lattice point.

    Entries at k = 0 are zero (the zero mode carries no transverse photons).
    Construction is deterministic: eps1 = normalized (k x z-hat), with x-hat
    substituted when k is within 1e-8 of the z axis, eps2 = k-hat x eps1.
    """

    grid: UniformGrid
    eps1: np.ndarray = field(repr=False)  # (3, n, n, n)
    eps2: np.ndarray = field(repr=False)

    @property
    def nonzero_mask(self):
        return self.grid.k_squared > 0

    def stack(self):
        """Both vectors as a (2, 3, n, n, n) array."""
        return np.stack([self.eps1, self.eps2])


def build_polarization(grid: UniformGrid) -> PolarizationBasis:
    kx, ky, kz = grid.kvec
    kabs = grid.k_abs
    safe = np.where(kabs > 0, kabs, 1.0)

    # k x z-hat = (ky, -kx, 0); degenerate when k is (anti)parallel to z-hat
    c1 = np.stack([ky, -kx, np.zeros_like(kx)])
    degen = np.sqrt(c1[0] ** 2 + c1[1] ** 2) < _AXIS_FALLBACK_TOL * kabs
    # fallback axis x-hat: k x x-hat = (0, kz, -ky)
    c1_alt = np.stack([np.zeros_like(kx), kz, -ky])
    c1 = np.where(degen[None], c1_alt, c1)

    norm1 = np.sqrt((c1 ** 2).sum(axis=0))
    norm1 = np.where(norm1 > 0, norm1, 1.0)
    eps1 = c1 / norm1

    khat = np.stack([kx, ky, kz]) / safe
    eps2 = np.cross(khat, eps1, axis=0)

    zero = kabs == 0
    eps1[:, zero] = 0.0
    eps2[:, zero] = 0.0
    return PolarizationBasis(grid, eps1, eps2)


# ---------------------------------------------------------------------------
# Weighted norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedNormSpec:
    """Which weighted norm to take.

    kind "h_dot": homogeneous mode norm with weight |k|^{2a}   (exponent a)
    kind "h":     inhomogeneous mode norm with weight (1+|k|^2)^b (exponent b)
    kind "sobolev": W_k^{sigma,p} norm of a grid or phase-space field
                    (polynomial weight <z>^k, sigma spectral derivatives, L^p).
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    sigma: int = 0
    k_weight: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("h_dot", "h", "sobolev"):
            raise SpectralError(f"unknown norm kind {self.kind!r}")
        if self.kind == "sobolev" and self.sigma < 0:
            raise SpectralError("sobolev derivative order must be >= 0")


def weighted_norm(obj, spec: WeightedNormSpec) -> float:
    """Quadrature value of the weighted norm named by ``spec``.

    Dispatches on the input: mode functions take the h/h_dot norms; grid
    fields and phase-space fields take the Sobolev norms with derivatives
    computed spectrally.
    """
    from . import modes as _modes  # local import to avoid a cycle
    from . import wigner as _wigner

    if isinstance(obj, _modes.ModeFunction):
        if spec.kind == "h_dot":
            return _modes.mode_norm(obj, homogeneous_exponent=spec.a)
        if spec.kind == "h":
            return _modes.mode_norm(obj, inhomogeneous_exponent=spec.b)
        raise SpectralError("sobolev norms do not apply to mode functions")
    if isinstance(obj, GridField):
        if spec.kind != "sobolev":
            raise SpectralError("grid fields take sobolev norms")
        return _sobolev_norm_grid(obj, spec)
    if isinstance(obj, _wigner.PhaseSpaceField):
        if spec.kind != "sobolev":
            raise SpectralError("phase-space fields take sobolev norms")
        return _wigner.sobolev_norm_phase_space(obj, spec.sigma, spec.k_weight, spec.p)
    raise SpectralError(f"no weighted norm defined for {type(obj).__name__}")


def _multi_indices(order, dims):
    """All derivative multi-indices with |alpha| <= order over ``dims`` axes."""
    out = [()]
    for total in range(1, order + 1):
        def rec(prefix, remaining, axes_left):
            if axes_left == 1:
                yield prefix + (remaining,)
                return
            for h in range(remaining + 1):
                yield from rec(prefix + (h,), remaining - h, axes_left - 1)
        out.extend(rec((), total, dims))
    return out


def _sobolev_norm_grid(f: GridField, spec: WeightedNormSpec) -> float:
    g = f.grid
    fx = f if f.space == "x" else dft_inverse(f)
    spec_side = dft_forward(fx)
    xw = (1.0 + sum(x ** 2 for x in g.xvec)) ** (spec.k_weight / 2.0)
    terms = []
    for alpha in _multi_indices(spec.sigma, 3):
        if len(alpha) == 0:
            d = fx.values
        else:
            mult = np.ones(g.shape, dtype=complex)
            for axis, h in enumerate(alpha):
                if h:
                    mult = mult * (1j * g.kvec[axis]) ** h
            d = dft_inverse(GridField(g, spec_side.values * mult, "k")).values
        terms.append(xw * np.abs(d))
    if spec.p == np.inf:
        return float(max(t.max() for t in terms))
    pw = sum((t ** spec.p).sum() for t in terms) * g.cell_volume
    return float(pw ** (1.0 / spec.p))

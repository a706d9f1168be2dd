"""Wigner transform, Weyl quantization, Husimi mollification, cutoffs.

Phase space is the box times a velocity cube. The natural velocity grid has
spacing dv = eps * pi / L (half the eps-scaled dual lattice): on that grid the
discrete Wigner transform of a band-limited ensemble is exact, mass comes out
as eps^3 Tr p identically, and the Weyl quadrature below inverts it. States
must keep per-axis mode indices within about n/4 for the pair frequencies to
stay below the grid Nyquist; the transform checks and refuses otherwise.

The Husimi mollification multiplies by exact Gaussian transform factors in
the offset domain, so its output consists of point samples of the continuum
(x-periodized) mollified transform; nonnegativity for sigma >= sqrt(eps) then
holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .orbitals import DENSE_KERNEL_MAX_N, KernelOperator, OrbitalEnsemble
from .spectral import GridField, UniformGrid, dft_forward, dft_inverse

PI3 = np.pi ** 3


class PhaseSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform velocity grid: n_v points per axis, centered, spacing dv."""

    n_v: int
    dv: float

    def __post_init__(self):
        if self.n_v < 2 or self.n_v % 2 != 0:
            raise PhaseSpaceError("n_v must be even and >= 2")
        if not (self.dv > 0):
            raise PhaseSpaceError("dv must be positive")

    @property
    def v1(self):
        return self.dv * (np.arange(self.n_v) - self.n_v // 2)

    @property
    def v_max(self):
        return self.dv * self.n_v / 2.0

    @property
    def cell_volume(self):
        return self.dv ** 3

    @property
    def shape(self):
        return (self.n_v, self.n_v, self.n_v)

    @classmethod
    def natural(cls, grid: UniformGrid, eps: float, n_v=None):
        """The exact-transform grid: dv = eps pi / L, n_v = n by default."""
        return cls(n_v if n_v is not None else grid.n, eps * np.pi / grid.length)

    def is_natural_for(self, grid: UniformGrid, eps: float):
        return self.n_v == grid.n and abs(self.dv - eps * np.pi / grid.length) <= 1e-12 * self.dv


@dataclass
class PhaseSpaceField:
    """Real function on (x, v): values shaped (n, n, n, n_v, n_v, n_v)."""

    grid: UniformGrid
    vgrid: VelocityGrid
    values: np.ndarray = field(repr=False)
    eps: float = 0.0

    def __post_init__(self):
        expect = self.grid.shape + self.vgrid.shape
        if self.values.shape != expect:
            raise PhaseSpaceError(f"values shape {self.values.shape} != {expect}")

    @property
    def cell_volume6(self):
        return self.grid.cell_volume * self.vgrid.cell_volume

    def mass(self):
        return float(self.values.sum() * self.cell_volume6)

    def velocity_marginal(self):
        """Integral over v: the spatial density carried by the field."""
        return self.values.sum(axis=(3, 4, 5)) * self.vgrid.cell_volume

    def copy(self):
        return PhaseSpaceField(self.grid, self.vgrid, self.values.copy(), self.eps)


# ---------------------------------------------------------------------------
# Offset-domain core shared by the Wigner transform and the Husimi map
# ---------------------------------------------------------------------------


def _offset_coordinates(grid: UniformGrid):
    """Minimal-image offset coordinate per FFT-ordered offset index."""
    n = grid.n
    j = np.arange(n)
    return ((j + n // 2) % n - n // 2) * grid.dx


def _diagonal_offset_data(obj, grid: UniformGrid) -> np.ndarray:
    """G[u, x] = p(x + u; x - u) for all grid offsets u (FFT index order)."""
    n = grid.n
    m = n ** 3
    if n > DENSE_KERNEL_MAX_N:
        raise PhaseSpaceError(f"phase-space transforms are limited to n <= {DENSE_KERNEL_MAX_N}")
    if isinstance(obj, OrbitalEnsemble):
        v = obj.flat()
        kernel = v.T @ v.conj()
    elif isinstance(obj, KernelOperator):
        kernel = obj.values
    else:
        raise PhaseSpaceError(f"cannot transform a {type(obj).__name__}")

    idx = np.arange(n, dtype=np.int32)
    plus1 = (idx[None, :] + idx[:, None]) % n   # [u_axis, x_axis]
    minus1 = (idx[None, :] - idx[:, None]) % n

    def flat_indices(per_axis):
        a = per_axis.astype(np.int64)
        f = (a[:, None, None, :, None, None] * n + a[None, :, None, None, :, None]) * n \
            + a[None, None, :, None, None, :]
        return f.reshape(m, m)

    s_flat = flat_indices(plus1.T)   # rows u, cols x -> (x+u) index
    t_flat = flat_indices(minus1)    # (x-u) index
    return kernel[s_flat, t_flat]


def _band_limit_check(obj, grid: UniformGrid, strict=True):
    """Occupied per-axis mode index must stay below (n/2 - 1)/2 for exactness."""
    if isinstance(obj, OrbitalEnsemble):
        spec = dft_forward(GridField(grid, obj.orbitals, "x")).values
        weight = (np.abs(spec) ** 2).sum(axis=0)
    elif isinstance(obj, KernelOperator):
        return None  # kernels carry no sharp band limit; caller's responsibility
    else:
        return None
    tot = weight.sum()
    if tot == 0:
        return 0
    limit = (grid.n // 2 - 1) // 2
    absm = np.abs(grid.mode_index1)
    live = weight > 1e-24 * tot
    occupied = 0
    for axis in range(3):
        m_axis = np.moveaxis(np.broadcast_to(absm[(slice(None),) + (None,) * 2], grid.shape), 0, axis)
        occupied = max(occupied, int(m_axis[live].max()) if live.any() else 0)
    if strict and occupied > limit:
        raise PhaseSpaceError(
            f"ensemble occupies per-axis mode index {occupied} > {limit}; "
            "the discrete transform would alias (enlarge the grid)"
        )
    return occupied


def wigner_transform(obj, vgrid: VelocityGrid | None = None, eps: float | None = None,
                     check_band_limit=True) -> PhaseSpaceField:
    """Phase-space transform W(x, v) = (eps/2pi)^3 int p(x+eps y/2; x-eps y/2) e^{-ivy} dy.

    ``obj`` is an orbital ensemble (eps taken from it) or a dense kernel
    (pass eps explicitly). On the natural velocity grid the map is exact for
    band-limited states; other velocity grids evaluate the same offset-domain
    trigonometric sum pointwise.
    """
    if isinstance(obj, OrbitalEnsemble):
        grid, eps_val = obj.grid, obj.eps
    elif isinstance(obj, KernelOperator):
        if eps is None:
            raise PhaseSpaceError("pass eps for kernel input")
        grid, eps_val = obj.grid, eps
    else:
        raise PhaseSpaceError(f"cannot transform a {type(obj).__name__}")
    if vgrid is None:
        vgrid = VelocityGrid.natural(grid, eps_val)
    if check_band_limit:
        _band_limit_check(obj, grid)

    g_data = _diagonal_offset_data(obj, grid)  # (u_flat, x_flat)
    w = _offset_to_velocity(g_data, grid, vgrid, eps_val)
    return PhaseSpaceField(grid, vgrid, w, eps_val)


def _offset_to_velocity(g_data: np.ndarray, grid: UniformGrid, vgrid: VelocityGrid,
                        eps: float, extra_offset_damping=None) -> np.ndarray:
    """pi^{-3} dV sum_u G(u, x) e^{-2 i v u / eps} -> real (x, v) array."""
    n = grid.n
    m = n ** 3
    pref = grid.cell_volume / PI3
    if extra_offset_damping is not None:
        g_data = g_data * extra_offset_damping.reshape(m, 1)

    if vgrid.is_natural_for(grid, eps):
        cube = g_data.reshape(n, n, n, m)
        spec = np.fft.fftn(cube, axes=(0, 1, 2))
        spec = np.fft.fftshift(spec, axes=(0, 1, 2))
        w = spec.reshape(m, m).T.reshape(grid.shape + vgrid.shape)
        return np.ascontiguousarray(w.real * pref)

    u1 = _offset_coordinates(grid)
    phase = np.exp(-2j * np.outer(vgrid.v1, u1) / eps)  # (n_v, n)
    cube = g_data.reshape(n, n, n, m)
    cube = np.tensordot(phase, cube, axes=([1], [0]))        # (n_v, n, n, m)
    cube = np.tensordot(phase, cube, axes=([1], [1]))        # (n_v, n_v, n, m)
    cube = np.tensordot(phase, cube, axes=([1], [2]))        # (n_v, n_v, n_v, m)
    w = cube.transpose(3, 2, 1, 0).reshape(grid.shape + vgrid.shape)
    return np.ascontiguousarray(w.real * pref)


def wigner_transform_callable(kernel_fn, grid: UniformGrid, eps: float,
                              vgrid: VelocityGrid | None = None,
                              upsample: int = 2) -> PhaseSpaceField:
    """Wigner transform of an analytically given kernel K(a; b).

    ``kernel_fn(a_pts, b_pts)`` is evaluated at literal coordinates (shape
    (..., 3) each), with a = x + u and b = x - u for offsets u on an
    ``upsample``-refined cover of [-L/2, L/2)^3. Upsampling widens the
    resolved velocity window beyond the matrix-kernel double-cover limit, so
    smooth decaying kernels reach the analytic phase-space profile to near
    machine accuracy on the natural velocity grid.
    """
    if vgrid is None:
        vgrid = VelocityGrid.natural(grid, eps)
    n = grid.n
    n_u = upsample * n
    if vgrid.n_v > n_u or abs(vgrid.dv - eps * np.pi / grid.length) > 1e-12 * vgrid.dv:
        raise PhaseSpaceError("callable transform needs the natural dv and n_v <= upsample * n")
    du = grid.dx / upsample
    u1 = -0.5 * grid.length + du * np.arange(n_u)
    uu = np.stack(np.meshgrid(u1, u1, u1, indexing="ij"), axis=-1)  # (n_u,n_u,n_u,3)
    sgn1 = np.where(np.arange(n_u) % 2 != 0, -1.0, 1.0)
    # e^{-2 i v_m u / eps} = (-1)^m DFT_{n_u}; central slice covers the vgrid
    lo = n_u // 2 - vgrid.n_v // 2
    hi = lo + vgrid.n_v
    sgn = sgn1[lo:hi]
    pref = du ** 3 / PI3

    out = np.empty(grid.shape + vgrid.shape)
    xs = grid.x1
    for i1, x1 in enumerate(xs):
        for i2, x2 in enumerate(xs):
            xrow = np.array([[x1, x2, x3] for x3 in xs])  # (n, 3)
            a_pts = xrow[:, None, None, None, :] + uu[None]
            b_pts = xrow[:, None, None, None, :] - uu[None]
            gslab = kernel_fn(a_pts, b_pts)  # (n, n_u, n_u, n_u)
            spec = np.fft.fftshift(np.fft.fftn(gslab, axes=(1, 2, 3)), axes=(1, 2, 3))
            spec = spec[:, lo:hi, lo:hi, lo:hi]
            spec = spec * (sgn[None, :, None, None] * sgn[None, None, :, None]
                           * sgn[None, None, None, :])
            out[i1, i2] = spec.real * pref
    return PhaseSpaceField(grid, vgrid, out, eps)


def weyl_quantize(f: PhaseSpaceField, eps: float, n_particles: float) -> KernelOperator:
    """Kernel N int f((x+y)/2, v) e^{i v (x-y)/eps} dv as a dense operator.

    Midpoints are handled through the x-Fourier series of f, so no off-grid
    interpolation enters; on the natural velocity grid this is the exact
    inverse of the Wigner transform for band-limited states.
    """
    g = f.grid
    n = g.n
    if n > DENSE_KERNEL_MAX_N:
        raise PhaseSpaceError(f"weyl_quantize materializes kernels; needs n <= {DENSE_KERNEL_MAX_N}")

    vals = np.fft.fftn(f.values, axes=(0, 1, 2)) / n ** 3
    sgn = g._half_shift_sign
    vals *= sgn[:, :, :, None, None, None]  # x-Fourier coefficients c_d(v)

    dvec = g.k1          # frequency d per axis, FFT order
    vvec = f.vgrid.v1
    x = g.x1
    # per-axis joint transform (d, m) -> (i, j)
    m1 = np.exp(1j * np.add.outer(dvec / 2.0, vvec / eps).reshape(-1)[:, None] * x[None, :])
    m2 = np.exp(1j * np.subtract.outer(dvec / 2.0, vvec / eps).reshape(-1)[:, None] * x[None, :])
    wmat = (m1[:, :, None] * m2[:, None, :]).reshape(n * f.vgrid.n_v, n * n)

    n_v = f.vgrid.n_v
    t = vals.transpose(0, 3, 1, 4, 2, 5).reshape(n * n_v, n * n_v, n * n_v)
    t = np.tensordot(wmat, t, axes=([0], [0]))   # (i1 j1, dm2, dm3)
    t = np.tensordot(wmat, t, axes=([0], [1]))   # (i2 j2, i1 j1, dm3)
    t = np.tensordot(wmat, t, axes=([0], [2]))   # (i3 j3, i2 j2, i1 j1)
    t = t.reshape(n, n, n, n, n, n)              # (i3, j3, i2, j2, i1, j1)
    t = t.transpose(4, 2, 0, 5, 3, 1).reshape(n ** 3, n ** 3)
    t *= n_particles * f.vgrid.cell_volume
    herm = float(np.abs(t - t.conj().T).max())
    scale = float(np.abs(t).max())
    return KernelOperator(g, t, hermitian=bool(scale == 0 or herm <= 1e-10 * scale))


# ---------------------------------------------------------------------------
# Husimi mollification
# ---------------------------------------------------------------------------


def _x_gaussian_multiplier(grid: UniformGrid, sigma: float):
    return np.exp(-0.25 * sigma ** 2 * grid.k_squared)


def husimi(obj, sigma: float, vgrid: VelocityGrid | None = None,
           eps: float | None = None) -> PhaseSpaceField:
    """Gaussian phase-space mollification G_sigma * W[.] with width sigma.

    For operator-side input the velocity convolution happens exactly in the
    offset domain (factor e^{-(sigma |u| / eps)^2}) and the spatial one as a
    periodized-Gaussian Fourier multiplier, which preserves the continuum
    nonnegativity for sigma >= sqrt(eps) up to rounding. Phase-space input is
    mollified spectrally on all six (periodic) axes.
    """
    if not (0 < sigma <= 1):
        raise PhaseSpaceError(f"sigma must lie in (0, 1], got {sigma}")

    if isinstance(obj, PhaseSpaceField):
        return _husimi_of_field(obj, sigma)

    if isinstance(obj, OrbitalEnsemble):
        grid, eps_val = obj.grid, obj.eps
    elif isinstance(obj, KernelOperator):
        if eps is None:
            raise PhaseSpaceError("pass eps for kernel input")
        grid, eps_val = obj.grid, eps
    else:
        raise PhaseSpaceError(f"cannot mollify a {type(obj).__name__}")
    if vgrid is None:
        vgrid = VelocityGrid.natural(grid, eps_val)

    _band_limit_check(obj, grid)
    g_data = _diagonal_offset_data(obj, grid)  # (u_flat, x_flat)
    n = grid.n
    m = n ** 3

    # spatial mollification: multiplier on the x-Fourier side of G[u, .]
    cube = g_data.reshape(m, n, n, n)
    spec = np.fft.fftn(cube, axes=(1, 2, 3))
    spec *= _x_gaussian_multiplier(grid, sigma)[None]
    g_data = np.fft.ifftn(spec, axes=(1, 2, 3)).reshape(m, m)

    # velocity mollification: exact Gaussian damping of the offset data
    u1 = _offset_coordinates(grid)
    u2 = (u1[:, None, None] ** 2 + u1[None, :, None] ** 2 + u1[None, None, :] ** 2).reshape(m)
    damping = np.exp(-(sigma / eps_val) ** 2 * u2)

    w = _offset_to_velocity(g_data, grid, vgrid, eps_val, extra_offset_damping=damping)
    return PhaseSpaceField(grid, vgrid, w, eps_val)


def _husimi_of_field(f: PhaseSpaceField, sigma: float) -> PhaseSpaceField:
    vals = np.fft.fftn(f.values, axes=(0, 1, 2, 3, 4, 5))
    gmul = _x_gaussian_multiplier(f.grid, sigma)
    vals *= gmul[:, :, :, None, None, None]
    om = 2.0 * np.pi * np.fft.fftfreq(f.vgrid.n_v, d=f.vgrid.dv)
    vm = np.exp(-0.25 * sigma ** 2 * om ** 2)
    vals *= vm[None, None, None, :, None, None]
    vals *= vm[None, None, None, None, :, None]
    vals *= vm[None, None, None, None, None, :]
    out = np.fft.ifftn(vals, axes=(0, 1, 2, 3, 4, 5)).real
    return PhaseSpaceField(f.grid, f.vgrid, out, f.eps)


# ---------------------------------------------------------------------------
# Velocity cutoff
# ---------------------------------------------------------------------------


class VelocityCutoff:
    """Smooth radial cutoff: indicator of the ball |v| <= L + 2 mollified by
    the unit bump, so that eta = 1 for |v| <= L + 1 and eta = 0 for |v| >= L + 3.
    Evaluated by radial Gauss-Legendre quadrature with the analytic angular
    fraction of the mollifier ball inside the indicator ball.
    """

    def __init__(self, radius: float, quad_nodes: int = 200):
        if not (radius > 0):
            raise PhaseSpaceError("cutoff radius must be positive")
        self.radius = float(radius)
        nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
        self._s = 0.5 * (nodes + 1.0)           # [0, 1]
        self._w = 0.5 * weights
        bump = np.exp(-1.0 / (1.0 - self._s ** 2))
        self._bump_w = self._w * bump * self._s ** 2
        self._norm = float(self._bump_w.sum())  # radial part of the bump mass

    def __call__(self, radii):
        r = np.atleast_1d(np.asarray(radii, dtype=float))
        big_r = self.radius + 2.0
        s = self._s[None, :]
        rr = r[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            cos_star = (rr ** 2 + s ** 2 - big_r ** 2) / (2.0 * rr * s)
        cos_star = np.where(rr > 0, cos_star, -1.0)  # r = 0: full ball inside
        frac = 0.5 * (1.0 - np.clip(cos_star, -1.0, 1.0))
        out = (self._bump_w[None, :] * frac).sum(axis=1) / self._norm
        out = np.clip(out, 0.0, 1.0)
        if np.isscalar(radii) or np.asarray(radii).ndim == 0:
            return float(out[0])
        return out.reshape(np.shape(radii))

    def apply(self, f: PhaseSpaceField) -> PhaseSpaceField:
        v1 = f.vgrid.v1
        r = np.sqrt(v1[:, None, None] ** 2 + v1[None, :, None] ** 2 + v1[None, None, :] ** 2)
        eta = self(r)
        return PhaseSpaceField(f.grid, f.vgrid,
                               f.values * eta[None, None, None], f.eps)


def velocity_cutoff_eta(radius: float) -> VelocityCutoff:
    return VelocityCutoff(radius)


# ---------------------------------------------------------------------------
# Regularization pipeline and distances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegularizationParams:
    """sigma (mollification width), velocity cutoff radius, frequency cutoff.

    ``frequency_cutoff = inf`` is the no-cutoff sentinel. The optional
    paper-scaling preset ties the parameters to eps; at desk scale those
    exponents are nearly inert and default studies use resolvable values.
    """

    sigma: float
    cutoff_radius: float
    frequency_cutoff: float = np.inf
    label: str = "custom"

    def __post_init__(self):
        if not (0 < self.sigma <= 1):
            raise PhaseSpaceError("sigma must lie in (0, 1]")
        if not (self.cutoff_radius > 0):
            raise PhaseSpaceError("cutoff radius must be positive")
        if not (self.frequency_cutoff >= 1):
            raise PhaseSpaceError("frequency cutoff must be >= 1")

    @classmethod
    def paper_scaling(cls, eps: float, cutoff_radius: float):
        lam = eps ** (-1.0 / 1094.0)
        return cls(sigma=lam ** -2.0, cutoff_radius=cutoff_radius,
                   frequency_cutoff=lam, label="paper-scaling")


CLIP_MASS_TOL = 1e-9


def regularize_initial_data(p: OrbitalEnsemble, alpha, params: RegularizationParams,
                            vgrid: VelocityGrid | None = None,
                            compute_trace_distance: bool | None = None,
                            require_positivity: bool | None = None):
    """eta_L-cut Husimi mollification of p plus the frequency-cut field.

    Returns a dict with the regularized phase-space field ``m``, the cut mode
    function ``alpha_cut``, and a report holding the two comparison distances
    (Sobolev trace distance of the re-quantized field to p, and the field
    tail in the theorem metric) plus positivity/mass bookkeeping.

    Positivity of the mollified transform is guaranteed for sigma >= sqrt(eps)
    and enforced then (tiny negatives clipped, large ones abort); below that
    width the field may go negative and is returned unclipped with the
    violation reported, unless ``require_positivity`` forces the gate.
    """
    from .modes import ModeFunction, cutoff_tail_norms, frequency_cutoff, mode_norm
    from .orbitals import sobolev_trace_distance

    if require_positivity is None:
        require_positivity = params.sigma >= np.sqrt(p.eps) - 1e-12
    elif require_positivity and params.sigma < np.sqrt(p.eps) - 1e-12:
        raise PhaseSpaceError(
            f"sigma = {params.sigma} below sqrt(eps) = {np.sqrt(p.eps):.4f}; "
            "positivity cannot be relied upon"
        )
    m = husimi(p, params.sigma, vgrid=vgrid)
    m = VelocityCutoff(params.cutoff_radius).apply(m)

    min_value = float(m.values.min())
    neg_mass = float(-np.clip(m.values, None, 0.0).sum() * m.cell_volume6)
    total_mass = m.mass()
    if require_positivity:
        if neg_mass > CLIP_MASS_TOL * max(total_mass, 1e-300):
            raise PhaseSpaceError(
                f"negative mass {neg_mass:.3e} exceeds tolerance; regularization misused"
            )
        np.clip(m.values, 0.0, None, out=m.values)

    if isinstance(alpha, ModeFunction):
        if np.isfinite(params.frequency_cutoff):
            alpha_cut = frequency_cutoff(alpha, params.frequency_cutoff)
            tail = cutoff_tail_norms(alpha, params.frequency_cutoff)
        else:
            alpha_cut = alpha.copy()
            tail = {"h_half": 0.0, "h_dot_minus_half": 0.0, "metric": 0.0}
        alpha_h1 = mode_norm(alpha, inhomogeneous_exponent=1.0)
    else:
        alpha_cut, tail, alpha_h1 = None, None, None

    if compute_trace_distance is None:
        compute_trace_distance = p.grid.n <= DENSE_KERNEL_MAX_N and m.vgrid.is_natural_for(p.grid, p.eps)
    trace_distance = None
    if compute_trace_distance:
        requant = weyl_quantize(m, p.eps, p.n_orbitals)
        trace_distance = sobolev_trace_distance(requant, p, p.eps)

    report = {
        "sigma": params.sigma,
        "cutoff_radius": params.cutoff_radius,
        "frequency_cutoff": params.frequency_cutoff,
        "label": params.label,
        "mass": total_mass,
        "min_value": min_value,
        "clipped_negative_mass": neg_mass,
        "trace_distance": trace_distance,
        "trace_distance_per_particle": (trace_distance / p.n_orbitals
                                        if trace_distance is not None else None),
        "field_tail": tail,
        "alpha_h1": alpha_h1,
    }
    return {"m": m, "alpha_cut": alpha_cut, "report": report}


def sobolev_norm_phase_space(f: PhaseSpaceField, sigma_order: int, k_weight: float,
                             p_exp: float) -> float:
    """W_k^{sigma,p} norm on (x, v) with spectral derivatives on all six axes."""
    from .spectral import _multi_indices

    vals = f.values
    freqs = [f.grid.k1] * 3 + [2.0 * np.pi * np.fft.fftfreq(f.vgrid.n_v, d=f.vgrid.dv)] * 3
    coords = [f.grid.x1] * 3 + [f.vgrid.v1] * 3
    z2 = np.zeros(vals.shape)
    for axis, c in enumerate(coords):
        shape = [1] * 6
        shape[axis] = -1
        z2 = z2 + (c ** 2).reshape(shape)
    xw = (1.0 + z2) ** (k_weight / 2.0)

    spec = np.fft.fftn(vals, axes=tuple(range(6)))
    terms = []
    for alpha in _multi_indices(sigma_order, 6):
        if len(alpha) == 0:
            d = vals
        else:
            mult = np.ones((), dtype=complex)
            work = spec.copy()
            for axis, h in enumerate(alpha):
                if h:
                    shape = [1] * 6
                    shape[axis] = -1
                    work = work * (1j * freqs[axis]).reshape(shape) ** h
            d = np.fft.ifftn(work, axes=tuple(range(6))).real
        terms.append(np.abs(xw * d))
    if p_exp == np.inf:
        return float(max(t.max() for t in terms))
    acc = sum((t ** p_exp).sum() for t in terms) * f.cell_volume6
    return float(acc ** (1.0 / p_exp))


def product_state_expected_wigner(chi, phi_hat, grid: UniformGrid, vgrid: VelocityGrid,
                                  eps: float) -> PhaseSpaceField:
    """The closed-form phase-space profile chi(x) F[phi](v) of a product kernel."""
    xs = np.stack(np.meshgrid(grid.x1, grid.x1, grid.x1, indexing="ij"), axis=-1)
    vs = np.stack(np.meshgrid(vgrid.v1, vgrid.v1, vgrid.v1, indexing="ij"), axis=-1)
    chi_x = np.asarray(chi(xs), dtype=float)
    fhat_v = np.asarray(phi_hat(vs), dtype=float)
    vals = chi_x[:, :, :, None, None, None] * fhat_v[None, None, None]
    return PhaseSpaceField(grid, vgrid, vals, eps)


def ms_vm_distance(p: OrbitalEnsemble, f_obj, kappa, basis, alpha_ms=None,
                   alpha_vm=None, kde_bandwidth=None, low_mode_radius=None):
    """Distance bundle between an orbital state and a kinetic state.

    f_obj is a PhaseSpaceField or a ParticleEnsemble (then a 6-D kernel
    density estimate with the reported bandwidth is built first). Returns the
    Sobolev trace distance (small grids only; None otherwise) and the
    observable gaps: L^2 density gap, sup current gap over low modes, field
    metric gap when both mode functions are given, and the per-particle
    energy gap left to the caller (it needs both solvers' energies).
    """
    from .modes import field_metric_norm
    from .orbitals import current, density, sobolev_trace_distance
    from .vm import ParticleEnsemble, particle_density_modes

    g = p.grid
    if low_mode_radius is None:
        low_mode_radius = 2.5 * g.dk

    if isinstance(f_obj, ParticleEnsemble):
        f_field = None
        rho_hat_f = particle_density_modes(f_obj, g)
        current_hat_f = _particle_current_modes(f_obj, g, kappa, basis, alpha_vm)
        bandwidth = kde_bandwidth
    elif isinstance(f_obj, PhaseSpaceField):
        f_field = f_obj
        rho_f = f_obj.velocity_marginal()
        rho_hat_f = dft_forward(GridField(g, rho_f.astype(complex), "x")).values
        current_hat_f = _field_current_modes(f_obj, kappa, basis, alpha_vm)
        bandwidth = None
    else:
        raise PhaseSpaceError(f"unsupported kinetic side {type(f_obj).__name__}")

    rho_p = density(p)
    rho_hat_p = dft_forward(GridField(g, rho_p.astype(complex), "x")).values
    density_gap = float(np.sqrt((np.abs(rho_hat_p - rho_hat_f) ** 2).sum() * g.dk_volume))

    j_p = current(p, alpha_ms, kappa, basis)
    j_hat_p = dft_forward(GridField(g, j_p.astype(complex), "x")).values
    low = g.k_abs <= low_mode_radius
    current_gap = float(np.abs((j_hat_p - current_hat_f)[:, low]).max())

    field_gap = None
    if alpha_ms is not None and alpha_vm is not None:
        from .modes import ModeFunction
        diff = ModeFunction(g, alpha_ms.values - alpha_vm.values)
        field_gap = field_metric_norm(diff)

    trace = None
    if f_field is not None and g.n <= DENSE_KERNEL_MAX_N \
            and f_field.vgrid.is_natural_for(g, p.eps):
        requant = weyl_quantize(f_field, p.eps, p.n_orbitals)
        trace = sobolev_trace_distance(requant, p, p.eps) / p.n_orbitals

    return {
        "sobolev_trace_per_particle": trace,
        "density_gap_l2": density_gap,
        "current_gap_low_modes": current_gap,
        "field_gap_metric": field_gap,
        "kde_bandwidth": bandwidth,
        "low_mode_radius": low_mode_radius,
    }


def _field_current_modes(f: PhaseSpaceField, kappa, basis, alpha):
    """F[J~] for a gridded kinetic state: 2 int (v - kappa*A) f dv, mode side."""
    from .modes import vector_potential

    g = f.grid
    v1 = f.vgrid.v1
    dvol = f.vgrid.cell_volume
    moments = np.empty((3,) + g.shape)
    for axis in range(3):
        shape = [1, 1, 1, 1, 1, 1]
        shape[3 + axis] = -1
        moments[axis] = (f.values * v1.reshape(shape)).sum(axis=(3, 4, 5)) * dvol
    rho = f.velocity_marginal()
    jvec = 2.0 * moments
    if alpha is not None:
        a = vector_potential(alpha, basis, kappa)
        jvec -= 2.0 * rho[None] * a
    return dft_forward(GridField(g, jvec.astype(complex), "x")).values


def _particle_current_modes(particles, g, kappa, basis, alpha):
    from .vm import current_tilde_modes
    return current_tilde_modes(particles, g, kappa, basis, alpha)

"""Rank-N orbital ensembles, derived fields, Schatten diagnostics, fixtures.

The electron state is a rank-N projection p = sum_j |phi_j><phi_j| held as N
orthonormal orbitals on the grid, with semiclassical parameter eps = N^{-1/3}
when built through the scaling constructors. Dense kernels are materialized
only on small grids (n <= 16); everything else uses the rank structure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .charge import ChargeFormFactor, coulomb_multiplier_on_grid
from .modes import ModeFunction, vector_potential
from .spectral import (
    FOURIER_NORM,
    GridField,
    PolarizationBasis,
    UniformGrid,
    dft_forward,
    dft_inverse,
)

ORTHONORMALITY_TOL = 1e-8
DENSE_KERNEL_MAX_N = 16


class EnsembleError(ValueError):
    pass


@dataclass
class OrbitalEnsemble:
    """N orthonormal complex orbitals, shape (N, n, n, n), spatial side."""

    grid: UniformGrid
    orbitals: np.ndarray = field(repr=False)
    eps: float = 0.0

    def __post_init__(self):
        if self.orbitals.ndim != 4 or self.orbitals.shape[1:] != self.grid.shape:
            raise EnsembleError(f"orbital array shape {self.orbitals.shape} invalid")
        if not (self.eps > 0):
            raise EnsembleError("eps must be positive")

    @property
    def n_orbitals(self):
        return self.orbitals.shape[0]

    def flat(self):
        return self.orbitals.reshape(self.n_orbitals, -1)

    def gram(self):
        v = self.flat()
        return (v.conj() @ v.T) * self.grid.cell_volume

    def gram_deviation(self):
        g = self.gram()
        return float(np.abs(g - np.eye(self.n_orbitals)).max())

    def check_orthonormal(self, tol=ORTHONORMALITY_TOL):
        dev = self.gram_deviation()
        if dev > tol:
            raise EnsembleError(f"orbital Gram deviation {dev:.3e} exceeds {tol:.1e}")
        return dev

    def copy(self):
        return OrbitalEnsemble(self.grid, self.orbitals.copy(), self.eps)

    def kernel_operator(self):
        """Dense p(x; y); refuses grids beyond n = 16 per axis (memory)."""
        if self.grid.n > DENSE_KERNEL_MAX_N:
            raise EnsembleError(
                f"dense kernels are limited to n <= {DENSE_KERNEL_MAX_N}, grid has n = {self.grid.n}"
            )
        v = self.flat()
        return KernelOperator(self.grid, v.T @ v.conj(), hermitian=True)

    @classmethod
    def from_orbitals(cls, grid, orbitals, eps=None, check=True):
        orbitals = np.asarray(orbitals, dtype=complex)
        n_orb = orbitals.shape[0]
        ens = cls(grid, orbitals, eps if eps is not None else n_orb ** (-1.0 / 3.0))
        if check:
            ens.check_orthonormal()
        return ens


def lowdin_orthonormalize(grid: UniformGrid, raw: np.ndarray) -> np.ndarray:
    """Symmetric (Loewdin) orthonormalization of a stack of grid functions."""
    v = raw.reshape(raw.shape[0], -1)
    g = (v @ v.conj().T) * grid.cell_volume  # g[j,l] = <phi_l, phi_j>
    evals, evecs = np.linalg.eigh(g)
    if evals.min() <= 1e-12 * evals.max():
        raise EnsembleError("raw orbitals are numerically dependent; cannot orthonormalize")
    g_inv_half = (evecs * evals ** -0.5) @ evecs.conj().T
    return (g_inv_half @ v).reshape(raw.shape)


@dataclass
class KernelOperator:
    """Dense integral kernel A(x; y) over grid points.

    The matrix holds kernel VALUES; the operator action carries the
    cell-volume quadrature weight, so singular values of the operator are
    cell_volume * svd(values).
    """

    grid: UniformGrid
    values: np.ndarray = field(repr=False)
    hermitian: bool = False

    def __post_init__(self):
        m = self.grid.n ** 3
        if self.values.shape != (m, m):
            raise EnsembleError(f"kernel matrix must be ({m},{m}), got {self.values.shape}")

    def apply(self, psi_flat):
        return self.values @ psi_flat * self.grid.cell_volume

    def trace(self):
        return complex(np.trace(self.values)) * self.grid.cell_volume

    def __sub__(self, other):
        if other.grid is not self.grid and other.grid != self.grid:
            raise EnsembleError("kernel grids differ")
        return KernelOperator(self.grid, self.values - other.values,
                              hermitian=self.hermitian and other.hermitian)


def schatten_norm(op: KernelOperator, order) -> float:
    """S^1 / S^2 / S^inf norm of the kernel operator (quadrature-weighted)."""
    if not np.all(np.isfinite(op.values)):
        raise EnsembleError("kernel contains non-finite entries")
    dv = op.grid.cell_volume
    if order == 2:
        return float(np.linalg.norm(op.values) * dv)
    if op.hermitian:
        s = np.abs(np.linalg.eigvalsh(op.values)) * dv
    else:
        s = np.linalg.svd(op.values, compute_uv=False) * dv
    if order == 1:
        return float(s.sum())
    if order in (np.inf, "inf"):
        return float(s.max())
    raise EnsembleError(f"unsupported Schatten order {order!r}")


# ---------------------------------------------------------------------------
# Derived fields
# ---------------------------------------------------------------------------


def density(p: OrbitalEnsemble) -> np.ndarray:
    """rho_p(x) = N^{-1} sum_j |phi_j(x)|^2; integrates to one."""
    return (np.abs(p.orbitals) ** 2).sum(axis=0) / p.n_orbitals


def convolve_with_kernel(grid: UniformGrid, mult_k: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(K * g)(x) for a kernel given by its Fourier multiplier mult_k = F[K]."""
    ghat = dft_forward(GridField(grid, np.asarray(g, dtype=complex), "x")).values
    out = dft_inverse(GridField(grid, FOURIER_NORM * mult_k * ghat, "k")).values
    return out.real if not np.iscomplexobj(g) else out


def exchange_apply(p: OrbitalEnsemble, kappa: ChargeFormFactor, psi: np.ndarray,
                   coulomb_mult=None) -> np.ndarray:
    """(X_p psi)(x) = N^{-1} sum_j phi_j(x) [K * (conj(phi_j) psi)](x)."""
    g = p.grid
    if coulomb_mult is None:
        coulomb_mult = coulomb_multiplier_on_grid(kappa, g)
    acc = np.zeros(g.shape, dtype=complex)
    for j in range(p.n_orbitals):
        acc += p.orbitals[j] * convolve_with_kernel(g, coulomb_mult, np.conj(p.orbitals[j]) * psi)
    return acc / p.n_orbitals


def orbital_gradients(p: OrbitalEnsemble) -> np.ndarray:
    """Spectral gradients of all orbitals, shape (N, 3, n, n, n)."""
    g = p.grid
    spec = dft_forward(GridField(g, p.orbitals, "x")).values  # (N, n, n, n)
    comps = np.stack([1j * k * spec for k in g.kvec_deriv], axis=1)
    return dft_inverse(GridField(g, comps, "k")).values


def current(p: OrbitalEnsemble, alpha: ModeFunction | None, kappa: ChargeFormFactor,
            basis: PolarizationBasis | None = None, smeared_potential=None) -> np.ndarray:
    """Charge current J(x) = (2 eps / N) sum_j Im(conj(phi_j) grad phi_j) - 2 rho kappa*A."""
    g = p.grid
    grads = orbital_gradients(p)
    para = (np.conj(p.orbitals)[:, None] * grads).imag.sum(axis=0)
    j_vec = (2.0 * p.eps / p.n_orbitals) * para
    if smeared_potential is None:
        if alpha is not None:
            if basis is None:
                raise EnsembleError("polarization basis required when alpha is given")
            smeared_potential = vector_potential(alpha, basis, kappa)
    if smeared_potential is not None:
        j_vec = j_vec - 2.0 * density(p)[None] * smeared_potential
    return j_vec


def current_trace_formula(p: OrbitalEnsemble, k_point, smeared_potential=None) -> np.ndarray:
    """Independent evaluation of F[J](k) from the anticommutator trace form.

    F[J](k) = -(2 pi)^{-3/2} N^{-1} Tr( ({e^{-ik.}, i eps grad} + 2 e^{-ik.} a) p )
    for one wave vector; used as a cross-check oracle against the grid J.
    """
    g = p.grid
    kx = sum(kc * xc for kc, xc in zip(k_point, g.xvec))
    phase = np.exp(-1j * kx)
    grads = orbital_gradients(p)
    dv = g.cell_volume
    out = np.zeros(3, dtype=complex)
    for j in range(p.n_orbitals):
        phi = p.orbitals[j]
        gphi = grads[j]
        # <phi | e^{-ikx} (i eps grad) phi> + <phi | (i eps grad)(e^{-ikx} phi)>
        t1 = (np.conj(phi)[None] * phase[None] * (1j * p.eps * gphi)).sum(axis=(1, 2, 3)) * dv
        inner = phase * phi
        ghat = dft_forward(GridField(g, inner, "x")).values
        gi = dft_inverse(GridField(g, np.stack([1j * kc * ghat for kc in g.kvec]), "k")).values
        t2 = (np.conj(phi)[None] * (1j * p.eps) * gi).sum(axis=(1, 2, 3)) * dv
        out += t1 + t2
        if smeared_potential is not None:
            out += 2.0 * (np.conj(phi)[None] * phase[None] * smeared_potential * phi[None]
                          ).sum(axis=(1, 2, 3)) * dv
    return -out / (FOURIER_NORM * p.n_orbitals)


# ---------------------------------------------------------------------------
# Weighted trace diagnostics
# ---------------------------------------------------------------------------


def _sobolev_weight(grid: UniformGrid, eps: float):
    return np.sqrt(1.0 + eps ** 2 * grid.k_squared)


def _weight_columns(grid: UniformGrid, cols: np.ndarray, eps: float) -> np.ndarray:
    """Apply sqrt(1 - eps^2 Lap) to a stack (N, n, n, n) of functions."""
    spec = dft_forward(GridField(grid, cols, "x")).values
    spec *= _sobolev_weight(grid, eps)[None]
    return dft_inverse(GridField(grid, spec, "k")).values


def sobolev_trace_distance(p1, p2, eps: float) -> float:
    """|| sqrt(1 - eps^2 Lap) (p1 - p2) sqrt(1 - eps^2 Lap) ||_{S^1}.

    Rank-N ensembles take an exact low-rank path; dense kernels (or one of
    each) go through the weighted mode representation and a dense eigensolve.
    """
    if isinstance(p1, OrbitalEnsemble) and isinstance(p2, OrbitalEnsemble):
        if p1.grid != p2.grid:
            raise EnsembleError("grid mismatch")
        g = p1.grid
        cols = np.concatenate([p1.orbitals, p2.orbitals], axis=0)
        w = _weight_columns(g, cols, eps).reshape(cols.shape[0], -1)
        signs = np.concatenate([np.ones(p1.n_orbitals), -np.ones(p2.n_orbitals)])
        gram = (w.conj() @ w.T) * g.cell_volume
        root = _psd_sqrt(gram)
        lam = np.linalg.eigvalsh(root * signs[None, :] @ root)
        return float(np.abs(lam).sum())
    a = p1.kernel_operator() if isinstance(p1, OrbitalEnsemble) else p1
    b = p2.kernel_operator() if isinstance(p2, OrbitalEnsemble) else p2
    if a.grid != b.grid:
        raise EnsembleError("grid mismatch")
    return weighted_trace_norm_dense(a - b, eps)


def kernel_to_mode_matrix(op: KernelOperator) -> np.ndarray:
    """Matrix elements <e_k| A |e_k'> in the orthonormal plane-wave basis."""
    g = op.grid
    n = g.n
    m = n ** 3
    sgn = g._half_shift_sign
    # <e_k|A|e_k'> = (1/L^3) int e^{-ikx} A(x;y) e^{ik'y} dx dy
    a = op.values.reshape(n, n, n, m)
    a = np.fft.fftn(a, axes=(0, 1, 2))
    a = a * sgn[..., None]
    a = a.reshape(m, n, n, n)
    a = np.fft.ifftn(a, axes=(1, 2, 3)) * n ** 3
    a = a * sgn[None]
    return a.reshape(m, m) * (g.cell_volume ** 2 / g.volume)


def weighted_trace_norm_dense(op: KernelOperator, eps: float) -> float:
    g = op.grid
    mode = kernel_to_mode_matrix(op)
    w = _sobolev_weight(g, eps).ravel()
    mode *= w[:, None]
    mode *= w[None, :]
    if op.hermitian:
        return float(np.abs(np.linalg.eigvalsh(mode)).sum())
    return float(np.linalg.svd(mode, compute_uv=False).sum())


def _gram(cols_flat: np.ndarray, dv: float) -> np.ndarray:
    return (cols_flat.conj() @ cols_flat.T) * dv


def _psd_sqrt(gram: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(gram)
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.conj().T


def _pair_s1_from_grams(gram_left: np.ndarray, gram_right: np.ndarray) -> float:
    """S^1 norm of O = sum_j |a_j><b_j| given the two N x N Grams.

    Nonzero singular values squared of O are the eigenvalues of G_a G_b,
    computed in the numerically stable Hermitian form B^{1/2} G_a B^{1/2}.
    """
    root = _psd_sqrt(gram_right)
    lam = np.linalg.eigvalsh(root @ gram_left @ root)
    lam = np.clip(lam, 0.0, None)
    return float(np.sqrt(lam).sum())


def projected_complement_columns(p: OrbitalEnsemble, cols: np.ndarray) -> np.ndarray:
    """q applied to a stack of functions: cols - P cols."""
    v = p.flat()
    c = cols.reshape(cols.shape[0], -1)
    overlaps = (v.conj() @ c.T) * p.grid.cell_volume  # (N, M_cols)
    return (c - overlaps.T @ v).reshape(cols.shape)


def semiclassical_xi(p: OrbitalEnsemble, k_samples, weighted_eps=None):
    """Sampled lower bound for the trace-norm commutator structure functional.

    Returns sup over samples of (1+|k|)^{-1} ||q e^{ikx} p||_{S^1} plus
    ||q i eps grad p||_{S^1}, with the per-sample breakdown. The sup over a
    finite sample set is a certified LOWER bound for the continuum sup.
    With ``weighted_eps`` set, each term additionally carries the
    sqrt(1 - eps^2 Lap) conjugation used by the stronger trace metric.
    """
    if len(k_samples) == 0:
        raise EnsembleError("k_samples must be nonempty")
    g = p.grid
    dv = g.cell_volume

    def right_gram():
        if weighted_eps is None:
            return np.eye(p.n_orbitals)
        wp = _weight_columns(g, p.orbitals, weighted_eps).reshape(p.n_orbitals, -1)
        return _gram(wp, dv)

    gram_r = right_gram()

    def left_gram_scalar(cols):
        """Gram of q cols (optionally Sobolev-weighted), cols: (N, n, n, n)."""
        qcols = projected_complement_columns(p, cols)
        if weighted_eps is not None:
            qcols = _weight_columns(g, qcols, weighted_eps)
        return _gram(qcols.reshape(cols.shape[0], -1), dv)

    position_terms = []
    for kp in k_samples:
        kx = sum(kc * xc for kc, xc in zip(kp, g.xvec))
        cols = np.exp(1j * kx)[None] * p.orbitals
        s1 = _pair_s1_from_grams(left_gram_scalar(cols), gram_r)
        kn = float(np.sqrt(sum(float(kc) ** 2 for kc in kp)))
        position_terms.append({"k": tuple(float(kc) for kc in kp), "s1": s1,
                               "scaled": s1 / (1.0 + kn)})

    # momentum term: O = sum_j |q i eps grad phi_j><phi_j| maps L^2 into
    # L^2 x C^3; its S^1 norm comes from the component-summed left Gram.
    grads = orbital_gradients(p)
    gram_mom = np.zeros((p.n_orbitals, p.n_orbitals), dtype=complex)
    for axis in range(3):
        cols = 1j * p.eps * grads[:, axis]
        qcols = projected_complement_columns(p, cols)
        if weighted_eps is not None:
            qcols = _weight_columns(g, qcols, weighted_eps)
        gram_mom += _gram(qcols.reshape(p.n_orbitals, -1), dv)
    momentum_term = _pair_s1_from_grams(gram_mom, gram_r)

    sup_pos = max(t["scaled"] for t in position_terms)
    return {
        "xi": sup_pos + momentum_term,
        "position_sup": sup_pos,
        "momentum_term": momentum_term,
        "position_terms": position_terms,
        "is_lower_bound": True,
    }


def default_xi_samples(grid: UniformGrid, seed=0, n_random=4):
    """{0, +-e_i dk, +-2 e_i dk} plus a few random lattice points."""
    dk = grid.dk
    pts = [(0.0, 0.0, 0.0)]
    for axis in range(3):
        for s in (1, -1, 2, -2):
            v = [0.0, 0.0, 0.0]
            v[axis] = s * dk
            pts.append(tuple(v))
    rng = np.random.default_rng(seed)
    half = grid.n // 2
    for _ in range(n_random):
        m = rng.integers(-min(4, half - 1), min(4, half - 1) + 1, size=3)
        if not m.any():
            m[0] = 1
        pts.append(tuple(float(mi) * dk for mi in m))
    return pts


def momentum_operator_norm(p: OrbitalEnsemble) -> float:
    """|| i eps grad p ||_{S^inf} = sqrt(lam_max) of the gradient Gram.

    The operator sum_j |i eps grad phi_j><phi_j| has an orthonormal right
    frame, so its largest singular value is sqrt(lam_max(G)) with
    G_{jl} = <i eps grad phi_j, i eps grad phi_l> summed over components.
    """
    v = 1j * p.eps * orbital_gradients(p)
    gram = np.einsum("jaxyz,laxyz->jl", v.conj(), v) * p.grid.cell_volume
    lam = np.linalg.eigvalsh(gram)
    return float(np.sqrt(max(lam.max(), 0.0)))


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


def _lattice_modes_sorted(grid: UniformGrid):
    m = grid.mode_index1
    mm = np.array(np.meshgrid(m, m, m, indexing="ij")).reshape(3, -1).T
    r2 = (mm ** 2).sum(axis=1)
    order = np.lexsort((mm[:, 2], mm[:, 1], mm[:, 0], r2))
    return mm[order], r2[order]


def _plane_wave_ensemble(grid: UniformGrid, modes: np.ndarray) -> OrbitalEnsemble:
    n_orb = modes.shape[0]
    orbs = np.empty((n_orb,) + grid.shape, dtype=complex)
    norm = grid.volume ** -0.5
    for j, m in enumerate(modes):
        kx = sum(m[a] * grid.dk * grid.xvec[a] for a in range(3))
        orbs[j] = norm * np.exp(1j * kx)
    return OrbitalEnsemble.from_orbitals(grid, orbs)


def fixture_fermi_sea(grid: UniformGrid, c: float, n_target: int) -> OrbitalEnsemble:
    """Ground-state sea of free lattice modes: all |m| <= c * n_target^{1/3}.

    The actual N is the mode count inside the ball; eps = N^{-1/3}.
    """
    radius = c * n_target ** (1.0 / 3.0)
    mm, r2 = _lattice_modes_sorted(grid)
    keep = mm[r2 <= radius ** 2 + 1e-9]
    if keep.shape[0] == 0:
        raise EnsembleError(f"mode ball of radius {radius:.3f} is empty")
    return _plane_wave_ensemble(grid, keep)


def fixture_fermi_sea_by_count(grid: UniformGrid, count: int) -> OrbitalEnsemble:
    """Exactly ``count`` modes: fill shells by |m|^2, deterministic tie-break."""
    mm, r2 = _lattice_modes_sorted(grid)
    if count < 1 or count > mm.shape[0]:
        raise EnsembleError(f"count {count} outside [1, {mm.shape[0]}]")
    sel = mm[:count]
    if count < mm.shape[0] and r2[count - 1] == r2[count]:
        warnings.warn(
            f"count {count} splits the |m|^2 = {int(r2[count])} shell; "
            "selection is deterministic but not rotation-symmetric",
            stacklevel=2,
        )
    return _plane_wave_ensemble(grid, sel)


def fixture_modulated_sea(grid: UniformGrid, count: int, amplitude=0.35,
                          envelope_waves=1) -> OrbitalEnsemble:
    """Smooth default bridge fixture: plane-wave sea times a gentle envelope.

    chi(x) = 1 + amplitude * prod_a cos(2 pi w x_a / L); the modulated stack
    is Loewdin-orthonormalized, which keeps the momentum support within one
    lattice shift of the sea.
    """
    if not (0 <= amplitude < 1):
        raise EnsembleError("envelope amplitude must sit in [0, 1)")
    sea = fixture_fermi_sea_by_count(grid, count)
    freq = 2 * np.pi * envelope_waves / grid.length
    chi = 1.0 + amplitude * np.prod([np.cos(freq * x) for x in grid.xvec], axis=0)
    raw = sea.orbitals * chi[None]
    orbs = lowdin_orthonormalize(grid, raw)
    return OrbitalEnsemble.from_orbitals(grid, orbs)


def random_band_limited_ensemble(grid: UniformGrid, count: int, max_index: int,
                                 seed=0) -> OrbitalEnsemble:
    """Random orthonormal ensemble with per-axis mode indices |m_a| <= max_index."""
    rng = np.random.default_rng(seed)
    m = grid.mode_index1
    mask = (np.abs(m)[:, None, None] <= max_index) \
        & (np.abs(m)[None, :, None] <= max_index) \
        & (np.abs(m)[None, None, :] <= max_index)
    n_modes = int(mask.sum())
    if count > n_modes:
        raise EnsembleError(f"asked for {count} orbitals from {n_modes} modes")
    coeffs = rng.standard_normal((count, n_modes)) + 1j * rng.standard_normal((count, n_modes))
    spec = np.zeros((count,) + grid.shape, dtype=complex)
    spec[:, mask] = coeffs
    raw = dft_inverse(GridField(grid, spec, "k")).values
    orbs = lowdin_orthonormalize(grid, raw)
    return OrbitalEnsemble.from_orbitals(grid, orbs)


def fixture_semiclassical_product(phi, chi, eps: float, grid: UniformGrid):
    """Kernel eps^{-3} (2 pi)^{3/2} phi((x - y)/eps) chi((x + y)/2).

    ``phi`` and ``chi`` are callables of coordinate arrays (..., 3), applied
    to literal coordinate differences and midpoints (no periodic wrapping;
    the fixture mirrors the midpoint structure of the quantization formula).
    The kernel is generally not an exact projection; it exists for transform
    tests. Per-axis differences and midpoints take only 2n - 1 values, so
    both callables are evaluated on small lookup cubes.
    """
    n = grid.n
    x = grid.x1
    m = n ** 3
    # lookup tables over d = i - j + (n-1) and s = i + j
    d_ax = (x[:, None] - x[None, :])  # (n, n)
    s_ax = 0.5 * (x[:, None] + x[None, :])
    d_vals = np.concatenate([x - x[-1], x[1:] - x[0]])        # sorted 2n-1 diffs
    s_vals = 0.5 * np.concatenate([x + x[0], x[1:] + x[-1]])  # sorted 2n-1 mids
    di = np.rint((d_ax - d_vals[0]) / grid.dx).astype(np.int64)
    si = np.rint(2.0 * (s_ax - s_vals[0]) / grid.dx).astype(np.int64)

    cube_d = np.stack(np.meshgrid(d_vals, d_vals, d_vals, indexing="ij"), axis=-1)
    cube_s = np.stack(np.meshgrid(s_vals, s_vals, s_vals, indexing="ij"), axis=-1)
    phi_tab = np.asarray(phi(cube_d / eps))
    chi_tab = np.asarray(chi(cube_s))

    pref = eps ** -3.0 * FOURIER_NORM
    DI = (di[:, None, None, :, None, None] * (2 * n - 1)
          + di[None, :, None, None, :, None]) * (2 * n - 1) \
        + di[None, None, :, None, None, :]
    SI = (si[:, None, None, :, None, None] * (2 * n - 1)
          + si[None, :, None, None, :, None]) * (2 * n - 1) \
        + si[None, None, :, None, None, :]
    vals = pref * phi_tab.reshape(-1)[DI.reshape(m, m)] * chi_tab.reshape(-1)[SI.reshape(m, m)]
    return KernelOperator(grid, vals.astype(complex), hermitian=False)

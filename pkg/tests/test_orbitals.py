import numpy as np
import pytest

from msvm.charge import coulomb_multiplier_on_grid, density_constants, gaussian_form_factor
from msvm.modes import gaussian_mode_function, vector_potential
from msvm.orbitals import (
    EnsembleError,
    KernelOperator,
    OrbitalEnsemble,
    convolve_with_kernel,
    current,
    current_trace_formula,
    default_xi_samples,
    density,
    exchange_apply,
    fixture_fermi_sea,
    fixture_fermi_sea_by_count,
    fixture_modulated_sea,
    lowdin_orthonormalize,
    momentum_operator_norm,
    random_band_limited_ensemble,
    schatten_norm,
    semiclassical_xi,
    sobolev_trace_distance,
)
from msvm.spectral import GridField, UniformGrid, build_polarization, dft_forward


@pytest.fixture(scope="module")
def grid():
    return UniformGrid(16, 6.0)


@pytest.fixture(scope="module")
def grid8():
    return UniformGrid(8, 6.0)


@pytest.fixture(scope="module")
def kappa():
    return gaussian_form_factor(1.0)


def plane_wave_ensemble(grid, mode_indices, eps=None):
    orbs = np.stack([
        np.exp(1j * sum(m[a] * grid.dk * grid.xvec[a] for a in range(3))) / grid.volume ** 0.5
        for m in mode_indices])
    return OrbitalEnsemble.from_orbitals(grid, orbs, eps=eps)


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------


def test_density_plane_wave_uniform(grid):
    p = plane_wave_ensemble(grid, [(1, 0, 0)])
    rho = density(p)
    assert np.abs(rho - 1.0 / grid.volume).max() < 1e-15


@pytest.mark.parametrize("seed", range(3))
def test_density_normalized(grid8, seed):
    p = random_band_limited_ensemble(grid8, 3, 1, seed=seed)
    rho = density(p)
    assert rho.sum() * grid8.cell_volume == pytest.approx(1.0, abs=1e-10)


def test_density_disjoint_bumps(grid8):
    g = grid8
    x2a = sum((c - s) ** 2 for c, s in zip(g.xvec, (-1.5, 0, 0)))
    x2b = sum((c - s) ** 2 for c, s in zip(g.xvec, (1.5, 0, 0)))
    b1 = np.exp(-8 * x2a)
    b2 = np.exp(-8 * x2b)
    b1 /= np.sqrt((b1 ** 2).sum() * g.cell_volume)
    b2 /= np.sqrt((b2 ** 2).sum() * g.cell_volume)
    p = OrbitalEnsemble.from_orbitals(g, np.stack([b1, b2]).astype(complex), check=False)
    rho = density(p)
    oracle = 0.5 * (np.abs(b1) ** 2 + np.abs(b2) ** 2)  # direct summation
    assert np.abs(rho - oracle).max() < 1e-12


# ---------------------------------------------------------------------------
# exchange
# ---------------------------------------------------------------------------


def test_exchange_disjoint_support_vanishes(grid8, kappa):
    g = grid8
    x2a = sum(c ** 2 for c in g.xvec)
    phi1 = np.exp(-6 * x2a).astype(complex)
    phi1 /= np.sqrt((np.abs(phi1) ** 2).sum() * g.cell_volume)
    psi = np.zeros(g.shape, dtype=complex)
    psi[0, 0, 0] = 1.0  # far corner, disjoint from phi1's support
    psi /= np.sqrt((np.abs(psi) ** 2).sum() * g.cell_volume)
    p = OrbitalEnsemble.from_orbitals(g, phi1[None], check=False)
    mask_disjoint = np.abs(phi1) * np.abs(psi)
    assert mask_disjoint.max() < 1e-12  # supports truly disjoint on the grid
    out = exchange_apply(p, kappa, psi)
    assert np.abs(out).max() < 1e-12


def test_exchange_rank1_pointwise_oracle(grid8, kappa):
    g = grid8
    p = random_band_limited_ensemble(g, 1, 1, seed=2)
    phi = p.orbitals[0]
    mult = coulomb_multiplier_on_grid(kappa, g)
    out = exchange_apply(p, kappa, phi)
    oracle = phi * convolve_with_kernel(g, mult, np.abs(phi) ** 2)
    assert np.abs(out - oracle).max() < 1e-10 * np.abs(oracle).max()


def test_exchange_hermitian(grid8, kappa):
    g = grid8
    p = random_band_limited_ensemble(g, 3, 1, seed=4)
    rng = np.random.default_rng(0)
    psi = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    chi = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    lhs = (np.conj(chi) * exchange_apply(p, kappa, psi)).sum() * g.cell_volume
    rhs = np.conj((np.conj(psi) * exchange_apply(p, kappa, chi)).sum() * g.cell_volume)
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_exchange_operator_norm_bound_reported(grid8, kappa):
    g = grid8
    consts = density_constants(kappa)
    worst = 0.0
    for seed in range(3):
        p = random_band_limited_ensemble(g, 3, 1, seed=seed)
        rng = np.random.default_rng(seed + 10)
        v = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
        v /= np.sqrt((np.abs(v) ** 2).sum() * g.cell_volume)
        lam = 0.0
        for _ in range(40):  # power iteration oracle (X_p is Hermitian PSD-ish)
            w = exchange_apply(p, kappa, v)
            lam = np.sqrt((np.abs(w) ** 2).sum() * g.cell_volume)
            if lam == 0:
                break
            v = w / lam
        bound = consts["B_kappa"] ** 2 / p.n_orbitals * p.n_orbitals  # N^{-1} B^2 ||p||_S1
        worst = max(worst, lam / bound)
    print(f"fitted exchange operator-norm constant: {worst:.4f}")
    assert np.isfinite(worst) and worst > 0


# ---------------------------------------------------------------------------
# current
# ---------------------------------------------------------------------------


def test_current_single_plane_wave(grid):
    m0 = (2, -1, 0)
    p = plane_wave_ensemble(grid, [m0])
    j = current(p, None, None)
    k0 = np.array(m0) * grid.dk
    expected = 2.0 * p.eps * k0 / grid.volume
    assert np.abs(j - expected[:, None, None, None]).max() < 1e-13


def test_current_real_orbitals_vanish(grid8):
    g = grid8
    x2 = sum(c ** 2 for c in g.xvec)
    phi = np.exp(-2 * x2).astype(complex)
    phi /= np.sqrt((np.abs(phi) ** 2).sum() * g.cell_volume)
    p = OrbitalEnsemble.from_orbitals(g, phi[None], check=False)
    j = current(p, None, None)
    assert np.abs(j).max() < 1e-12


def test_current_matches_trace_formula(grid8, kappa):
    g = grid8
    p = random_band_limited_ensemble(g, 3, 1, seed=5)
    basis = build_polarization(g)
    alpha = gaussian_mode_function(g, amplitude=0.3, width=2.0, phase_seed=1)
    a_pot = vector_potential(alpha, basis, kappa)
    j = current(p, alpha, kappa, basis)
    j_hat = dft_forward(GridField(g, j.astype(complex), "x")).values
    for m in [(0, 0, 0), (1, 0, 0), (0, -2, 1), (1, 1, 1)]:
        k_pt = [g.k1[mi] for mi in m]
        oracle = current_trace_formula(p, k_pt, smeared_potential=a_pot)
        assert np.abs(j_hat[:, m[0], m[1], m[2]] - oracle).max() < 1e-9


# ---------------------------------------------------------------------------
# Schatten norms
# ---------------------------------------------------------------------------


def test_schatten_projection_rank_n():
    g = UniformGrid(4, 6.0)  # 64 x 64 kernels
    p = fixture_fermi_sea_by_count(g, 7)
    op = p.kernel_operator()
    assert schatten_norm(op, 1) == pytest.approx(7.0, rel=1e-10)


def test_schatten_rank1_all_equal():
    g = UniformGrid(4, 6.0)
    rng = np.random.default_rng(3)
    phi = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    phi /= np.sqrt((np.abs(phi) ** 2).sum() * g.cell_volume)
    psi = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    psi /= np.sqrt((np.abs(psi) ** 2).sum() * g.cell_volume)
    op = KernelOperator(g, np.outer(phi.ravel(), np.conj(psi.ravel())))
    for order in (1, 2, np.inf):
        assert schatten_norm(op, order) == pytest.approx(1.0, rel=1e-10)


def test_schatten_s1_eigen_oracle():
    g = UniformGrid(4, 6.0)
    rng = np.random.default_rng(8)
    a = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    h = a + a.conj().T
    op = KernelOperator(g, h, hermitian=True)
    oracle = np.abs(np.linalg.eigvalsh(h)).sum() * g.cell_volume
    assert schatten_norm(op, 1) == pytest.approx(oracle, rel=1e-10)
    with pytest.raises(EnsembleError):
        schatten_norm(KernelOperator(g, h * np.nan, hermitian=True), 1)


# ---------------------------------------------------------------------------
# Sobolev trace distance
# ---------------------------------------------------------------------------


def test_trace_distance_identity(grid8):
    p = random_band_limited_ensemble(grid8, 3, 1, seed=1)
    assert sobolev_trace_distance(p, p, p.eps) < 1e-10


def test_trace_distance_plane_wave_vs_zero(grid8):
    g = grid8
    m0 = (1, 1, 0)
    p = plane_wave_ensemble(g, [m0], eps=0.5)
    zero = OrbitalEnsemble(g, np.zeros((1,) + g.shape, dtype=complex), eps=0.5)
    k0sq = float(sum((m * g.dk) ** 2 for m in m0))
    expected = 1.0 + 0.5 ** 2 * k0sq
    got = sobolev_trace_distance(p, zero, 0.5)
    assert got == pytest.approx(expected, rel=1e-10)
    # dense path agrees with the rank path
    got_dense = sobolev_trace_distance(p.kernel_operator(), zero.kernel_operator(), 0.5)
    assert got_dense == pytest.approx(expected, rel=1e-8)


def test_trace_distance_triangle(grid8):
    ps = [random_band_limited_ensemble(grid8, 2, 1, seed=s) for s in (1, 2, 3)]
    eps = ps[0].eps
    d01 = sobolev_trace_distance(ps[0], ps[1], eps)
    d12 = sobolev_trace_distance(ps[1], ps[2], eps)
    d02 = sobolev_trace_distance(ps[0], ps[2], eps)
    assert d02 <= d01 + d12 + 1e-10


# ---------------------------------------------------------------------------
# semiclassical structure
# ---------------------------------------------------------------------------


def test_xi_single_plane_wave(grid8):
    g = grid8
    p = plane_wave_ensemble(g, [(0, 0, 0)])
    k = (g.dk, 0.0, 0.0)
    res = semiclassical_xi(p, [k])
    # e^{ikx} phi is an orthogonal lattice mode, so ||q e^{ikx} p||_S1 = 1
    assert res["position_terms"][0]["s1"] == pytest.approx(1.0, abs=1e-10)
    res0 = semiclassical_xi(p, [(0.0, 0.0, 0.0)])
    assert res0["position_terms"][0]["s1"] < 1e-10


def test_xi_unitary_mixing_invariance(grid8):
    g = grid8
    p = random_band_limited_ensemble(g, 4, 1, seed=6)
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    q_mat, _ = np.linalg.qr(a)
    mixed = OrbitalEnsemble.from_orbitals(
        g, np.tensordot(q_mat, p.orbitals, axes=([1], [0])), eps=p.eps)
    samples = default_xi_samples(g, seed=1)
    r1 = semiclassical_xi(p, samples)
    r2 = semiclassical_xi(mixed, samples)
    assert r1["xi"] == pytest.approx(r2["xi"], abs=1e-9)
    assert momentum_operator_norm(p) == pytest.approx(momentum_operator_norm(mixed), abs=1e-9)


def test_momentum_norm_plane_wave(grid):
    m0 = (2, 1, 0)
    p = plane_wave_ensemble(grid, [m0])
    expected = p.eps * np.sqrt(sum((m * grid.dk) ** 2 for m in m0))
    assert momentum_operator_norm(p) == pytest.approx(expected, rel=1e-12)


def test_momentum_norm_band_limited_bound(grid):
    p = fixture_fermi_sea_by_count(grid, 33)
    k_occ = 2.0 * grid.dk  # |m|^2 <= 4 shell
    got = momentum_operator_norm(p)
    assert got <= p.eps * k_occ + 1e-10
    assert got == pytest.approx(p.eps * k_occ, rel=1e-10)


def test_momentum_norm_constant_orbital(grid8):
    g = grid8
    phi = np.full(g.shape, 1.0 / g.volume ** 0.5, dtype=complex)
    p = OrbitalEnsemble.from_orbitals(g, phi[None], check=False)
    assert momentum_operator_norm(p) < 1e-14


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


def test_fermi_sea_small_c(grid8):
    p = fixture_fermi_sea(grid8, c=0.1, n_target=5)
    assert p.n_orbitals == 1  # k = 0 only


def test_fermi_sea_kernel_form(grid8):
    g = grid8
    p = fixture_fermi_sea_by_count(g, 7)
    op = p.kernel_operator()
    # kernel equals volume-normalized sum of e^{ik(x-y)} over the mode ball
    modes = [(0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    pts = np.stack(np.meshgrid(g.x1, g.x1, g.x1, indexing="ij"), axis=-1).reshape(-1, 3)
    expected = np.zeros((pts.shape[0], pts.shape[0]), dtype=complex)
    for m in modes:
        k = np.array(m) * g.dk
        ph = np.exp(1j * pts @ k)
        expected += np.outer(ph, ph.conj())
    expected /= g.volume
    assert np.abs(op.values - expected).max() < 1e-12


def test_fermi_sea_idempotent(grid8):
    g = grid8
    p = fixture_fermi_sea_by_count(g, 19)
    op = p.kernel_operator()
    p2 = (op.values @ op.values) * g.cell_volume
    assert np.abs(p2 - op.values).max() < 1e-12 * np.abs(op.values).max()


def test_fermi_sea_counts(grid):
    for count in (27, 33, 123):
        p = fixture_fermi_sea_by_count(grid, count)
        assert p.n_orbitals == count
        assert p.eps == pytest.approx(count ** (-1 / 3), rel=1e-14)


def test_modulated_sea_orthonormal(grid):
    p = fixture_modulated_sea(grid, 8, amplitude=0.35)
    assert p.gram_deviation() < 1e-10
    rho = density(p)
    assert rho.sum() * grid.cell_volume == pytest.approx(1.0, abs=1e-10)
    # the envelope makes the density genuinely nonuniform
    assert rho.max() / rho.min() > 1.2


def test_lowdin(grid8):
    rng = np.random.default_rng(12)
    raw = rng.standard_normal((3,) + grid8.shape) + 1j * rng.standard_normal((3,) + grid8.shape)
    orbs = lowdin_orthonormalize(grid8, raw)
    p = OrbitalEnsemble.from_orbitals(grid8, orbs)
    assert p.gram_deviation() < 1e-10


def test_dense_kernel_guard():
    g = UniformGrid(32, 6.0)
    p = plane_wave_ensemble(g, [(1, 0, 0)])
    with pytest.raises(EnsembleError):
        p.kernel_operator()

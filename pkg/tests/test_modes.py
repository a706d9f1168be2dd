import numpy as np
import pytest

from msvm.charge import density_constants, gaussian_form_factor
from msvm.modes import (
    ModeError,
    ModeFunction,
    cutoff_tail_norms,
    field_metric_norm,
    frequency_cutoff,
    gauge_divergence_rel,
    gaussian_mode_function,
    mode_norm,
    single_mode,
    vector_potential,
)
from msvm.spectral import UniformGrid, build_polarization, divergence_spectral


@pytest.fixture(scope="module")
def grid():
    return UniformGrid(16, 6.0)


@pytest.fixture(scope="module")
def basis(grid):
    return build_polarization(grid)


def test_zero_mode_forbidden(grid):
    vals = np.zeros((2,) + grid.shape, dtype=complex)
    vals[0, 0, 0, 0] = 1.0
    with pytest.raises(ModeError):
        ModeFunction(grid, vals)
    with pytest.raises(ModeError):
        single_mode(grid, (0, 0, 0), 0)


def test_vector_potential_zero(grid, basis):
    a = vector_potential(ModeFunction.zeros(grid), basis)
    assert np.abs(a).max() == 0.0


def test_vector_potential_single_mode(grid, basis):
    m0 = (2, 0, 0)
    alpha = single_mode(grid, m0, lam=0, amplitude=1.0)
    a = vector_potential(alpha, basis)
    k0 = np.array(m0) * grid.dk
    kx = sum(k0[i] * grid.xvec[i] for i in range(3))
    eps1 = basis.eps1[:, m0[0], m0[1], m0[2]]
    pref = 2.0 * (2 * np.pi) ** -1.5 * grid.dk_volume / np.sqrt(2 * np.linalg.norm(k0))
    expected = pref * eps1[:, None, None, None] * np.cos(kx)[None]
    assert np.abs(a - expected).max() < 1e-14 * np.abs(expected).max()


def test_vector_potential_real(grid, basis):
    alpha = gaussian_mode_function(grid, amplitude=0.7, width=2.0, phase_seed=2)
    a = vector_potential(alpha, basis)
    assert np.isrealobj(a)
    kap = gaussian_form_factor(1.0)
    a_smeared = vector_potential(alpha, basis, kap)
    assert np.isrealobj(a_smeared)


@pytest.mark.parametrize("seed", range(4))
def test_smeared_potential_linf_bound(grid, basis, seed):
    # |kappa * A|_inf <= 2 || |.|^{-1} F[kappa] ||_{L2} ||alpha||_{h_dot_1/2};
    # the factor 2 is the Cauchy-Schwarz constant of the two-polarization sum
    # (the stated inequality carries an unspecified constant).
    kap = gaussian_form_factor(1.0)
    alpha = gaussian_mode_function(grid, amplitude=0.5, width=1.5, phase_seed=seed)
    a = vector_potential(alpha, basis, kap)
    from scipy import integrate

    w_norm, _ = integrate.quad(
        lambda r: 4 * np.pi * (kap.fourier_radial(r) / r) ** 2 * r ** 2, 0, np.inf)
    w_norm = np.sqrt(w_norm)
    rhs = w_norm * mode_norm(alpha, homogeneous_exponent=0.5)
    ratio = np.abs(a).max() / rhs
    assert ratio <= 2.0 + 1e-9
    print(f"fitted L_inf potential constant: {ratio:.4f}")


def test_gauge_divergence(grid, basis):
    kap = gaussian_form_factor(1.0)
    alpha = gaussian_mode_function(grid, amplitude=1.0, width=2.0, phase_seed=9)
    a = vector_potential(alpha, basis, kap)
    assert gauge_divergence_rel(grid, a) < 1e-11


def test_divergence_of_gradient_field(grid):
    # band-limited chi so the discrete identity div(grad chi) = lap chi is exact
    f = 2 * np.pi / grid.length
    chi = np.cos(f * grid.xvec[0]) * np.cos(2 * f * grid.xvec[1]) + np.sin(f * grid.xvec[2])
    chat = np.fft.fftn(chi)
    grad = np.stack([np.real(np.fft.ifftn(1j * k * chat)) for k in grid.kvec_deriv])
    div = divergence_spectral(grid, grad)
    lap = np.real(np.fft.ifftn(-grid.k_squared * chat))
    assert np.abs(div - lap).max() < 1e-12 * np.abs(lap).max()


def test_divergence_constant_field(grid):
    const = np.ones((3,) + grid.shape)
    assert np.abs(divergence_spectral(grid, const)).max() < 1e-13


def test_frequency_cutoff_identity_and_idempotent(grid):
    alpha = gaussian_mode_function(grid, amplitude=1.0, width=2.0, phase_seed=3)
    lam_max = float(grid.k_abs.max())
    same = frequency_cutoff(alpha, lam_max + 1.0)
    assert np.array_equal(same.values, alpha.values)
    cut = frequency_cutoff(alpha, 4.0)
    cut2 = frequency_cutoff(cut, 4.0)
    assert np.array_equal(cut.values, cut2.values)
    with pytest.raises(ModeError):
        frequency_cutoff(alpha, 0.5)


def test_frequency_cutoff_never_increases_norms(grid):
    alpha = gaussian_mode_function(grid, amplitude=1.0, width=2.5, phase_seed=4)
    cut = frequency_cutoff(alpha, 3.0)
    for kw in ({"homogeneous_exponent": -0.5}, {"homogeneous_exponent": 0.5},
               {"inhomogeneous_exponent": 0.0}, {"inhomogeneous_exponent": 1.0}):
        assert mode_norm(cut, **kw) <= mode_norm(alpha, **kw) * (1 + 1e-14)


def test_cutoff_tail_decay_exponent(grid):
    # || alpha - cutoff ||_{h_1/2 cap hdot_-1/2} <= c Lam^{-1/2} ||alpha||_{h_1};
    # on the resolved range the fitted log-log slope sits in [-0.8, -0.4].
    alpha = gaussian_mode_function(grid, amplitude=1.0, width=3.5, phase_seed=8)
    h1 = mode_norm(alpha, inhomogeneous_exponent=1.0)
    lams = np.array([2.0, 4.0, 8.0])
    tails = np.array([cutoff_tail_norms(alpha, lam)["metric"] for lam in lams])
    assert np.all(tails > 0)
    slope = np.polyfit(np.log(lams), np.log(tails / h1), 1)[0]
    assert -0.8 <= slope <= -0.4, f"measured tail exponent {slope:.3f}"


def test_smeared_potential_w1inf_bound_reported(grid, basis):
    kap = gaussian_form_factor(1.0)
    consts = density_constants(kap)
    rng_seeds = range(3)
    worst = 0.0
    for seed in rng_seeds:
        alpha = gaussian_mode_function(grid, amplitude=0.8, width=1.8, phase_seed=seed)
        a = vector_potential(alpha, basis, kap)
        sup = np.abs(a).max()
        for axis in range(3):
            d = np.stack([np.real(np.fft.ifftn(np.fft.fftn(a[c]) * 1j * grid.kvec[axis]))
                          for c in range(3)])
            sup = max(sup, np.abs(d).max())
        worst = max(worst, sup / (consts["B_kappa"] * mode_norm(alpha, homogeneous_exponent=0.5)))
    print(f"fitted W_0^1inf potential constant: {worst:.4f}")
    assert np.isfinite(worst)


def test_field_metric_is_sum_of_norms(grid):
    alpha = gaussian_mode_function(grid, amplitude=0.3, width=2.0, phase_seed=5)
    lhs = field_metric_norm(alpha)
    rhs = mode_norm(alpha, inhomogeneous_exponent=0.5) + mode_norm(alpha, homogeneous_exponent=-0.5)
    assert lhs == pytest.approx(rhs, rel=1e-14)

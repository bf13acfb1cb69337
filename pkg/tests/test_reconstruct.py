import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import lambertw

from dtn_lab.dtn import SchrodingerMap
from dtn_lab.reconstruct import (ReconstructionConfig, boundary_layer_mean, choose_rho, fourier_coefficient,
                                 gate_rho, integrate_aprime, mode_set, modulus_exponent, probe_fourier_mode,
                                 reconstruct_potential, stability_modulus, synthesize)


def lambert_root(D, gamma, kappa):
    """Closed-form root of rho^gamma exp(kappa rho) = 1/D via the Lambert W function.

    W(e^L) is evaluated directly when representable, else from w + ln w = L.
    """
    L = np.log(kappa / gamma) - np.log(D) / gamma
    if L < 700:
        w = float(lambertw(np.exp(L)).real)
    else:
        w = L - np.log(L)
        for _ in range(50):
            w -= (w + np.log(w) - L) / (1 + 1 / w)
    return gamma / kappa * w


def test_choose_rho_worked_example():
    ch = choose_rho(1e-6, 0.5, 1.0, 1.0)
    assert ch.flag == "balanced"
    assert abs(ch.rho - 12.550625312930) < 1e-9
    assert abs(ch.rho - lambert_root(1e-6, 0.5, 1.0)) < 1e-9


@settings(max_examples=300, deadline=None)
@given(st.floats(-12, -1.5), st.floats(0.01, 0.5), st.floats(0.1, 5.0), st.floats(0.1, 2.0))
def test_choose_rho_agrees_with_lambert_w(logD, gamma, kappa, rho0):
    D = 10**logD
    ch = choose_rho(D, gamma, kappa, rho0)
    if ch.flag == "balanced":
        assert abs(ch.rho ** -gamma - D * np.exp(kappa * ch.rho)) <= 1e-8
        assert np.isclose(ch.rho, lambert_root(D, gamma, kappa), rtol=1e-10)
        assert ch.rho >= rho0
    else:
        assert ch.rho == rho0


def test_choose_rho_branches():
    assert choose_rho(0.0, 0.5, 1.0, 1.0, rho_cap=40.0).flag == "noise-free"
    assert choose_rho(0.0, 0.5, 1.0, 1.0, rho_cap=40.0).rho == 40.0
    assert choose_rho(0.9, 0.5, 1.0, 1.0).flag == "saturated"
    with pytest.raises(ValueError):
        choose_rho(-1.0, 0.5, 1.0, 1.0)


def test_stability_modulus_values():
    assert stability_modulus(0.0) == 0.0
    assert np.isclose(modulus_exponent(3, 0.4, 0.5), 1 / 30)
    assert np.isclose(stability_modulus(np.exp(-30)), 0.892817357361177, rtol=1e-12)
    assert abs(stability_modulus(np.exp(-30)) - 0.8927) < 2e-4
    # clamped log term above e^-2
    assert np.isclose(stability_modulus(0.5), 2 ** (-1 / 30) + 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-300, np.exp(-2)), st.floats(1e-300, np.exp(-2)))
def test_stability_modulus_is_monotone(t1, t2):
    t1, t2 = sorted((t1, t2))
    assert stability_modulus(t1) <= stability_modulus(t2)


def test_integrate_aprime():
    lam = np.round(np.linspace(-1, 1, 21), 12)
    assert np.allclose(integrate_aprime(lam, np.zeros_like(lam)), 0.0)
    assert np.allclose(integrate_aprime(lam, np.full_like(lam, 0.7)), 0.7 * lam)
    assert np.max(np.abs(integrate_aprime(lam, 2 * lam) - lam**2)) <= 1e-2
    # order of the samples does not matter
    perm = np.random.default_rng(0).permutation(lam.size)
    assert np.allclose(integrate_aprime(lam[perm], 2 * lam[perm]), (integrate_aprime(lam, 2 * lam))[perm])
    with pytest.raises(ValueError):
        integrate_aprime([0.1, 0.2, 0.3], [1, 1, 1])
    with pytest.raises(ValueError):
        integrate_aprime([0.0, 0.1, 0.3], [1, 1, 1])


def test_mode_set():
    modes = mode_set(2)
    assert len(modes) == (5**3 - 1) // 2 + 1
    assert modes[0] == (0, 0, 0)
    assert all(tuple(-t for t in z) not in modes for z in modes[1:])
    assert len(mode_set(2, cutoff=1.0)) == 4


def test_fourier_roundtrip(g3):
    X = g3.coords()
    p = 0.3 * np.cos(2 * np.pi * X[0]) + 0.1 * np.sin(2 * np.pi * (X[1] - X[2]))
    coeffs = {}
    for z in mode_set(1):
        k = 2 * np.pi * np.array(z)
        c = fourier_coefficient(g3, p, k)
        coeffs[z] = c
        coeffs[tuple(-t for t in z)] = np.conj(c)
    # the trapezoid rule on the closed grid is exact for these trigonometric fields up to endpoint weights
    assert np.allclose(synthesize(g3, coeffs), p, atol=1e-12)


def test_gate_rho(g3):
    assert np.isclose(gate_rho(g3, (0, 0, 0), 4.0), 4.0)
    assert gate_rho(g3, (2, 2, 2), 4.0) < 0


def test_probe_of_identical_maps_is_zero(g3):
    q = np.full(g3.shape, 1.0)
    A, B = SchrodingerMap(g3, q), SchrodingerMap(g3, q)
    cfg = ReconstructionConfig(M=1.0, c_omega_est=17.0)
    pr = probe_fourier_mode(g3, A, B, (1, 0, 0), 2.0, cfg)
    assert pr.boundary == 0 and pr.exact == 0


def test_probe_identity_and_accuracy_at_coarse_grid(g3):
    X = g3.coords()
    p = 0.1 * np.cos(2 * np.pi * X[0])
    A, B = SchrodingerMap(g3, 1.0 + p), SchrodingerMap(g3, 1.0)
    cfg = ReconstructionConfig(M=1.2, c_omega_est=17.0)
    pr = probe_fourier_mode(g3, A, B, (1, 0, 0), gate_rho(g3, (1, 0, 0), 4.0), cfg)
    assert abs(pr.boundary - pr.volume) <= 1e-12
    assert abs(pr.boundary - 0.05) <= 0.005


def test_reconstruct_small_difference_coarse(g3):
    X = g3.coords()
    p = 0.1 * np.cos(2 * np.pi * X[0])
    A, B = SchrodingerMap(g3, 1.0 + p), SchrodingerMap(g3, 1.0)
    cfg = ReconstructionConfig(K_max=2, M=1.2, c_omega_est=17.0)
    rep = reconstruct_potential(g3, A, B, cfg, truth=p)
    assert rep.errors["relative_l2_error"] <= 0.05
    assert rep.errors["coefficient_energy"] <= 1.01 * rep.errors["truth_l2"] ** 2
    assert len(rep.flagged) > 0  # the coarse grid cannot resolve |z|^2 >= 2
    assert '"coefficients"' in rep.to_json()


def test_boundary_layer_mean_of_constant(g3):
    assert np.isclose(boundary_layer_mean(g3, np.full(g3.shape, -0.05)), -0.05)


def test_config_invariants():
    with pytest.raises(ValueError):
        ReconstructionConfig(K_max=0)
    with pytest.raises(ValueError):
        ReconstructionConfig(s=0.6)
    assert np.isclose(ReconstructionConfig(s=0.4).gamma(3), 0.4 / 3)

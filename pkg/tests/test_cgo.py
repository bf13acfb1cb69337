import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtn_lab.cgo import (_symbol, calibrate_carleman, carleman_ratio, cgo_directions, cgo_solution,
                         conjugated_apply, lattice_exponents, pair_exponents, random_compact_fields,
                         remainder_norm, sample_field)
from dtn_lab.errors import ResolutionError


def test_worked_direction_example():
    d = cgo_directions(np.array([2 * np.pi, 0, 0]), 10.0, 5.0, 1.0)
    assert np.isclose(d.h, 1 / np.sqrt(np.pi**2 + 100), rtol=1e-14)
    assert np.isclose(d.h0, 0.1)
    assert np.allclose(d.xi, [0, 0, 1])
    assert np.allclose(d.ktilde, [0, 10, 0])
    assert all(d.check().values())


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.floats(1.0, 100.0))
def test_direction_invariants(k, rho):
    k = np.array(k)
    if np.linalg.norm(k) < 1e-3:
        k = np.array([1.0, 0.0, 0.0])
    d = cgo_directions(k, rho, 0.5, 1.0)
    c = d.check(atol=1e-10)
    assert c["unit_zeta"] and c["unit_zeta_tilde"] and c["orthogonal"] and c["sum"]
    assert abs(np.linalg.norm(d.xi) - 1) < 1e-12
    assert abs(d.xi @ d.k) < 1e-9 * max(1, np.linalg.norm(k))


def test_directions_reject_small_rho_and_zero_k():
    with pytest.raises(ValueError):
        cgo_directions(np.array([1.0, 0, 0]), 5.0, 5.0, 1.0)
    with pytest.raises(ValueError):
        cgo_directions(np.zeros(3), 20.0, 5.0, 1.0)
    d = cgo_directions(np.zeros(3), 20.0, 5.0, 1.0, allow_zero=True)
    assert np.isclose(d.h, 1 / 20)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 1.0), st.integers(0, 2), st.floats(0.0, 3.0))
def test_lattice_exponents_are_lattice_harmonic(h, zi, kx):
    dirs = cgo_directions(np.array([kx, 0, 0]) if kx > 1e-3 else np.zeros(3), 1 / h, 0.1, 1.0,
                          allow_zero=kx <= 1e-3)
    d = 1 / 32
    mp, mm = pair_exponents(type("G", (), {"spacing": d})(), dirs)
    assert abs(_symbol(d, mp)) < 1e-9 * np.vdot(mp, mp).real
    assert abs(_symbol(d, mm)) < 1e-9 * np.vdot(mm, mm).real
    # the pair sum is untouched: exp(x.(mu+ + mu-)) = exp(-i k.x)
    assert np.allclose(mp + mm, -1j * dirs.k, atol=1e-12)


def test_single_exponent_correction():
    mu0 = np.array([-2.0 + 0j, -2j, 0.0])
    mu = lattice_exponents(0.05, mu0)
    assert abs(_symbol(0.05, mu)) < 1e-12 * 4
    assert np.linalg.norm(mu - mu0) < 0.05


def test_centered_and_exact_stencils_on_constants(g3):
    # away from the outer layer, P applied to 1 is -1 (centered) and -1 + O(d^2/h^2) (exact)
    w = np.ones(g3.box_shape)
    inner = (slice(1, -1),) * 3
    c = conjugated_apply(g3, 0.0, 0.5, np.array([0, 0, 1.0]), w, "centered")[inner]
    e = conjugated_apply(g3, 0.0, 0.5, np.array([0, 0, 1.0]), w, "exact")[inner]
    assert np.allclose(c, -1.0)
    delta = (g3.spacing / 0.5) ** 2
    assert np.allclose(e, -1.0, atol=delta)
    with pytest.raises(ValueError):
        conjugated_apply(g3, 0.0, 0.5, np.array([0, 0, 1.0]), w, "upwind")


@pytest.mark.parametrize("method", ["min-norm", "dirichlet"])
def test_zero_potential_gives_zero_remainder(g3, method):
    dirs = cgo_directions(np.array([2 * np.pi, 0, 0]), 2.0, 1.0, 17.0)
    s = cgo_solution(g3, 0.0, dirs, 1, method)
    assert remainder_norm(g3, s.v) == 0.0
    assert s.residual < 1e-12


@pytest.mark.parametrize("method", ["min-norm", "dirichlet"])
@pytest.mark.parametrize("sign", [1, -1])
def test_assembled_solution_solves_the_equation(g3, method, sign):
    q = np.random.default_rng(3).uniform(0, 5, g3.shape)
    dirs = cgo_directions(np.array([2 * np.pi, 0, 0]), 2.0, 5.0, 17.0)
    s = cgo_solution(g3, q, dirs, sign, method)
    assert s.residual <= 1e-8
    assert s.remainder_residual <= 1e-8


def test_resolution_gate(g3):
    dirs = cgo_directions(np.zeros(3), 8.0, 1.0, 17.0, allow_zero=True)
    with pytest.raises(ResolutionError):
        cgo_solution(g3, 1.0, dirs)


def test_carleman_ratio_rejects_fields_touching_the_edge(g3):
    u = np.ones(g3.box_shape)
    with pytest.raises(ValueError):
        carleman_ratio(g3, 0.0, 0.5, np.array([0, 0, 1.0]), u)


def test_random_fields_are_reproducible_and_supported(g3):
    f1 = random_compact_fields(7, 4, 3, 0.5)
    f2 = random_compact_fields(7, 4, 3, 0.5)
    for a, b in zip(f1, f2):
        ua, ub = sample_field(g3, a), sample_field(g3, b)
        assert np.array_equal(ua, ub)
    X = g3.coords("box")
    far = (X[0] < -0.125 - 1e-12) | (X[0] > 1.125 + 1e-12)
    assert np.all(sample_field(g3, f1[0])[far] == 0)


def test_calibration_small(g3):
    cal = calibrate_carleman(g3, [0.5, 0.25], count=20, seed=1)
    assert cal.ratios.shape == (2, 20)
    assert np.isclose(cal.c_omega, 2 / cal.r_max)
    assert np.all(cal.ratios > 0)

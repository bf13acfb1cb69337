import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtn_lab.dtn import (LinearizedMap, MatrixMap, NoisyMap, SchrodingerMap, build_dictionary, difference_apply,
                         discrepancy, dtn_matrix, dtn_schrodinger, dtn_semilinear, flux)
from dtn_lab.forward import solve_semilinear
from dtn_lab.grid import build_grid, surface_pairing
from dtn_lab.nonlinearity import cubic, zero


def test_flux_of_linear_field(g3):
    u = g3.eval(lambda x, y, z: x)
    F = flux(g3, u, 0.0)
    mi = g3.boundary_multi_index
    face_interior = np.all((mi[:, 1:] > 0) & (mi[:, 1:] < g3.N - 1), axis=1)
    for side, val in ((0, -1.0), (g3.N - 1, 1.0)):
        sel = face_interior & (mi[:, 0] == side)
        assert np.allclose(F[sel], val)
    # integral of the flux of a harmonic field vanishes
    assert abs(surface_pairing(g3, F, np.ones(g3.n_boundary))) < 1e-12


def test_constant_data_gives_zero_flux_without_potential(g2):
    assert np.allclose(dtn_schrodinger(g2, 0.0, np.ones(g2.n_boundary)), 0.0, atol=1e-10)


def _pot(g, seed, M=5.0):
    rng = np.random.default_rng(seed)
    X = g.coords()
    return M * (0.5 + 0.5 * np.cos(rng.uniform(1, 3) * X[0] + rng.uniform(0, 3) * X[1]))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reciprocity(seed):
    g = build_grid(2, 17)
    A = SchrodingerMap(g, _pot(g, seed))
    rng = np.random.default_rng(seed)
    f1, f2 = rng.normal(size=(2, g.n_boundary))
    assert np.isclose(surface_pairing(g, A.apply(f1), f2), surface_pairing(g, f1, A.apply(f2)), rtol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_integral_identity_is_exact(seed):
    g = build_grid(2, 17)
    qA, qB = _pot(g, seed), _pot(g, seed + 1)
    A, B = SchrodingerMap(g, qA), SchrodingerMap(g, qB)
    rng = np.random.default_rng(seed)
    f1, f2 = rng.normal(size=(2, g.n_boundary)) + 1j * rng.normal(size=(2, g.n_boundary))
    vol = np.sum(g.mass * (qA - qB) * A.solve(f1) * B.solve(f2))
    bd = surface_pairing(g, difference_apply(A, B, f1), f2)
    assert abs(bd - vol) <= 1e-10 * max(abs(vol), 1e-12)


def test_difference_apply_matches_plain_difference(g3):
    A, B = SchrodingerMap(g3, _pot(g3, 1)), SchrodingerMap(g3, _pot(g3, 2))
    f = g3.eval_boundary(lambda x, y, z: np.exp(x - y) + z)
    assert np.allclose(difference_apply(A, B, f), A.apply(f) - B.apply(f), atol=1e-10)


def test_nodal_matrix_matches_apply_and_is_weighted_symmetric(g2):
    A = SchrodingerMap(g2, _pot(g2, 3))
    S = A.nodal_matrix()
    f = np.random.default_rng(0).normal(size=g2.n_boundary)
    assert np.allclose(S @ f, A.apply(f), atol=1e-10)
    W = g2.face_weights[:, None] * S
    assert np.allclose(W, W.T, atol=1e-10)
    Mm = MatrixMap(g2, S, potential=A.potential)
    assert np.allclose(difference_apply(Mm, A, f), 0.0, atol=1e-9)


def test_linearized_map_is_schrodinger_map_of_the_derivative(g2):
    a = cubic(1.0)
    f = g2.eval_boundary(lambda x, y: 1 + x * y)
    L = LinearizedMap(g2, a, f)
    q = a.derivative(solve_semilinear(g2, a, f))
    h = g2.eval_boundary(lambda x, y: np.sin(x + y))
    assert np.allclose(L.apply(h), dtn_schrodinger(g2, q, h), atol=1e-9)


def test_semilinear_dtn_of_zero_nonlinearity_is_linear(g2):
    f1 = g2.eval_boundary(lambda x, y: x * x - y * y)
    f2 = g2.eval_boundary(lambda x, y: np.cos(x))
    lhs = dtn_semilinear(g2, zero(), f1 + 2 * f2)
    assert np.allclose(lhs, dtn_semilinear(g2, zero(), f1) + 2 * dtn_semilinear(g2, zero(), f2), atol=1e-9)


def test_dictionary_and_discrepancy(g3):
    d = build_dictionary(g3, K_b=2)
    assert d.size == 4 + 6 * 2
    assert np.isfinite(d.gram_condition)
    A = SchrodingerMap(g3, 1.0)
    B = SchrodingerMap(g3, 1.1)
    opA, opB = dtn_matrix(g3, A, d), dtn_matrix(g3, B, d)
    assert discrepancy(opA, opA) == 0.0
    assert discrepancy(opA, opB) > 0
    assert np.isclose(discrepancy(opA, opB), discrepancy(opB, opA))


def test_dtn_operator_csv_roundtrip(g2):
    d = build_dictionary(g2, K_b=1)
    op = dtn_matrix(g2, SchrodingerMap(g2, 1.0), d)
    text = op.to_csv()
    assert "\r" not in text
    lines = text.strip().split("\n")
    assert lines[0].startswith("# ")
    vals = np.array([[float(x) for x in ln.split(",")[1:]] for ln in lines[3:]])
    assert np.array_equal(vals, op.matrix)


def test_noisy_map_is_entrywise_relative_and_reproducible(g2):
    clean = SchrodingerMap(g2, 1.0)
    dic = build_dictionary(g2, (-1.0, 1.0), 2)
    delta = 1e-3
    noisy = NoisyMap(clean, delta, seed=7)
    op_clean, op_noisy = dtn_matrix(g2, clean, dic), dtn_matrix(g2, noisy, dic)
    rel = np.abs(op_noisy.matrix - op_clean.matrix)
    assert np.all(rel <= delta * np.abs(op_clean.matrix) + 1e-15)
    assert np.array_equal(op_noisy.matrix, dtn_matrix(g2, NoisyMap(clean, delta, seed=7), dic).matrix)
    assert not np.array_equal(op_noisy.matrix, dtn_matrix(g2, NoisyMap(clean, delta, seed=8), dic).matrix)
    D = discrepancy(op_noisy, op_clean)
    D2 = discrepancy(dtn_matrix(g2, NoisyMap(clean, 2 * delta, seed=7), dic), op_clean)
    assert D > 0 and D2 == pytest.approx(2 * D, rel=1e-9)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtn_lab.errors import GridError
from dtn_lab.grid import (build_grid, discrete_first_eigenvalue, first_eigenvalue, inner_product,
                          laplacian_apply, normal_derivative, surface_integral, surface_pairing)


@pytest.mark.parametrize("args", [(1, 17), (4, 17), (2, 18), (2, 15), (2, 17, 0), (2, 17, 3)])
def test_build_grid_rejects_bad_input(args):
    with pytest.raises(GridError):
        build_grid(*args)


@pytest.mark.parametrize("n,N", [(2, 17), (2, 33), (3, 17)])
def test_node_counts(n, N):
    g = build_grid(n, N)
    assert g.n_boundary == N**n - (N - 2) ** n
    assert g.n_interior == (N - 2) ** n
    assert g.pad == N // 4
    assert g.box_size == N + 2 * g.pad
    assert np.isclose(g.box_extent[0], -0.25) and np.isclose(g.box_extent[1], 1.25)


def test_boundary_face_priority(g3):
    faces = g3.boundary_face
    mi = g3.boundary_multi_index
    on = (mi == 0) | (mi == g3.N - 1)
    for row, (axis, side) in zip(on, faces):
        assert axis == np.flatnonzero(row)[0]
    # face nodes include shared edges, so the six faces overcount by the edge multiplicity
    total = sum(len(g3.face_nodes(j, s)) for j in range(3) for s in (-1, 1))
    assert total == int(on.sum())


@pytest.mark.parametrize("n", [2, 3])
def test_quadrature_weights(n):
    g = build_grid(n, 17)
    assert np.isclose(g.mass.sum(), 1.0)
    assert np.isclose(g.face_weights.sum(), 2 * n)
    assert np.isclose(surface_integral(g, np.ones(g.n_boundary), np.ones(g.n_boundary)), 2 * n)


def test_laplacian_exact_on_quadratics(g3):
    u = g3.eval(lambda x, y, z: x**2 + 2 * y**2 - 3 * z**2 + x * y)
    lap = laplacian_apply(g3, u)
    inner = (slice(1, -1),) * 3
    assert np.allclose(lap[inner], 0.0, atol=1e-9)


def test_normal_derivative_of_linear_field(g3):
    u = g3.eval(lambda x, y, z: x)
    d = normal_derivative(g3, u)
    for side, val in ((-1, -1.0), (1, 1.0)):
        assert np.allclose(d[g3.face_nodes(0, side)], val)


@pytest.mark.parametrize("n,N", [(2, 33), (3, 17)])
def test_first_eigenvalue_matches_lattice_closed_form(n, N):
    g = build_grid(n, N)
    d = 1.0 / (N - 1)
    oracle = n * 4 / d**2 * np.sin(np.pi * d / 2) ** 2
    assert np.isclose(first_eigenvalue(g), oracle, rtol=1e-9)
    assert np.isclose(discrete_first_eigenvalue(n, N), oracle, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_inner_product_is_hermitian(seed):
    g = build_grid(2, 17)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    w = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    assert np.isclose(inner_product(g, u, w), np.conj(inner_product(g, w, u)))
    assert inner_product(g, u, u).real > 0
    c = 0.3 - 2j
    assert np.isclose(inner_product(g, u, c * w), np.conj(c) * inner_product(g, u, w))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_surface_pairing_is_bilinear_and_symmetric(seed):
    g = build_grid(2, 17)
    rng = np.random.default_rng(seed)
    p = rng.normal(size=g.n_boundary) + 1j * rng.normal(size=g.n_boundary)
    q = rng.normal(size=g.n_boundary) + 1j * rng.normal(size=g.n_boundary)
    assert np.isclose(surface_pairing(g, p, q), surface_pairing(g, q, p))
    assert np.isclose(surface_pairing(g, 2j * p, q), 2j * surface_pairing(g, p, q))


def test_boundary_field_validates_length(g2):
    with pytest.raises(ValueError):
        g2.boundary_field(np.zeros(g2.n_boundary + 1))

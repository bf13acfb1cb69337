"""Tensor-product lattice on the unit box and on a padded enclosing box.

Fields are plain numpy arrays.  A field on the unit box has shape ``(N,)*n``
and one on the enclosing box has shape ``(N + 2*pad,)*n``.  Boundary fields
are 1-D arrays ordered like ``Grid.boundary_index`` (C-order of the lattice).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GridError, NonConvergence

# labels returned by Grid.classify_box
INTERIOR, BOUNDARY, PADDING = 0, 1, 2


@dataclass(frozen=True)
class Grid:
    n: int
    N: int
    pad: int
    _check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self._check:
            _validate(self.n, self.N, self.pad)

    # -- geometry -------------------------------------------------------
    @property
    def spacing_exact(self) -> Fraction:
        return Fraction(1, self.N - 1)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.N - 1)

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def box_size(self) -> int:
        return self.N + 2 * self.pad

    @property
    def box_shape(self) -> tuple:
        return (self.box_size,) * self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return np.arange(self.N) / (self.N - 1)

    @cached_property
    def box_axis(self) -> np.ndarray:
        return (np.arange(self.box_size) - self.pad) / (self.N - 1)

    @property
    def box_extent(self) -> tuple:
        m = self.pad * self.spacing
        return (-m, 1.0 + m)

    def coords(self, carrier: str = "omega") -> list:
        ax = self.axis if carrier == "omega" else self.box_axis
        return np.meshgrid(*([ax] * self.n), indexing="ij")

    @property
    def omega_in_box(self) -> tuple:
        """Index tuple selecting the unit-box nodes inside a box-shaped array."""
        return (slice(self.pad, self.pad + self.N),) * self.n

    # -- node classification -------------------------------------------
    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, bool)
        for j in range(self.n):
            idx = [slice(None)] * self.n
            idx[j] = 0
            mask[tuple(idx)] = True
            idx[j] = self.N - 1
            mask[tuple(idx)] = True
        return mask

    @cached_property
    def boundary_index(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask.ravel())

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask.ravel())

    @property
    def n_boundary(self) -> int:
        return self.boundary_index.size

    @property
    def n_interior(self) -> int:
        return self.interior_index.size

    @cached_property
    def boundary_multi_index(self) -> np.ndarray:
        return np.stack(np.unravel_index(self.boundary_index, self.shape), axis=1)

    @cached_property
    def boundary_coords(self) -> np.ndarray:
        return self.boundary_multi_index / (self.N - 1)

    @cached_property
    def boundary_face(self) -> np.ndarray:
        """(axis, side) per boundary node; side is -1 for x_j = 0 and +1 for x_j = 1.

        Edge and corner nodes go to the lowest axis on which they sit.
        """
        mi = self.boundary_multi_index
        on = (mi == 0) | (mi == self.N - 1)
        axis = np.argmax(on, axis=1)
        side = np.where(mi[np.arange(len(mi)), axis] == 0, -1, 1)
        return np.stack([axis, side], axis=1)

    def face_nodes(self, axis: int, side: int) -> np.ndarray:
        """Positions (into the boundary ordering) of all nodes lying on a face."""
        target = 0 if side < 0 else self.N - 1
        return np.flatnonzero(self.boundary_multi_index[:, axis] == target)

    def classify_box(self) -> np.ndarray:
        lab = np.full(self.box_shape, PADDING, dtype=np.int8)
        inner = np.where(self.boundary_mask, BOUNDARY, INTERIOR).astype(np.int8)
        lab[self.omega_in_box] = inner
        return lab

    # -- quadrature -----------------------------------------------------
    @cached_property
    def trapezoid_1d(self) -> np.ndarray:
        w = np.full(self.N, self.spacing)
        w[[0, -1]] *= 0.5
        return w

    @cached_property
    def mass(self) -> np.ndarray:
        """Trapezoid volume weights on the unit box."""
        w = self.trapezoid_1d
        out = w
        for _ in range(self.n - 1):
            out = np.multiply.outer(out, w)
        return out

    @cached_property
    def box_mass(self) -> np.ndarray:
        w = np.full(self.box_size, self.spacing)
        w[[0, -1]] *= 0.5
        out = w
        for _ in range(self.n - 1):
            out = np.multiply.outer(out, w)
        return out

    @cached_property
    def face_weights(self) -> np.ndarray:
        """Surface trapezoid weight per boundary node, summed over every face it touches."""
        mi = self.boundary_multi_index
        tw = self.trapezoid_1d
        out = np.zeros(len(mi))
        for j in range(self.n):
            on = (mi[:, j] == 0) | (mi[:, j] == self.N - 1)
            others = [t for t in range(self.n) if t != j]
            w = np.prod(tw[mi[:, others]], axis=1)
            out += np.where(on, w, 0.0)
        return out

    # -- helpers --------------------------------------------------------
    def trace(self, u: np.ndarray) -> np.ndarray:
        check_carrier(self, u, "omega")
        return u.reshape(-1)[self.boundary_index]

    def restrict(self, u_box: np.ndarray) -> np.ndarray:
        check_carrier(self, u_box, "box")
        return u_box[self.omega_in_box]

    def embed(self, u: np.ndarray, fill=0.0) -> np.ndarray:
        """Extend a unit-box field to the enclosing box by a constant."""
        check_carrier(self, u, "omega")
        out = np.full(self.box_shape, fill, dtype=np.result_type(u, type(fill)))
        out[self.omega_in_box] = u
        return out

    def boundary_field(self, values) -> np.ndarray:
        values = np.asarray(values)
        if values.shape != (self.n_boundary,):
            raise GridError(f"boundary field needs {self.n_boundary} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("boundary field has non-finite entries")
        return values

    def eval_boundary(self, func) -> np.ndarray:
        """Sample func(x1, ..., xn) at the boundary nodes."""
        return np.asarray(func(*self.boundary_coords.T)) * np.ones(self.n_boundary)

    def eval(self, func, carrier: str = "omega") -> np.ndarray:
        X = self.coords(carrier)
        shape = self.shape if carrier == "omega" else self.box_shape
        return np.asarray(func(*X)) * np.ones(shape)


def _validate(n, N, pad):
    if n not in (2, 3):
        raise GridError(f"dimension must be 2 or 3, got {n}")
    if N % 2 == 0:
        raise GridError(f"even N ({N}) has no centered boundary nodes")
    if N < 17:
        raise GridError(f"N must be at least 17, got {N}")
    if pad <= 0:
        raise GridError("pad must be positive so the enclosing box strictly contains the unit box")
    if pad < N // 4:
        raise GridError(f"pad {pad} is below N//4 = {N // 4}")


def build_grid(n: int, N: int, pad: int | None = None) -> Grid:
    """Build a grid; pad defaults to N//4 (margin of at least 0.25)."""
    if pad is None:
        pad = N // 4
    return Grid(int(n), int(N), int(pad))


def check_carrier(g: Grid, u: np.ndarray, carrier: str | None = None) -> str:
    """Return 'omega' or 'box' for an array shape, raising on mismatch."""
    shape = np.shape(u)
    found = "omega" if shape == g.shape else "box" if shape == g.box_shape else None
    if found is None or (carrier is not None and found != carrier):
        want = carrier or "omega or box"
        raise GridError(f"field of shape {shape} does not live on {want}")
    return found


def laplacian_apply(g: Grid, u: np.ndarray, carrier: str | None = None) -> np.ndarray:
    """Centered (2n+1)-point -Laplacian at interior nodes; carrier-boundary rows pass u through."""
    check_carrier(g, u, carrier)
    out = np.array(u, copy=True)
    inner = (slice(1, -1),) * g.n
    acc = np.zeros_like(u[inner])
    for j in range(g.n):
        lo = [slice(1, -1)] * g.n
        hi = [slice(1, -1)] * g.n
        lo[j] = slice(0, -2)
        hi[j] = slice(2, None)
        acc += 2 * u[inner] - u[tuple(lo)] - u[tuple(hi)]
    out[inner] = acc / g.spacing**2
    return out


@lru_cache(maxsize=32)
def _normal_stencil(g: Grid):
    mi = g.boundary_multi_index
    axis, side = g.boundary_face.T
    step = np.zeros_like(mi)
    step[np.arange(len(mi)), axis] = -side
    i1 = np.ravel_multi_index((mi + step).T, g.shape)
    i2 = np.ravel_multi_index((mi + 2 * step).T, g.shape)
    return i1, i2


def normal_derivative(g: Grid, u: np.ndarray) -> np.ndarray:
    """Second-order one-sided outward derivative along each node's assigned face normal."""
    check_carrier(g, u, "omega")
    flat = u.reshape(-1)
    i1, i2 = _normal_stencil(g)
    u0 = flat[g.boundary_index]
    return (3 * u0 - 4 * flat[i1] + flat[i2]) / (2 * g.spacing)


def inner_product(g: Grid, u: np.ndarray, w: np.ndarray) -> complex | float:
    """Trapezoid quadrature of u * conj(w) over the carrier."""
    carrier = check_carrier(g, u)
    check_carrier(g, w, carrier)
    m = g.mass if carrier == "omega" else g.box_mass
    val = np.sum(m * u * np.conj(w))
    return val if np.iscomplexobj(val) else float(val)


def surface_integral(g: Grid, p: np.ndarray, q: np.ndarray) -> complex | float:
    """Surface trapezoid quadrature of p * conj(q) over the boundary."""
    val = np.sum(g.face_weights * np.asarray(p) * np.conj(q))
    return val if np.iscomplexobj(val) else float(val)


def surface_pairing(g: Grid, p: np.ndarray, q: np.ndarray) -> complex | float:
    """Bilinear surface quadrature of p * q (no conjugation)."""
    val = np.sum(g.face_weights * np.asarray(p) * np.asarray(q))
    return val if np.iscomplexobj(val) else float(val)


def l2_norm(g: Grid, u: np.ndarray) -> float:
    return float(np.sqrt(abs(inner_product(g, u, u))))


def boundary_l2_norm(g: Grid, p: np.ndarray) -> float:
    return float(np.sqrt(abs(surface_integral(g, p, p))))


def dirichlet_laplacian(g: Grid) -> sp.csc_matrix:
    """-Laplacian on interior nodes of the unit box with zero boundary values."""
    m = g.N - 2
    d2 = g.spacing**2
    T = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / d2
    return kron_sum([T] * g.n).tocsc()


def kron_sum(mats) -> sp.csr_matrix:
    """Sum over j of I (x) ... (x) mats[j] (x) ... (x) I, axis 0 outermost."""
    sizes = [M.shape[0] for M in mats]
    out = None
    for j, M in enumerate(mats):
        term = sp.identity(1, format="csr")
        for t in range(len(mats)):
            term = sp.kron(term, M if t == j else sp.identity(sizes[t]), format="csr")
        out = term if out is None else out + term
    return out.tocsr()


def discrete_first_eigenvalue(n: int, N: int) -> float:
    """Closed-form smallest eigenvalue of the Dirichlet lattice Laplacian."""
    d = 1.0 / (N - 1)
    return n * 4.0 / d**2 * np.sin(np.pi * d / 2) ** 2


@lru_cache(maxsize=16)
def _first_eigenvalue(n: int, N: int, tol: float, max_iter: int) -> float:
    g = Grid(n, N, N // 4, _check=False)
    A = dirichlet_laplacian(g)
    lu = spla.splu(A)
    x = np.ones(A.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        Ax = A @ x
        lam = float(x @ Ax)
        if np.linalg.norm(Ax - lam * x) <= tol * lam:
            return lam
    raise NonConvergence(f"inverse iteration did not reach {tol} in {max_iter} steps")


def first_eigenvalue(g: Grid, tol: float = 1e-10, max_iter: int = 1000) -> float:
    """Smallest Dirichlet eigenvalue of the lattice -Laplacian by inverse power iteration."""
    return _first_eigenvalue(g.n, g.N, tol, max_iter)

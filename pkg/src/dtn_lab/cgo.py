"""Complex geometric optics solutions on the enclosing box.

A CGO solution of (-Lap + q chi) u = 0 has the form

    u = exp(-x.(xi + i zeta)/h) (1 + v),   |xi| = |zeta| = 1,  xi . zeta = 0.

On the lattice the exponent mu = -(xi + i zeta)/h receives a small complex
correction (see lattice_exponents) so that exp(x.mu) is exactly harmonic for
the lattice Laplacian.  The remainder then solves

    h^2 exp(-x.mu) (-Lap + q chi) exp(x.mu) v = -h^2 q chi,

which is the conjugated operator P_h = -h^2 Lap + 2h xi.grad - 1 + h^2 q acting on
exp(-i x.zeta/h) v, up to the lattice correction.

Two remainder constructions are provided.  'dirichlet' imposes v = 0 on the
outer box boundary.  'min-norm' imposes the equation only on nodes at least two
layers inside the box and returns the smallest-norm solution v = P^H z,
(P P^H) z = rhs, found by conjugate gradients with an FFT preconditioner built
from the q-free periodic symbol.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._linalg import LinearSolver, box_dirichlet_operator
from .errors import NonConvergence, ResolutionError
from .grid import Grid, check_carrier, kron_sum

DEFAULT_C_OMEGA = 1.0


@dataclass(frozen=True)
class CgoDirections:
    k: np.ndarray
    rho: float
    xi: np.ndarray
    ktilde: np.ndarray
    h: float
    zeta: np.ndarray
    zeta_tilde: np.ndarray
    M: float
    c_omega: float

    @property
    def h0(self) -> float:
        return self.c_omega / (2 * self.M) if self.M > 0 else np.inf

    @property
    def rho0(self) -> float:
        return 1.0 / self.h0

    def check(self, atol: float = 1e-12) -> dict:
        """Algebraic invariants of the direction data."""
        return {
            "unit_zeta": abs(np.linalg.norm(self.zeta) - 1) <= atol,
            "unit_zeta_tilde": abs(np.linalg.norm(self.zeta_tilde) - 1) <= atol,
            "orthogonal": abs(self.zeta @ self.xi) <= atol and abs(self.zeta_tilde @ self.xi) <= atol,
            "sum": bool(np.all(np.abs(self.zeta + self.zeta_tilde - self.h * self.k) <= atol)),
            "regime": self.h <= self.h0 * (1 + 1e-12),
        }


def regime_h0(c_omega: float, M: float) -> float:
    """Largest semiclassical parameter allowed for potentials bounded by M."""
    return c_omega / (2 * M) if M > 0 else np.inf


def cgo_directions(k, rho: float, M: float, c_omega: float = DEFAULT_C_OMEGA,
                   allow_zero: bool = False) -> CgoDirections:
    """Direction data for probing the frequency k.

    xi = normalize(k x e_j) for the first axis e_j not parallel to k and
    ktilde = rho * normalize(xi x k).  With allow_zero, k = 0 uses xi = e_3 and
    ktilde = rho * e_1.
    """
    k = np.asarray(k, dtype=float)
    if k.shape != (3,):
        raise ValueError("probing directions need n = 3 (an orthogonal triple must exist)")
    rho0 = 1.0 / regime_h0(c_omega, M)
    if rho < rho0 * (1 - 1e-12):
        raise ValueError(f"rho = {rho} is below rho0 = {rho0}")
    nk = np.linalg.norm(k)
    if nk == 0:
        if not allow_zero:
            raise ValueError("k must be nonzero")
        xi = np.array([0.0, 0.0, 1.0])
        kt = np.array([rho, 0.0, 0.0])
    else:
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1.0
            c = np.cross(k, e)
            if np.linalg.norm(c) > 1e-12 * nk:
                break
        xi = c / np.linalg.norm(c)
        d = np.cross(xi, k)
        kt = rho * d / np.linalg.norm(d)
    h = 1.0 / np.sqrt(nk**2 / 4 + rho**2)
    return CgoDirections(k, float(rho), xi, kt, float(h), h * (k / 2 + kt), h * (k / 2 - kt),
                         float(M), float(c_omega))


def check_resolution(g: Grid, h: float, factor: float = 4.0):
    if g.spacing > h / factor * (1 + 1e-12):
        raise ResolutionError(f"spacing {g.spacing:.4g} exceeds h/{factor:g} = {h / factor:.4g}")


def potential_on_box(g: Grid, q) -> np.ndarray:
    """q chi_Omega as a box field (q given on the unit box or as a scalar)."""
    q = np.broadcast_to(np.asarray(q, dtype=float), g.shape)
    return g.embed(np.array(q), 0.0)


def _interior(g: Grid):
    return (slice(1, -1),) * g.n


def conjugated_apply(g: Grid, q, h: float, xi, w: np.ndarray, stencil: str = "exact") -> np.ndarray:
    """Apply the conjugated operator to a box field; outer-layer rows are returned as zero.

    stencil='exact' conjugates the lattice operator exactly (neighbour weights
    exp(-+ d xi_j / h)); stencil='centered' uses -h^2 Lap + 2h xi.grad - 1 + h^2 q
    with centered first differences.  The two differ by O(spacing^2 / h^2).
    """
    check_carrier(g, w, "box")
    if stencil not in ("exact", "centered"):
        raise ValueError(f"unknown stencil {stencil!r}")
    xi = np.asarray(xi, float)
    qbox = potential_on_box(g, q)
    inner = _interior(g)
    d = g.spacing
    out = np.zeros(g.box_shape, dtype=np.result_type(w, float))
    acc = np.zeros_like(out[inner])
    for j in range(g.n):
        lo = [slice(1, -1)] * g.n
        hi = [slice(1, -1)] * g.n
        lo[j], hi[j] = slice(0, -2), slice(2, None)
        wl, wh = w[tuple(lo)], w[tuple(hi)]
        if stencil == "exact":
            s = d * xi[j] / h
            acc += h * h * (2 * w[inner] - np.exp(s) * wl - np.exp(-s) * wh) / d**2
        else:
            acc += h * h * (2 * w[inner] - wl - wh) / d**2 + h * xi[j] * (wh - wl) / d
    if stencil == "centered":
        acc -= w[inner]
    out[inner] = acc + h * h * qbox[inner] * w[inner]
    return out


# -- lattice exponents ------------------------------------------------------------

def _symbol(d: float, mu) -> complex:
    """Exp(-x.mu) Lap_h exp(x.mu) for the lattice Laplacian."""
    return complex(np.sum(4 * np.sinh(d * np.asarray(mu) / 2) ** 2) / d**2)


def _symbol_grad(d: float, mu) -> np.ndarray:
    return 2 * np.sinh(d * np.asarray(mu)) / d


def lattice_exponents(d: float, mu0, mu1=None, tol: float = 1e-13, max_iter: int = 50):
    """Correct continuum exponents so exp(x.mu) is exactly lattice-harmonic.

    mu0 = -(xi + i zeta)/h solves the continuum relation mu.mu = 0 but misses the
    lattice one by O(spacing^2 / h^4).  A minimal complex correction eps is found
    by Gauss-Newton.  Given a pair (mu0, mu1) the corrections are eps and -eps,
    so mu0 + mu1 (hence the product of the pair) is preserved exactly.
    """
    mu0 = np.asarray(mu0, complex)
    pair = mu1 is not None
    mu1 = None if mu1 is None else np.asarray(mu1, complex)
    eps = np.zeros_like(mu0)
    scale = float(np.vdot(mu0, mu0).real)
    for _ in range(max_iter):
        F = [_symbol(d, mu0 + eps)]
        J = [_symbol_grad(d, mu0 + eps)]
        if pair:
            F.append(_symbol(d, mu1 - eps))
            J.append(-_symbol_grad(d, mu1 - eps))
        F = np.array(F)
        if np.max(np.abs(F)) <= tol * scale:
            break
        eps = eps - np.linalg.lstsq(np.array(J), F, rcond=None)[0]
    else:
        raise NonConvergence("lattice exponent correction did not converge")
    return (mu0 + eps, mu1 - eps) if pair else mu0 + eps


def continuum_exponent(h: float, xi, zeta) -> np.ndarray:
    return -(np.asarray(xi, float) + 1j * np.asarray(zeta, float)) / h


# -- remainder solvers ---------------------------------------------------------

@dataclass
class RemainderResult:
    v: np.ndarray  # box field
    residual: float  # relative residual of the remainder equation on the constrained nodes
    iterations: int
    method: str


def exponent_operator(g: Grid, qbox: np.ndarray, h: float, mu) -> sp.csr_matrix:
    """h^2 exp(-x.mu) (-Lap + q chi) exp(x.mu) on interior box nodes (zero outer values)."""
    m = g.box_size - 2
    d = g.spacing
    mats = []
    for j in range(g.n):
        e = np.exp(d * mu[j])
        mats.append(sp.diags([-np.ones(m - 1) / e, 2 * np.ones(m) + 0j, -e * np.ones(m - 1)], [-1, 0, 1]) / d**2)
    A = kron_sum(mats) + sp.diags(qbox[(slice(1, -1),) * g.n].reshape(-1))
    return (h * h * A).tocsr()


def _box_exp(g: Grid, mu, centre: bool = True) -> np.ndarray:
    """exp(x.mu) on the box, optionally divided by its modulus at the unit-box centre."""
    X = g.coords("box")
    shift = 0.5 if centre else 0.0
    expo = sum((X[j] - shift) * mu[j].real + 1j * X[j] * mu[j].imag for j in range(g.n))
    return np.exp(expo)


def remainder(g: Grid, q, h: float, mu, method: str = "min-norm", tol: float = 1e-11,
              maxiter: int = 5000, check: float = 1e-8) -> RemainderResult:
    """Solve h^2 exp(-x.mu)(-Lap + q chi)exp(x.mu) v = -h^2 q chi for a lattice-harmonic exponent mu."""
    mu = np.asarray(mu, complex)
    qbox = potential_on_box(g, q)
    inner = _interior(g)
    V = np.zeros(g.box_shape, complex)
    if not np.any(qbox):
        return RemainderResult(V, 0.0, 0, method)
    rhs = (-h * h * qbox[inner]).reshape(-1).astype(complex)
    P = exponent_operator(g, qbox, h, mu)
    if method == "dirichlet":
        E = _box_exp(g, mu)[inner].reshape(-1)
        solver = LinearSolver(box_dirichlet_operator(g, qbox), method="auto", tol=1e-14, check=1e-6)
        v = solver.solve(rhs * E / (h * h)) / E
        res = np.linalg.norm(P @ v - rhs) / np.linalg.norm(rhs)
        its = 1
    elif method == "min-norm":
        v, res, its = _min_norm(g, P, rhs, h, mu, tol, maxiter)
    else:
        raise ValueError(f"unknown remainder method {method!r}")
    if not res <= check:
        raise NonConvergence(f"remainder residual {res:.2e} above {check:.0e}", res)
    V[inner] = v.reshape(V[inner].shape)
    return RemainderResult(V, float(res), its, method)


def _constrained_mask(g: Grid) -> np.ndarray:
    m = g.box_size - 2
    S = np.zeros((m,) * g.n, bool)
    S[(slice(1, -1),) * g.n] = True
    return S.reshape(-1)


def _fft_preconditioner(g: Grid, h, mu, ms):
    """Inverse of |symbol|^2 of the q-free operator on a periodic box, floored near its zeros."""
    L = sfft.next_fast_len(ms + 4)
    d = g.spacing
    eta = 2 * np.pi * np.fft.fftfreq(L, d=d)
    E = np.meshgrid(*([eta] * g.n), indexing="ij")
    sym = sum((2 - np.exp(d * mu[j] + 1j * d * E[j]) - np.exp(-d * mu[j] - 1j * d * E[j])) / d**2
              for j in range(g.n)) * h * h
    inv = 1.0 / np.maximum(np.abs(sym) ** 2, (np.pi * h) ** 2)
    core = (slice(0, ms),) * g.n

    def apply(r):
        R = np.zeros((L,) * g.n, complex)
        R[core] = r.reshape((ms,) * g.n)
        return sfft.ifftn(sfft.fftn(R) * inv)[core].reshape(-1)

    return apply


def _min_norm(g: Grid, P, rhs, h, mu, tol, maxiter):
    S = _constrained_mask(g)
    PS = P[S]
    PH = PS.conj().T.tocsr()
    fS = rhs[S]
    n = int(S.sum())
    G = spla.LinearOperator((n, n), matvec=lambda z: PS @ (PH @ z), dtype=complex)
    M = spla.LinearOperator((n, n), matvec=_fft_preconditioner(g, h, mu, g.box_size - 4), dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1

    z, _ = spla.cg(G, fS, rtol=tol, maxiter=maxiter, M=M, callback=cb)
    v = PH @ z
    res = np.linalg.norm(PS @ v - fS) / np.linalg.norm(fS)
    return v, res, count[0]


# -- assembled solutions ---------------------------------------------------------

@dataclass
class CgoSolution:
    """One member of a probing pair: u = exp(x.mu)(1 + v) on the box.

    mu is the lattice-corrected exponent of -(xi_s + i zeta_s)/h, where
    (xi_s, zeta_s) = (xi, zeta) for sign +1 and (-xi, zeta_tilde) for sign -1.
    u is divided by the real constant |exp(x0.mu)|, x0 the unit-box centre, to
    balance magnitudes; the product of a +1/-1 pair is unaffected.
    """
    directions: CgoDirections | None
    sign: int
    h: float
    mu: np.ndarray
    v: np.ndarray
    u: np.ndarray
    trace: np.ndarray
    residual: float
    remainder_residual: float
    method: str
    diagnostics: dict = field(default_factory=dict)


def schrodinger_residual(g: Grid, q, u: np.ndarray, layers: int = 1) -> float:
    """||(-Lap + q chi) u|| / ||u|| over nodes at least `layers` inside the box."""
    qbox = potential_on_box(g, q)
    inner = _interior(g)
    r = np.zeros_like(u)
    lap = np.zeros_like(u[inner])
    for j in range(g.n):
        lo = [slice(1, -1)] * g.n
        hi = [slice(1, -1)] * g.n
        lo[j], hi[j] = slice(0, -2), slice(2, None)
        lap += 2 * u[inner] - u[tuple(lo)] - u[tuple(hi)]
    r[inner] = lap / g.spacing**2 + qbox[inner] * u[inner]
    keep = (slice(layers, -layers),) * g.n
    return float(np.linalg.norm(r[keep]) / np.linalg.norm(u[keep]))


def pair_exponents(g: Grid, dirs: CgoDirections):
    mu_plus = continuum_exponent(dirs.h, dirs.xi, dirs.zeta)
    mu_minus = continuum_exponent(dirs.h, -dirs.xi, dirs.zeta_tilde)
    return lattice_exponents(g.spacing, mu_plus, mu_minus)


def remainder_norm(g: Grid, v: np.ndarray) -> float:
    """L2 norm of a box field restricted to the unit box."""
    return float(np.sqrt(np.sum(g.mass * np.abs(g.restrict(v)) ** 2)))


def solution_from_exponent(g: Grid, q, h: float, mu, method: str = "min-norm", gate: float = 4.0,
                           c_omega: float = DEFAULT_C_OMEGA, dirs=None, sign: int = 1, **kw) -> CgoSolution:
    check_resolution(g, h, gate)
    rem = remainder(g, q, h, mu, method=method, **kw)
    u = _box_exp(g, mu) * (1 + rem.v)
    layers = 2 if method == "min-norm" else 1
    res = schrodinger_residual(g, q, u, layers)
    vnorm = remainder_norm(g, rem.v)
    bound = 2 / c_omega * h
    diag = {"v_norm": vnorm, "v_bound": bound, "v_within_bound": bool(vnorm <= bound),
            "iterations": rem.iterations}
    return CgoSolution(dirs, sign, h, np.asarray(mu), rem.v, u, g.trace(g.restrict(u)), res,
                       rem.residual, method, diag)


def cgo_solution(g: Grid, q, dirs: CgoDirections, sign: int = 1, method: str = "min-norm",
                 gate: float = 4.0, **kw) -> CgoSolution:
    """Build one member of the probing pair for the given direction data."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    check_resolution(g, dirs.h, gate)
    mu = pair_exponents(g, dirs)[0 if sign == 1 else 1]
    return solution_from_exponent(g, q, dirs.h, mu, method, gate, dirs.c_omega, dirs, sign, **kw)


def cgo_remainder(g: Grid, q, dirs: CgoDirections, sign: int = 1, method: str = "min-norm",
                  gate: float = 4.0, **kw) -> np.ndarray:
    """Remainder v (box field) for one member of the probing pair."""
    check_resolution(g, dirs.h, gate)
    mu = pair_exponents(g, dirs)[0 if sign == 1 else 1]
    return remainder(g, q, dirs.h, mu, method=method, **kw).v


# -- Carleman diagnostics --------------------------------------------------------

def carleman_ratio(g: Grid, q, h: float, xi, u: np.ndarray, stencil: str = "exact") -> float:
    """h ||u|| / ||P u|| over the box for u vanishing on the two outermost layers."""
    check_carrier(g, u, "box")
    edge = np.ones(g.box_shape, bool)
    edge[(slice(2, -2),) * g.n] = False
    if np.any(u[edge] != 0):
        raise ValueError("u must vanish on the two outermost box layers")
    Pu = conjugated_apply(g, q, h, xi, u, stencil)
    num = h * np.sqrt(np.sum(g.box_mass * np.abs(u) ** 2))
    den = np.sqrt(np.sum(g.box_mass * np.abs(Pu) ** 2))
    if den == 0:
        return np.inf if num > 0 else 0.0
    return float(num / den)


def random_compact_fields(seed: int, count: int, n: int, scale_h: float):
    """Seeded continuum test functions supported in [-0.125, 1.125]^n.

    Returns callables f(X) so the same functions can be sampled on any grid.
    Half are smooth random trigonometric sums under a bump, half are bump-shaped
    packets oscillating at frequency ~1/scale_h in a random direction.
    """
    rng = np.random.default_rng(seed)
    lo, hi = -0.125, 1.125
    funcs = []
    for i in range(count):
        centre = rng.uniform(0.2, 0.8, n) * (hi - lo) + lo
        radius = rng.uniform(0.25, 1.0) * (hi - lo) / 2
        radius = np.minimum(radius, np.minimum(centre - lo, hi - centre))
        power = rng.integers(1, 4)
        if i % 2 == 0:
            modes = rng.integers(0, 4, size=(4, n))
            coef = rng.normal(size=4) + 1j * rng.normal(size=4)
            funcs.append(_smooth_field(centre, radius, power, modes, coef))
        else:
            direction = rng.normal(size=n)
            direction /= np.linalg.norm(direction)
            freq = rng.uniform(0.0, 1.5) / scale_h
            funcs.append(_packet_field(centre, radius, power, direction * freq))
    return funcs


def _bump(X, centre, radius, power):
    out = 1.0
    for j, x in enumerate(X):
        t = (x - centre[j]) / radius[j]
        out = out * np.where(np.abs(t) < 1, np.cos(np.pi * t / 2) ** 2, 0.0)
    return out ** power


def _smooth_field(centre, radius, power, modes, coef):
    def f(X):
        s = sum(c * np.cos(np.pi * sum(m[j] * X[j] for j in range(len(X)))) for m, c in zip(modes, coef))
        return _bump(X, centre, radius, power) * s
    return f


def _packet_field(centre, radius, power, wave):
    def f(X):
        return _bump(X, centre, radius, power) * np.exp(1j * sum(wave[j] * X[j] for j in range(len(X))))
    return f


def sample_field(g: Grid, func) -> np.ndarray:
    u = func(g.coords("box")) * np.ones(g.box_shape)
    edge = np.ones(g.box_shape, bool)
    edge[(slice(2, -2),) * g.n] = False
    u[edge] = 0
    return u


@dataclass
class CarlemanCalibration:
    r_max: float
    c_omega: float
    h_values: list
    ratios: np.ndarray  # (len(h_values), count)


def calibrate_carleman(g: Grid, h_values, count: int = 1000, seed: int = 0, q=0.0,
                       xi=None, stencil: str = "exact") -> CarlemanCalibration:
    """Max ratio over seeded random fields; c_omega_est = 2 / r_max."""
    xi = np.eye(g.n)[-1] if xi is None else np.asarray(xi, float)
    ratios = np.zeros((len(h_values), count))
    for a, h in enumerate(h_values):
        funcs = random_compact_fields(seed, count, g.n, h)
        for b, func in enumerate(funcs):
            ratios[a, b] = carleman_ratio(g, q, h, xi, sample_field(g, func), stencil)
    r_max = float(ratios.max())
    return CarlemanCalibration(r_max, 2.0 / r_max, list(h_values), ratios)

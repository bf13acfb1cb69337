"""Fourier probing of potential differences and recovery of the nonlinear term.

For Schrodinger maps A, B with potentials q_A, q_B and lattice solutions u (of
A) and u~ (of B), the bilinear identity

    sum_x m(x) (q_A - q_B) u u~  =  <(A - B)(u|boundary), u~|boundary>

holds exactly for the flux-based maps.  With a probing pair whose product is
exp(-i k.x)(1 + v)(1 + v~), the boundary side estimates the Fourier coefficient
of q_A - q_B at k.
"""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import bisect

from .cgo import (DEFAULT_C_OMEGA, _box_exp, cgo_directions, check_resolution, pair_exponents,
                  solution_from_exponent)
from .dtn import LinearizedMap, difference_apply
from .errors import ResolutionError
from .grid import Grid, surface_pairing
from .nonlinearity import Nonlinearity


# -- configuration ----------------------------------------------------------------

@dataclass
class ReconstructionConfig:
    K_max: int = 2
    rho: float | str = "auto"  # target probing magnitude, or "auto" for the balancing rule
    s: float = 0.4
    beta: float = 0.5
    kappa_est: float = 1.0
    c_omega_est: float = DEFAULT_C_OMEGA
    M: float = 1.0  # bound on the potentials
    rho_cap: float = 50.0  # used when the discrepancy is zero
    cutoff: float | str | None = "auto"  # lattice radius |z|; "auto" uses rho1^(1/n)
    gate: float = 4.0  # require spacing <= h / gate
    remainder: str = "min-norm"
    threads: int = 1

    def __post_init__(self):
        if self.K_max < 1:
            raise ValueError("K_max must be at least 1")
        if not 0 < self.s < min(0.5, self.beta):
            raise ValueError("need 0 < s < min(1/2, beta)")

    def gamma(self, n: int = 3) -> float:
        return min(0.5, self.s / n)

    @property
    def rho0(self) -> float:
        return 2 * self.M / self.c_omega_est


# -- balancing rule and modulus ---------------------------------------------------

@dataclass
class RhoChoice:
    rho: float
    flag: str  # "balanced", "saturated" or "noise-free"
    mu: float


def choose_rho(D: float, gamma: float, kappa: float, rho0: float, rho_cap: float = 50.0) -> RhoChoice:
    """Root rho1 >= rho0 of rho^gamma exp(kappa rho) = 1/D.

    The branch is unsaturated when D < min(1, 1/(rho0 e^kappa)) and a root at
    or above rho0 exists, i.e. D < rho0^-gamma e^(-kappa rho0); otherwise rho0
    is returned with flag "saturated".
    """
    if D < 0:
        raise ValueError("discrepancy must be non-negative")
    mu = min(1.0, 1.0 / (rho0 * np.exp(kappa)))
    if D == 0:
        return RhoChoice(float(rho_cap), "noise-free", mu)
    at_rho0 = gamma * np.log(rho0) + kappa * rho0 + np.log(D)
    if D >= mu or at_rho0 >= 0:
        return RhoChoice(float(rho0), "saturated", mu)

    def F(r):
        return gamma * np.log(r) + kappa * r + np.log(D)

    hi = rho0 + (abs(np.log(D)) + 1) / kappa
    while F(hi) < 0:
        hi = rho0 + 2 * (hi - rho0)
    root = bisect(F, rho0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
    return RhoChoice(float(root), "balanced", mu)


def modulus_exponent(n: int, s: float, beta: float) -> float:
    return 2 * min(0.5, s / n) * beta / (n + 2 * beta)


def stability_modulus(t: float, n: int = 3, s: float = 0.4, beta: float = 0.5) -> float:
    """|ln t|^(-theta) + t for t > 0 and 0 at t = 0; the log term is frozen at t = e^-2 for larger t."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return 0.0
    tc = min(t, np.exp(-2.0))
    return float(abs(np.log(tc)) ** (-modulus_exponent(n, s, beta)) + t)


def calibrate_kappa(g: Grid, rhos, modes=((0, 0, 0), (1, 0, 0)), M: float = 1.0,
                    c_omega: float = DEFAULT_C_OMEGA) -> float:
    """Growth rate of the product of probing-trace norms in rho.

    Uses the potential-free exponential factors, so no solves are needed; the
    largest least-squares slope of ln(|g| |g~|) against rho over the modes is
    returned.
    """
    slopes = []
    for z in modes:
        k = 2 * np.pi * np.asarray(z, float)
        logs = []
        for r in rhos:
            dirs = cgo_directions(k, r, M, c_omega, allow_zero=True)
            norms = []
            for mu in pair_exponents(g, dirs):
                tr = g.trace(g.restrict(_box_exp(g, mu)))
                norms.append(np.sqrt(np.sum(g.face_weights * np.abs(tr) ** 2)))
            logs.append(np.log(norms[0] * norms[1]))
        slopes.append(np.polyfit(np.asarray(rhos, float), logs, 1)[0])
    return float(max(slopes))


# -- probing ------------------------------------------------------------------------

@dataclass
class ProbeResult:
    z: tuple
    k: np.ndarray
    rho: float
    h: float
    boundary: complex  # estimate from the boundary pairing
    volume: complex | None = None  # lattice volume side when potentials are known
    exact: complex | None = None  # trapezoid Fourier coefficient of the true difference
    trace_norms: tuple = (np.nan, np.nan)
    remainder_norms: tuple = (np.nan, np.nan)
    flagged: bool = False


def fourier_coefficient(g: Grid, p: np.ndarray, k) -> complex:
    """Trapezoid approximation of the integral of p(x) exp(-i k.x) over the unit box."""
    X = g.coords()
    return complex(np.sum(g.mass * p * np.exp(-1j * sum(k[j] * X[j] for j in range(g.n)))))


def _potential(m):
    return getattr(m, "potential", None)


class ProbeCache(dict):
    """Caches probing solutions keyed by (z, rho, sign, potential digest, method)."""


def _digest(q):
    import hashlib
    return hashlib.sha1(np.ascontiguousarray(q, dtype=float).tobytes()).hexdigest()


def probing_pair(g: Grid, qA, qB, z, rho, cfg: ReconstructionConfig, cache: ProbeCache | None = None):
    k = 2 * np.pi * np.asarray(z, float)
    dirs = cgo_directions(k, rho, cfg.M, cfg.c_omega_est, allow_zero=True)
    check_resolution(g, dirs.h, cfg.gate)
    mus = pair_exponents(g, dirs)
    out = []
    for sign, q, mu in ((1, qA, mus[0]), (-1, qB, mus[1])):
        key = (tuple(z), float(rho), sign, _digest(q), cfg.remainder)
        if cache is not None and key in cache:
            out.append(cache[key])
            continue
        sol = solution_from_exponent(g, q, dirs.h, mu, cfg.remainder, cfg.gate, cfg.c_omega_est, dirs, sign)
        slim = {"trace": sol.trace, "u": g.restrict(sol.u), "v_norm": sol.diagnostics["v_norm"],
                "h": dirs.h}
        if cache is not None:
            cache[key] = slim
        out.append(slim)
    return dirs, out[0], out[1]


def probe_fourier_mode(g: Grid, A, B, z, rho: float, cfg: ReconstructionConfig | None = None,
                       cache: ProbeCache | None = None) -> ProbeResult:
    """Estimate the Fourier coefficient of q_A - q_B at k = 2 pi z.

    The probing solutions are built from the potentials attached to A and B;
    the data enter only through (A - B) applied to the first trace.
    """
    cfg = cfg or ReconstructionConfig()
    if g.n != 3:
        raise ValueError("Fourier probing needs n = 3")
    qA, qB = _potential(A), _potential(B)
    if qA is None or qB is None:
        raise ValueError("both maps must carry potentials to build probing solutions")
    dirs, first, second = probing_pair(g, qA, qB, z, rho, cfg, cache)
    g1, g2 = first["trace"], second["trace"]
    bd = complex(surface_pairing(g, difference_apply(A, B, g1), g2))
    dq = qA - qB
    vol = complex(np.sum(g.mass * dq * first["u"] * second["u"]))
    exact = fourier_coefficient(g, dq, dirs.k)
    tn = (float(np.sqrt(np.sum(g.face_weights * np.abs(g1) ** 2))),
          float(np.sqrt(np.sum(g.face_weights * np.abs(g2) ** 2))))
    return ProbeResult(tuple(int(t) for t in z), dirs.k, float(rho), dirs.h, bd, vol, exact, tn,
                       (first["v_norm"], second["v_norm"]))


def mode_set(K_max: int, cutoff: float | None = None, n: int = 3) -> list:
    """Lattice vectors z with |z|_inf <= K_max (and |z| <= cutoff), one per +-z pair, zero first."""
    out = []
    for z in itertools.product(range(-K_max, K_max + 1), repeat=n):
        if cutoff is not None and np.linalg.norm(z) > cutoff + 1e-12:
            continue
        nz = [t for t in z if t != 0]
        if nz and nz[0] < 0:
            continue
        out.append(tuple(z))
    out.sort(key=lambda t: (sum(x * x for x in t), t))
    return out


def gate_rho(g: Grid, z, gate: float) -> float:
    """Largest rho whose h satisfies the resolution gate for k = 2 pi z."""
    h_min = gate * g.spacing
    val = 1 / h_min**2 - (2 * np.pi) ** 2 * float(np.dot(z, z)) / 4
    return float(np.sqrt(val)) if val > 0 else -1.0


# -- reconstruction -------------------------------------------------------------------

@dataclass
class ReconstructionReport:
    coefficients: dict  # z -> complex estimate (both signs of z)
    probes: list
    field: np.ndarray
    discrepancy: float | None
    rho: RhoChoice
    cutoff: float | None
    flagged: list
    errors: dict = field(default_factory=dict)
    aprime: dict = field(default_factory=dict)
    a_diff: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def cx(c):
            return [float(np.real(c)), float(np.imag(c))]
        doc = {
            "coefficients": {",".join(map(str, z)): cx(c) for z, c in sorted(self.coefficients.items())},
            "probes": [{"z": list(p.z), "rho": p.rho, "h": p.h, "boundary": cx(p.boundary),
                        "volume": None if p.volume is None else cx(p.volume),
                        "exact": None if p.exact is None else cx(p.exact),
                        "trace_norms": list(p.trace_norms), "remainder_norms": list(p.remainder_norms)}
                       for p in self.probes],
            "discrepancy": self.discrepancy,
            "rho": asdict(self.rho),
            "cutoff": self.cutoff,
            "flagged": [list(z) for z in self.flagged],
            "errors": self.errors,
            "aprime": {str(k): v for k, v in self.aprime.items()},
            "a_diff": {str(k): v for k, v in self.a_diff.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def synthesize(g: Grid, coefficients: dict) -> np.ndarray:
    """Real part of the finite sum of c_z exp(2 pi i z.x) on the unit box."""
    X = g.coords()
    out = np.zeros(g.shape, complex)
    for z, c in sorted(coefficients.items()):
        out += c * np.exp(2j * np.pi * sum(z[j] * X[j] for j in range(g.n)))
    return out.real


def reconstruct_potential(g: Grid, A, B, cfg: ReconstructionConfig | None = None,
                          discrepancy: float | None = None, truth: np.ndarray | None = None,
                          cache: ProbeCache | None = None) -> ReconstructionReport:
    """Truncated Fourier synthesis of q_A - q_B from probing the pair of maps.

    discrepancy is the data-error level fed to the balancing rule (None or 0
    means noise-free).  Modes whose probing parameter cannot meet the resolution
    gate are flagged and set to zero.
    """
    cfg = cfg or ReconstructionConfig()
    gamma = cfg.gamma(g.n)
    D = 0.0 if discrepancy is None else float(discrepancy)
    if cfg.rho == "auto":
        choice = choose_rho(D, gamma, cfg.kappa_est, cfg.rho0, cfg.rho_cap)
    else:
        choice = RhoChoice(float(cfg.rho), "fixed", np.nan)
    if cfg.cutoff == "auto":
        cutoff = choice.rho ** (1.0 / g.n)
    else:
        cutoff = cfg.cutoff
    modes = mode_set(cfg.K_max, cutoff, g.n)
    plan, flagged = [], []
    for z in modes:
        r = min(choice.rho, gate_rho(g, z, cfg.gate))
        if r < cfg.rho0 or r <= 0:
            flagged.append(z)
            continue
        plan.append((z, r))

    def run(item):
        z, r = item
        try:
            return probe_fourier_mode(g, A, B, z, r, cfg, cache)
        except ResolutionError:
            return None

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(run, plan))
    else:
        results = [run(item) for item in plan]
    coeffs, probes = {}, []
    for (z, _), res in zip(plan, results):
        if res is None:
            flagged.append(z)
            continue
        probes.append(res)
        c = res.boundary
        if not any(z):
            coeffs[z] = complex(c.real, 0.0)
        else:
            coeffs[z] = c
            coeffs[tuple(-t for t in z)] = np.conj(c)
    fld = synthesize(g, coeffs)
    report = ReconstructionReport(coeffs, probes, fld, discrepancy, choice, cutoff, flagged)
    if truth is not None:
        report.errors = reconstruction_errors(g, fld, truth, probes)
    return report


def reconstruction_errors(g: Grid, fld, truth, probes) -> dict:
    diff = fld - truth
    nt = float(np.sqrt(np.sum(g.mass * truth**2)))
    err = float(np.sqrt(np.sum(g.mass * diff**2)))
    energy = sum((1 if not any(p.z) else 2) * abs(p.boundary) ** 2 for p in probes)
    return {"l2_error": err, "relative_l2_error": err / nt if nt > 0 else np.nan,
            "truth_l2": nt, "coefficient_energy": float(energy),
            "max_identity_mismatch": float(max((abs(p.boundary - p.volume) for p in probes), default=0.0))}


# -- nonlinearity recovery ------------------------------------------------------------

def boundary_layer_mean(g: Grid, fld: np.ndarray) -> float:
    """Mean over nodes on the boundary and the first layer inside it."""
    inner = np.zeros(g.shape, bool)
    inner[(slice(2, -2),) * g.n] = True
    sel = ~inner
    return float(np.sum(g.mass[sel] * fld[sel]) / np.sum(g.mass[sel]))


def linearized_pair(g: Grid, a: Nonlinearity, b: Nonlinearity, lam: float, method: str = "auto"):
    f = np.full(g.n_boundary, float(lam))
    return LinearizedMap(g, a, f, method=method), LinearizedMap(g, b, f, method=method)


def recover_aprime(g: Grid, a: Nonlinearity, b: Nonlinearity, lambdas, cfg: ReconstructionConfig | None = None,
                   maps=None, discrepancy: float | None = None, cache: ProbeCache | None = None) -> dict:
    """Estimate a'(lam) - b'(lam) on a grid of constant data levels.

    maps optionally supplies {lam: (A, B)} (for example noisy matrix maps);
    otherwise the exact linearized maps at constant data are used.  Returns
    {lam: (estimate, report)}.
    """
    cfg = cfg or ReconstructionConfig()
    out = {}
    for lam in lambdas:
        if maps is not None:
            A, B = maps[lam]
        else:
            A, B = linearized_pair(g, a, b, lam)
        truth = A.potential - B.potential
        rep = reconstruct_potential(g, A, B, cfg, discrepancy=discrepancy, truth=truth, cache=cache)
        out[lam] = (boundary_layer_mean(g, rep.field), rep)
    return out


def integrate_aprime(lambdas, samples) -> np.ndarray:
    """Trapezoid antiderivative on a uniform grid containing 0, anchored to vanish at 0."""
    lam = np.asarray(lambdas, float)
    y = np.asarray(samples, float)
    order = np.argsort(lam)
    lam, y = lam[order], y[order]
    steps = np.diff(lam)
    if lam.size > 1 and not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("lambda grid must be uniform")
    zero = np.flatnonzero(np.isclose(lam, 0.0, atol=1e-12))
    if zero.size == 0:
        raise ValueError("lambda grid must contain 0")
    i0 = int(zero[0])
    out = np.zeros_like(y)
    if i0 + 1 < lam.size:
        out[i0:] = cumulative_trapezoid(y[i0:], lam[i0:], initial=0.0)
    if i0 > 0:
        left = cumulative_trapezoid(y[i0::-1], lam[i0::-1], initial=0.0)
        out[:i0 + 1] = left[::-1]
    back = np.empty_like(out)
    back[order] = out
    return back

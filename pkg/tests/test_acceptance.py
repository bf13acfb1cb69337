"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import numpy as np
import pytest

from dtn_lab.cgo import calibrate_carleman
from dtn_lab.experiments import ExperimentConfig, run
from dtn_lab.grid import build_grid

pytestmark = pytest.mark.slow

CARLEMAN_H = [1.0, 0.5, 0.25, 0.125]


@pytest.fixture(scope="module")
def c_omega_est():
    """Carleman constant calibrated on the coarsest grid over the gated range of N = 33."""
    return calibrate_carleman(build_grid(3, 17), CARLEMAN_H, count=1000, seed=0).c_omega


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return emit


def _run(d):
    res = run(ExperimentConfig.from_dict(d))
    assert res.summary["error"] is None, res.summary["error"]
    return res.summary["suites"]


def test_1_forward_correctness(report):
    rows, ok = [], True
    for n, N in ((2, 33), (3, 17)):
        s = _run({"kind": "forward-convergence", "grid": {"n": n, "N": N},
                  "params": {"suites": ["linear_consistency"]}})["linear_consistency"]
        ok &= s["passed"]
        rows.append(f"n={n} N={N} rel={s['relative_error']:.1e} t={s['seconds']:.2f}s")
    report(1, ok, "semilinear vs direct linear solve <= 1e-8, <= 10 s; " + "; ".join(rows))


def test_2_eigenvalue_gate(report):
    rows, ok = [], True
    for n, N in ((2, 33), (3, 17)):
        s = _run({"kind": "forward-convergence", "grid": {"n": n, "N": N},
                  "params": {"suites": ["eigenvalue"]}})["eigenvalue"]
        ok &= s["passed"]
        rows.append(f"n={n} N={N} gap={100 * s['relative_gap']:.3f}%")
    report(2, ok, "first eigenvalue within 0.5% of n pi^2; " + "; ".join(rows))


def test_3_linearization(report):
    s = _run({"kind": "linearization-check", "grid": {"n": 2, "N": 33},
              "nonlinearity": {"family": "cubic", "scale": 1.0},
              "params": {"suites": ["frechet"], "eps": [1e-1, 1e-2, 1e-3, 1e-4]}})["frechet"]
    report(3, s["passed"], f"finite-difference residual slope {s['slope']:.3f} in [1.8, 2.2]")


def test_4_carleman(report):
    s = _run({"kind": "carleman-check", "grid": {"n": 3, "N": 33}, "reconstruction": {"M": 5.0},
              "params": {"calibration_N": 17, "count": 1000, "h_values": CARLEMAN_H}})["carleman"]
    report(4, s["passed"], f"max ratio {s['max_ratio']:.4f} at N=33 <= 1.1 * 2/c_est = "
                           f"{1.1 * s['bound']:.4f} (c_est = {s['c_omega_est']:.3f} at N=17)")


def test_5_cgo_remainder(report, c_omega_est):
    s = _run({"kind": "cgo-check", "grid": {"n": 3, "N": 33},
              "params": {"suites": ["zero_potential", "remainder_decay"], "M": 5.0,
                         "c_omega_est": c_omega_est}})
    zero, decay = s["zero_potential"], s["remainder_decay"]
    slopes = ", ".join(f"{k} {v:.3f}" for k, v in decay["slopes"].items())
    report(5, zero["passed"] and decay["passed"],
           f"|v| for q = 0: {zero['v_norm']:.1e} (<= 1e-12); decay slopes over h in "
           f"[{min(decay['h_values']):.3f}, {max(decay['h_values']):.3f}]: {slopes} (need >= 0.9)")


def test_6_integral_identity(report):
    s = _run({"kind": "reconstruct", "grid": {"n": 3, "N": 17},
              "reconstruction": {"M": 5.0, "c_omega_est": 17.0},
              "params": {"suites": ["identity"], "identity_N": [17, 33]}})["identity"]
    mm = s["mismatch"]
    report(6, s["passed"], f"relative mismatch N=17 {mm['17']:.1e} (<= 1e-2), N=33 {mm['33']:.1e} (<= 3e-3)")


def test_7_noise_free_reconstruction(report, c_omega_est):
    s = _run({"kind": "reconstruct", "grid": {"n": 3, "N": 33},
              "reconstruction": {"K_max": 2, "M": 1.2, "c_omega_est": c_omega_est},
              "params": {"suites": ["single_mode"], "eps_mode": 0.1}})["single_mode"]
    report(7, s["passed"], f"relative L2 error {s['relative_l2_error']:.4f} (<= 0.2), "
                           f"{s['seconds']:.0f} s (<= 600 s), {s['probes']} probes")


def test_8_nonlinearity_recovery(report, c_omega_est):
    s = _run({"kind": "reconstruct", "grid": {"n": 3, "N": 33},
              "nonlinearity": {"family": "cubic", "scale": 1.0},
              "reconstruction": {"K_max": 1, "M": 3.2, "c_omega_est": c_omega_est},
              "params": {"suites": ["aprime"], "eps": 0.05}})["aprime"]
    report(8, s["passed"], f"sup |recovered (a - a~) - true| = {s['sup_error']:.2e} (<= 0.3 eps = 1.5e-2)")


def test_9_stability_curve(report, c_omega_est):
    s = _run({"kind": "stability-curve", "grid": {"n": 3, "N": 17},
              "nonlinearity": {"family": "cubic", "scale": 1.0},
              "reconstruction": {"K_max": 1, "M": 3.2, "c_omega_est": c_omega_est},
              "noise": {"deltas": list(np.logspace(-4, -1, 13)), "seed": 0},
              "params": {"eps": 0.05}})
    rank, fit = s["stability_rank"], s["stability_fit"]
    report(9, rank["passed"] and fit["passed"],
           f"Spearman {rank['spearman']:.3f} (>= 0.9); theta {fit.get('theta', float('nan')):.4f} (> 0), "
           f"R^2 {fit.get('r2', float('nan')):.3f} (>= 0.8)")


def test_10_choose_rho(report):
    s = _run({"kind": "reconstruct", "grid": {"n": 3, "N": 17},
              "params": {"suites": ["choose_rho"], "draws": 1000}})["choose_rho"]
    report(10, s["passed"], f"max root residual {s['max_root_residual']:.1e} (<= 1e-8) over {s['draws']} draws; "
                            f"worked rho1 = {s['worked_rho']:.4f} (12.55 +- 0.01)")

"""Lattice Dirichlet-to-Neumann maps, CGO probing and nonlinearity recovery for semilinear elliptic problems."""
from .cgo import (CgoDirections, CgoSolution, calibrate_carleman, carleman_ratio, cgo_directions,
                  cgo_remainder, cgo_solution, conjugated_apply)
from .dtn import (DtnOperator, LinearizedMap, MatrixMap, NoisyMap, SchrodingerMap, build_dictionary, difference_apply,
                  discrepancy, dtn_linearized, dtn_matrix, dtn_schrodinger, dtn_semilinear)
from .errors import (ClassViolation, DtnLabError, GridError, InsufficientData, NonConvergence, QNotAdmissible,
                     ResolutionError)
from .experiments import ExperimentConfig, fit_modulus, run
from .forward import SolveOptions, harmonic_extension, solve_schrodinger, solve_semilinear
from .grid import Grid, build_grid, first_eigenvalue
from .nonlinearity import Nonlinearity, distance_d, make_nonlinearity, seminorm_p, validate_class
from .reconstruct import (ReconstructionConfig, choose_rho, integrate_aprime, probe_fourier_mode,
                          reconstruct_potential, recover_aprime, stability_modulus)

__all__ = [name for name in dir() if not name.startswith("_")]

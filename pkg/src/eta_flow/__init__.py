"""Doublon transfer into an eta-pairing state in a composite non-Hermitian Hubbard system.

A fully occupied source cluster tunnels unidirectionally into a Hubbard
cluster; the collective dynamics sit at an exceptional point and drive the
state toward the coalescing eta-pairing eigenstate.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DomainError, EngineError, NotBipartiteError,
                     UnsupportedParameterError)
from .fock import FockBasis, SparseOperator, assemble, build_basis
from .model import GEOMETRIES, LatticeSpec, build_full, sector_basis, validate_spec
from .eta import pair_state, state_a, state_b
from .effective import build_h_eff, collective_matrix, doublon_basis, ep_order
from .propagate import EvolutionRequest, Trajectory, evolve, propagate
from .observables import (FitResult, TimeSeries, dirac_probability, fidelity, loschmidt_echo,
                          sample_times, scaling_fit, simulate, u_sweep)

__all__ = [
    "ConvergenceError", "DomainError", "EngineError", "NotBipartiteError",
    "UnsupportedParameterError", "FockBasis", "SparseOperator", "assemble", "build_basis",
    "GEOMETRIES", "LatticeSpec", "build_full", "sector_basis", "validate_spec",
    "pair_state", "state_a", "state_b", "build_h_eff", "collective_matrix", "doublon_basis",
    "ep_order", "EvolutionRequest", "Trajectory", "evolve", "propagate", "FitResult",
    "TimeSeries", "dirac_probability", "fidelity", "loschmidt_echo", "sample_times", "scaling_fit",
    "simulate", "u_sweep",
]

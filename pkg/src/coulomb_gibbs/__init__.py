"""Desk-scale Gibbs sampling and free-energy estimation for trapped Coulomb gases."""

from .coulomb import CouplingMatrix, InteractionTable, QuadratureSpec, interaction_table, two_body_matrix_elements
from .free_energy import (
    FreeEnergyReport,
    IntegrationPlan,
    bogoliubov_bracket,
    estimate_free_energy,
    thermo_integrate_exact,
    thermo_integrate_sampled,
    truncation_sweep,
)
from .guards import DimensionGuardError, NumericalQualityError
from .hamiltonian import GibbsState, HamiltonianBlock, ModelParams, build_truncated_hamiltonian, gibbs_state
from .lindblad import FilterSpec, build_generator_symmetrized, build_generator_trace_class, build_jump_set
from .oscillator import ProductBasis, product_basis
from .spectral import mixing_time_empirical, spectral_summary

__all__ = [
    "CouplingMatrix",
    "InteractionTable",
    "QuadratureSpec",
    "interaction_table",
    "two_body_matrix_elements",
    "FreeEnergyReport",
    "IntegrationPlan",
    "bogoliubov_bracket",
    "estimate_free_energy",
    "thermo_integrate_exact",
    "thermo_integrate_sampled",
    "truncation_sweep",
    "DimensionGuardError",
    "NumericalQualityError",
    "GibbsState",
    "HamiltonianBlock",
    "ModelParams",
    "build_truncated_hamiltonian",
    "gibbs_state",
    "FilterSpec",
    "build_generator_symmetrized",
    "build_generator_trace_class",
    "build_jump_set",
    "ProductBasis",
    "product_basis",
    "mixing_time_empirical",
    "spectral_summary",
]

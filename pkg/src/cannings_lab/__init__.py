"""Hierarchically interacting Cannings processes, their spatial coalescent dual
and the renormalisation flow of volatility constants."""
from .coalescent import (CEMETERY, CoalescentConfig, ImmigrationEmigration, LabelledPartition,
                         absorption_probs_exact, pair_hazard_mc, simulate, simulate_many)
from .families import CoefficientFamily
from .forward import ForwardConfig, PopulationField, duality_gap, simulate_forward
from .hiergeo import HierGeometry, MigrationSpec, mean_field, walk_spectrum
from .lambda_measure import BetaDensity, LambdaMeasure
from .mckv import MkvParams, equilibrium_moment, sample_equilibrium, sample_interaction_chain
from .renorm import (chain_variance, classify_regime, clustering_speed, dichotomy_test, dk_flow,
                     hazard_closed_form, mobius_fixed_points)

__all__ = [
    "CEMETERY", "CoalescentConfig", "ImmigrationEmigration", "LabelledPartition",
    "absorption_probs_exact", "pair_hazard_mc", "simulate", "simulate_many",
    "CoefficientFamily", "ForwardConfig", "PopulationField", "duality_gap", "simulate_forward",
    "HierGeometry", "MigrationSpec", "mean_field", "walk_spectrum",
    "BetaDensity", "LambdaMeasure",
    "MkvParams", "equilibrium_moment", "sample_equilibrium", "sample_interaction_chain",
    "chain_variance", "classify_regime", "clustering_speed", "dichotomy_test", "dk_flow",
    "hazard_closed_form", "mobius_fixed_points",
]

"""Bio-PEPA with locations: a compiler and simulator for multi-compartment
biochemical models.

The pipeline is ``parse_system`` -> ``analyze`` -> ``derive_reaction_network``
-> ``bind_network``, after which the network can be handed to the
deterministic (``odesim``) or stochastic (``stochsim``) back-end.
"""
from importlib import resources

from .analyzer import (
    AnalysisResult, Diagnostic, Reaction, ReactionNetwork, analyze,
    check_system, conserved_moieties, derive_reaction_network,
    expand_location_shorthand, format_diagnostic,
)
from .kinetics import (
    EvalEnvironment, RateBinding, RateFunction, bind_kinetic_law,
    bind_network, eval_expression, resolve_parameters,
)
from .model import (
    BioPepaSystem, KineticLaw, Location, LocationKind, LocationTree,
    Observable, Parameter, PrefixTerm, Role, SourceSpan, SpeciesComponent,
    build_location_tree, location_size_at,
)
from .odesim import (
    TimeSeries, VectorField, build_vector_field, integrate_dopri,
    integrate_rk4,
)
from .parser import (
    ParseDiagnostic, Severity, format_system, parse_expression, parse_system,
)
from .stochsim import (
    Ensemble, RngState, StochasticTrajectory, run_ensemble,
    sample_exponential, sample_poisson, simulate_direct,
    simulate_next_reaction, simulate_tau_leap,
)

__version__ = "0.1.0"


def bundled_model_path(name: str = "camp_pka_mapk.biopepa"):
    """Filesystem path of a model shipped with the package."""
    return resources.files(__name__) / "models" / name

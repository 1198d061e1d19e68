"""Simulation and numerical checks for a toy model of DLA arm growth in a wedge."""

from .bounds import BoundsProfile, azuma_tail, derive_profile, e2_union_bound, monotone_tail_bound
from .chain_core import (
    ChainParams,
    ChainState,
    ExactDistribution,
    Trajectory,
    exact_distribution,
    simulate,
    step,
    transition_probs,
)
from .errors import InvariantViolation, ResourceCapError, ValidationError
from .estimators import (
    EnsembleSpec,
    EnsembleSummary,
    conditional_monotone_frequency,
    event_e1,
    event_e2,
    freeze_time,
    occupation_fraction,
    run_ensemble,
)
from .wedge_dla import WedgeAggregate, WedgeGeometry, attach_particle, ends_estimate, grow, in_wedge, tip_gap

__version__ = "0.1.0"

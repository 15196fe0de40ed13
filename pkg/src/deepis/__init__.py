"""Deep importance sampling with squared tensor-train inverse Rosenblatt transports."""

from .basis import (
    DomainError,
    ReferenceDensity1D,
    UnivariateBasis,
    eval_basis,
    mass_matrix,
    truncated_normal_reference,
    uniform_reference,
    weighted_mass_matrix,
)
from .ftt import CrossOptions, CrossResult, FunctionalTT, cross_approximate
from .sirt import SIRT, build_sirt
from .dirt import DIRT, BridgingSchedule, build_dirt
from .rare_event import (
    FailureEvent,
    SmoothingParams,
    geometric_ladder,
    posterior_denominator_bridging,
    posterior_numerator_bridging,
    prior_bridging,
    sigmoid_smooth,
    smooth_indicator,
    smoothing_bound,
    tempering_ladder,
)
from .estimators import (
    CouplingSpec,
    EstimatorReport,
    dis_estimate,
    ess,
    hellinger_estimate,
    ratio_estimate,
    relative_mse,
    replicate_rng,
)
from .cross_entropy import cross_entropy_estimate, cross_entropy_ratio_estimate

__version__ = "0.1.0"

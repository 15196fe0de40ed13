"""Built-in test problems: annulus/disk events, the SIR compartment model,
and the conjugate Gaussian toy."""

from .annulus import AnnulusProblem
from .gauss_toy import GaussianConjugateToy
from .ode import BatchSolution, OdeOptions, StepLimitError, integrate_batch
from .priors import BoxPrior, prior_transform, prior_transform_log_jacobian
from .sir import (
    SirProblem,
    integrate_sir,
    read_adjacency_file,
    read_data_csv,
    sir_generate_data,
    sir_log_likelihood,
    sir_response,
    sir_rhs,
    write_adjacency_file,
    write_data_csv,
)

__all__ = [
    "AnnulusProblem",
    "GaussianConjugateToy",
    "BatchSolution",
    "OdeOptions",
    "StepLimitError",
    "integrate_batch",
    "BoxPrior",
    "prior_transform",
    "prior_transform_log_jacobian",
    "SirProblem",
    "integrate_sir",
    "read_adjacency_file",
    "read_data_csv",
    "sir_generate_data",
    "sir_log_likelihood",
    "sir_response",
    "sir_rhs",
    "write_adjacency_file",
    "write_data_csv",
]

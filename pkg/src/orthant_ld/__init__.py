"""Local large-deviation rates, path costs and tube-probability estimates for
partially homogeneous jump networks on the nonnegative integer orthant."""
from .errors import (
    ArtifactError,
    ModelError,
    NoConvergence,
    NotIrreducible,
    OracleFailure,
    ParseError,
    RateExplosion,
    SamplerFailure,
    SizeOverflow,
    TubeExceedsTruncation,
)
from .model import NetworkModel, dump_model, load_model, parse_model, validate
from .pathcost import PiecewisePath, dilated_cost, path_cost, refine_trace
from .simulate import TubeSpec, build_twist, ld_check, simulate_ctmc, tube_probability, twisted_tube_probability
from .spectral import build, face_lambda, lambda_full, pf_eigen, truncated_lambda
from .variational import RateOptions, legendre, local_rate, local_rate_result, pointwise_rate

__version__ = "0.1.0"

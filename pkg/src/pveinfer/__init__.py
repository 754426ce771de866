"""Selective inference on the proportion of variance explained (PVE) by
principal components, with elbow-rule rank selection."""

from .core import (
    NoiseModel,
    SvdFactorization,
    as_data_matrix,
    center_reduce,
    compute_svd,
    population_pve,
    sample_pve,
)
from .distributions import (
    denom_ci,
    estimate_sigma2,
    mp_median,
    ncchisq_cdf,
    ncchisq_ppf,
)
from .selection import (
    SelectionRule,
    TruncationSet,
    derivative_rule,
    select_rank,
    truncation_set,
    zg_rule,
)
from .density import CondDensityContext, conditional_mean, log_h, survival_prob
from .inference import (
    InferenceReport,
    ThinnedPair,
    ci_numerator,
    ci_pve,
    infer_index,
    mle_delta,
    mle_pve,
    p_value,
    square_interval,
    thin,
)
from .errors import (
    DegenerateDensityError,
    DimensionError,
    NumericalFailureError,
    PveInferError,
    StructureViolationError,
    UndefinedPveError,
)
from .simulate import SimConfig, SimResult, gen_theta, run_experiment

__version__ = "0.1.0"

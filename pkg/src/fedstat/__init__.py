"""Federated nonparametric statistics under k-anonymity.

Centers keep their raw data; only k-anonymous binned tables or low-dimensional
aggregates cross the boundary to the coordinator.
"""

__version__ = "0.1.0"

from .binning import (
    DEFAULT_K,
    ExtremePolicy,
    GroupedSample,
    SummaryTable,
    bin_single_center,
    next_1d_point,
    next_2d_point,
    raw_binning,
    valid_point,
)
from .errors import (
    DegenerateWeights,
    EmptyCenter,
    EmptyGroup,
    FedStatError,
    InsufficientData,
    OutOfRange,
    PrivacyViolation,
    TooFewBins,
    ZeroPValue,
    ZeroVariance,
    ZeroVarianceError,
)
from .join import (
    JoinResult,
    ReleaseTranscript,
    audit_transcript,
    build_federated_table,
    fix_student_frequencies,
    join_center,
    next_private_subset,
    reallocate,
)
from .quantiles import (
    QuantileEstimate,
    YJFit,
    estimate_quantile_loss,
    estimate_quantile_yj_data,
    estimate_quantile_yj_table,
    fit_yj_mle,
    fit_yj_table,
    quantile_loss,
    quantile_summary_table,
    yj_loglik,
)
from .ranktests import (
    CenterTestStat,
    CombinedTestResult,
    center_stat,
    fisher_combine,
    mwu_combined,
    mwu_federated_table,
    mwu_u,
    mwu_var_h0,
    t_sum,
    t_weighted,
)
from .runtime import (
    CenterNode,
    Coordinator,
    Message,
    make_federation,
    run_mwu_protocol,
    run_quantile_protocol,
    run_table_protocol,
)
from .yeojohnson import yj_inverse, yj_range, yj_transform

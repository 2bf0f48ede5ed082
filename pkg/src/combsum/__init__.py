"""Large deviations of combinatorial sums: exact permanents, saddlepoints and Monte Carlo."""

from .ensemble import (
    FiniteDiscrete,
    MatrixEnsemble,
    PointMass,
    SignedExponential,
    SignedGamma,
    abs_moment,
    check_bernstein,
    check_centering,
    checkerboard,
    degenerate,
    entry_mgf,
    k_sequence,
    make_ensemble,
    rademacher,
    raw_moment,
    row_constant,
    tilt_entry,
)
from .exact import ExactDistribution, enumerate_law, exact_tail, mgf_exact, permanent
from .mc import (
    TailEstimate,
    TiltedChainConfig,
    esseen_decay,
    naive_tail,
    ratio_experiment,
    sample_S,
    tilted_is_tail,
)
from .stats import MomentSummary, b_n, gamma_n, var_S, zone_u_max
from .tilt import SaddlepointResult, TiltedState, saddlepoint_tail, solve_saddlepoint, tilted_state

__version__ = "0.1.0"

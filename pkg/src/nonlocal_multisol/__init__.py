"""Multiple positive solutions of elliptic problems with nonlocal reaction.

The reaction term depends on the L^p mass of the unknown and may degenerate
at prescribed values of that mass.  Freezing the mass yields a classical
auxiliary problem with a unique positive solution; scanning the frozen mass
and locating the fixed points of the resulting norm map produces two
solutions of the nonlocal problem per working interval, with strictly
ordered L^p norms.
"""

from .geometry import (
    DomainSpec,
    EigenData,
    Field,
    Grid,
    apply_neg_laplacian,
    build_grid,
    eigen_data,
    h1_norm_sq,
    integrate_power,
    principal_eigenpair,
    sobolev_c1,
)
from .nonlinearity import (
    FamilyConstants,
    NonlinearityError,
    NonlocalNonlinearity,
    TruncatedNonlinearity,
    custom_nonlinearity,
    make_family_a,
    make_family_b,
    make_family_c,
    max_on_interval,
    scale_nonlinearity,
    truncate,
)
from .hypotheses import (
    CERTIFIED,
    NOT_CHECKABLE,
    VIOLATED,
    CheckResult,
    HypothesisReport,
    certify,
    check_f0,
    check_f1,
    check_f2,
    check_f3,
    check_f4,
    check_f5,
    default_alpha_grid,
)
from .solver import (
    AuxSolveResult,
    SolveError,
    SolveOptions,
    energy,
    energy_upper_bound,
    lower_barrier,
    mass_identity,
    pk_upper_bound,
    solve_auxiliary,
)
from .fixedpoint import (
    FixedPoint,
    OrderingError,
    PkEvaluator,
    PkSample,
    ScanError,
    ScanResult,
    SolutionBundle,
    assemble_bundle,
    bracket_and_bisect,
    evaluate_pk,
    scan_interval,
)
from .cli import ConfigError, RunConfig, load_config, main

__version__ = "0.1.0"

"""State-space deep Gaussian process regression for non-stationary time series.

The package builds hierarchical Matern-process models in which the lengthscale
and magnitude of each node are driven by parent processes, represents the whole
hierarchy as one non-linear SDE, and performs regression with Gaussian filters
and smoothers, particle methods, or MAP optimization.
"""

import jax

# All covariance algebra in this package needs double precision.
jax.config.update("jax_enable_x64", True)

from .matern import (  # noqa: E402
    LtiSde,
    MaternSpec,
    matern_covariance,
    matern_sde_coefficients,
    solve_stationary_covariance,
    stationary_cross_covariance,
)
from .model import (  # noqa: E402
    DgpModel,
    DgpNode,
    FixedValue,
    NodeId,
    ParentLink,
    Wrapping,
    build_dgp,
    initial_condition,
    joint_drift,
    joint_dispersion,
    model_from_dict,
    model_from_json,
    sample_prior,
    wrap,
)
from .discretize import (  # noqa: E402
    DiscretizedTransition,
    euler_maruyama,
    exact_lti,
    tme,
)
from .kalman import (  # noqa: E402
    FilterOutput,
    GaussianBelief,
    ckf_filter,
    ekf_filter,
    kalman_update,
    nlpd,
    rts_smooth,
)
from .particle import (  # noqa: E402
    ParticleCloud,
    backward_simulation_smoother,
    bootstrap_pf,
    systematic_resample,
)
from .mapest import (  # noqa: E402
    BatchMapProblem,
    SsMapProblem,
    batch_map_gradient,
    batch_map_loss,
    optimize_map,
    ss_map_gradient,
    ss_map_loss,
)
from .batch import (  # noqa: E402
    NsCovarianceInputs,
    build_gram,
    gp_regress,
    ns_matern_covariance,
)
from .covdecay import (  # noqa: E402
    CovRecursionConfig,
    covariance_bound,
    gf_covariance_recursion,
    predict_moments,
    variance_floor,
)
from .bench import (  # noqa: E402
    ExperimentConfig,
    TimeSeriesData,
    emit_results,
    gen_rectangle,
    gen_sinusoid,
    grid_search,
    ingest_strain_csv,
    rmse,
    run_experiment,
)

__version__ = "0.1.0"

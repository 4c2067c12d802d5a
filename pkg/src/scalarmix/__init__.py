"""Passive scalar mixing under budget-constrained stirring on the periodic unit square."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapacityError,
    ConfigurationError,
    DomainError,
    SmixError,
    StepError,
    UnderResolvedError,
)
from .spectral import (  # noqa: E402
    ScalarField,
    from_spectral,
    gradient,
    gradient_norm,
    lebesgue_norm,
    project_mean_zero,
    read_snapshot,
    set_threads,
    sobolev_norm,
    to_spectral,
    write_snapshot,
)
from .flows import (  # noqa: E402
    VelocityProtocol,
    flow_map,
    gradient_budget,
    make_alternating_sine_flow,
    make_cellular_flow,
    make_steady_shear,
    make_streamfunction_flow,
    normalize_to_budget,
)
from .solver import (  # noqa: E402
    SimulationSeries,
    SolverConfig,
    energy_identity_residual,
    lq_identity_residual,
    solve,
    step_advection_diffusion,
    step_transport,
)
from .kr import (  # noqa: E402
    DiscreteMeasurePair,
    KRResult,
    discretize,
    kr_distance_entropic,
    kr_distance_exact,
    kr_lower_bound,
    kr_rate_check,
    kr_upper_bound,
)
from .diagnostics import (  # noqa: E402
    RateFit,
    ScalingFit,
    batchelor_scale,
    compare_transport_diffusive,
    crossover_time,
    dissipation_fraction,
    enhancement_report,
    fit_exponential_rate,
    mixing_rate_vs_budget,
    scaling_fit,
    theoretical_T,
)
from .kernels import BACKEND  # noqa: E402

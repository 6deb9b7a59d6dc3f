"""Discrete-state Markov models of multidimensional welfare mobility from household panels."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ArgumentError, ComparabilityError, ConfigurationError, DegenerateRangeError, DomainError,
    EstimationError, IncompleteObservationError, NumericalError, ResolutionError, SchemaError,
    StageError, TrapscopeError, ValidationError,
)
from .panel import (  # noqa: F401
    Observation, PanelDataset, PanelSchema, TransitionRecord, extract_transitions, load_panel, split_periods,
)
from .states import (  # noqa: F401
    DimensionSpec, StateSpace, binning_diagnostics, fit_equidistant, fit_ordinal, fit_percentile,
    fit_state_space,
)
from .estimation import (  # noqa: F401
    BootstrapSummary, TransitionModel, bootstrap_interval, bootstrap_matrices, bootstrap_uncertainty, estimate_mle,
    homogeneity_check, memory_length_comparison, regularize_irreducible,
)
from .landscape import (  # noqa: F401
    Landscape, basins_2d, build_landscape, curl_diagnostic, find_fixed_points_1d, potential,
    stationary_distribution,
)
from .metrics import (  # noqa: F401
    MetricsReport, compute_metrics, entropy_rate, escape_time_distribution, kl_divergence, mfpt, mfpt_set,
    mixing_time, shorrocks, tau_mix_transform,
)
from .shock import ShockReport, mfpt_ratio, net_mobility_change, recovery_time, shock_report  # noqa: F401
from .interventions import InterventionReport, poverty_return_risk, retention_curve, run_arms  # noqa: F401

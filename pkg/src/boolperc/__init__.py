"""Lattice Boolean percolation: simulation plus certified bounds, and the
graphical construction of infinite-range interacting particle systems."""

from .geometry import (
    Window,
    ball_cardinality,
    ball_count_constant,
    ball_sites,
    l1_dist,
    l1_norm,
    rounding_distance_check,
    sphere_cardinality,
    sphere_covering_check,
    sphere_sites,
)
from .radii import (
    CdfOnReals,
    EnvelopeLaw,
    FiniteTable,
    Geometric,
    PointMass,
    PowerLaw,
    RadiusLaw,
    SiteLawField,
    counterexample_envelope,
    counterexample_family,
    envelope,
    parse_law,
    shared_uniform_coupling,
)
from .model import (
    MarkedSample,
    ModelParams,
    adjacent,
    clusters,
    diameter,
    edges,
    estimate,
    far_reach_event,
    local_escape,
    near_reach_event,
    percolation_proxy,
    sample,
)
from .bounds import (
    BoundConstants,
    constants,
    escape_prob_bound,
    far_tail_sum,
    iterate_scale_recursion,
    near_reach_bound,
    reach_tail_bound,
    retention_threshold,
)
from .coverage import (
    ball_swallow_event,
    borel_cantelli_sums,
    covered_fraction,
    covered_report,
)
from .coupling import (
    DominatingMarkLaw,
    RateField,
    Schedule,
    coupled_site,
    dominating_site,
    harris_islands,
    mark_cdf_given_event,
    max_mark_cdf,
    safe_time_horizon,
    sample_schedule,
)
from .particle import (
    KernelNormalizationError,
    ParticleSystemSpec,
    Trajectory,
    generator_rate_check,
    simulate,
    update_value,
)

__version__ = "0.1.0"

"""Grid-sampled metric analysis for low-regularity geometry.

The package works on box charts with uniform per-axis spacing.  A
metric arrives as node samples of its components; everything else
(smoothing, curvature, differential operators, distances, asymptotic
potentials, product reconstruction, flat-chart recovery) is computed
from those samples and reported with named residuals and explicit
trusted regions.
"""

from .config import DEFAULTS, load_tolerances
from .curvature import (
    aitken_extrapolate,
    cd_integral_check,
    christoffel,
    distributional_ricci_pairing,
    ricci,
    ricci_lower_eigenvalue_field,
    riemann,
    riemann_smallness_check,
)
from .fileio import (
    field_to_csv,
    read_curve,
    read_field,
    read_metric,
    write_curve,
    write_field,
)
from .fixtures import FIXTURE_NAMES, FixtureBundle, generate_fixture
from .flatness import (
    bracket_check,
    build_parallel_frame,
    flatness_pipeline,
    integrate_flat_coordinates,
    orthonormal_basis_at,
    verify_flat_pullback,
)
from .geodesics import (
    DistanceResult,
    DistanceSolver,
    SampledCurve,
    distance,
    energy_conservation_check,
    geodesic_ivp,
    line_check,
    parallel_transport,
)
from .grids import (
    BoxChart,
    MetricField,
    Region,
    TensorGridField,
    TestDensity,
    integrate_density,
    musical_flat,
    musical_sharp,
    partial_derivative,
    scalar_field,
    volume_density,
)
from .mollifier import (
    MollifyResult,
    StabilizationError,
    StabilizedMetric,
    StabilizedMetricFamily,
    convergence_report,
    distance_comparison_check,
    mollify_tensor,
    stabilized_metric,
)
from .operators import (
    OperatorContext,
    bochner_residual,
    codifferential,
    connection_laplacian_1form,
    covariant_derivative,
    divergence,
    exterior_derivative_1form,
    gradient,
    hessian,
    hodge_laplacian_1form,
    laplace_beltrami,
    polarized_ricci_pairing,
    weak_laplace_pairing,
)
from .report import PipelineReport, digest_arrays
from .splitting import (
    BusemannField,
    SplittingResult,
    busemann_approx,
    busemann_limit,
    eikonal_check,
    flow_splitting_map,
    harmonic_solve,
    hessian_vanishing_check,
    isometry_verification,
    laplacian_comparison_check,
    split_pipeline,
    subharmonicity_pairing,
    window_region,
)

__version__ = "0.1.0"

__all__ = [
    "BoxChart",
    "BusemannField",
    "DEFAULTS",
    "DistanceResult",
    "DistanceSolver",
    "FIXTURE_NAMES",
    "FixtureBundle",
    "MetricField",
    "MollifyResult",
    "OperatorContext",
    "PipelineReport",
    "Region",
    "SampledCurve",
    "SplittingResult",
    "StabilizationError",
    "StabilizedMetric",
    "StabilizedMetricFamily",
    "TensorGridField",
    "TestDensity",
    "aitken_extrapolate",
    "bochner_residual",
    "bracket_check",
    "build_parallel_frame",
    "busemann_approx",
    "busemann_limit",
    "cd_integral_check",
    "christoffel",
    "codifferential",
    "connection_laplacian_1form",
    "convergence_report",
    "covariant_derivative",
    "digest_arrays",
    "distance",
    "distance_comparison_check",
    "distributional_ricci_pairing",
    "divergence",
    "eikonal_check",
    "energy_conservation_check",
    "exterior_derivative_1form",
    "field_to_csv",
    "flatness_pipeline",
    "flow_splitting_map",
    "generate_fixture",
    "geodesic_ivp",
    "gradient",
    "harmonic_solve",
    "hessian",
    "hessian_vanishing_check",
    "hodge_laplacian_1form",
    "integrate_density",
    "integrate_flat_coordinates",
    "isometry_verification",
    "laplace_beltrami",
    "laplacian_comparison_check",
    "line_check",
    "load_tolerances",
    "mollify_tensor",
    "musical_flat",
    "musical_sharp",
    "orthonormal_basis_at",
    "parallel_transport",
    "partial_derivative",
    "polarized_ricci_pairing",
    "read_curve",
    "read_field",
    "read_metric",
    "ricci",
    "ricci_lower_eigenvalue_field",
    "riemann",
    "riemann_smallness_check",
    "scalar_field",
    "split_pipeline",
    "stabilized_metric",
    "subharmonicity_pairing",
    "verify_flat_pullback",
    "volume_density",
    "weak_laplace_pairing",
    "window_region",
    "write_curve",
    "write_field",
]

"""Random spherical eigenfunctions: excursion-set Euler characteristics,
measured per realization and predicted in closed form."""

__version__ = "0.1.0"

from .analytic import (
    AnalyticPrediction,
    LKCIndex,
    ThresholdInterval,
    combined_coefficient,
    expected_epc,
    expected_epc_interval,
    g2_identity,
    g2_quadrature,
    g3_identity,
    g3_quadrature,
    gaussian_minkowski_rho,
    hermite,
    identity_suite,
    interval_weight,
    leading_covariance,
    leading_variance_halfline,
    lkc_variance_leading,
    p1_closed,
    p1_quadrature,
    p2_closed,
    p2_quadrature,
    p_kernel,
    predict,
)
from .harmonics import (
    GridSamples,
    Jet2,
    LatLonGrid,
    PoleProximityError,
    RandomEigenfunction,
    associated_legendre_band,
    evaluate_grid,
    evaluate_jet,
    evaluate_jet_rotated,
    evaluate_values,
    legendre,
    load_field,
    pole_cap_halfangle,
    save_field,
    synthesize,
    theoretical_covariance,
)
from .montecarlo import (
    EnsembleConfig,
    EnsembleResult,
    MomentEstimate,
    compare_to_theory,
    derive_seed,
    estimate_moments,
    run_ensemble,
)
from .sphere import SpherePoint, geodesic_distance
from .topology import (
    BoundaryDegeneracyWarning,
    CompletenessError,
    CriticalPoint,
    DegenerateSampleError,
    EPCResult,
    SearchConfig,
    Triangulation,
    build_triangulation,
    epc_mesh,
    epc_morse,
    find_critical_points,
    morse_alternating_sum,
)

"""Multiscale flatness analysis of finite metric spaces."""

__version__ = "0.1.0"

from .spaces import (  # noqa: F401
    AhlforsReport,
    Ball,
    FiniteMetricSpace,
    MetricValidationError,
    Net,
    ahlfors_stats,
    build_space,
    maximal_net,
    metric_matrix,
    validate_metric,
)
from .norms import (  # noqa: F401
    AffineMap,
    DegenerateGaugeError,
    GaugeNorm,
    banach_mazur_upper,
    clamp_to_ball,
    certify_affine,
    euclidean_norm,
    ellipsoidal_norm,
    gauge_eval,
    l1_norm,
    linf_norm,
    lipschitz_extend,
    operator_norm,
    polytopal_norm,
)

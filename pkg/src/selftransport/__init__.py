"""Hitting distributions and the self-transport operator on lattice membranes."""

from .errors import (
    DomainError,
    MaxStepsExceeded,
    ParseError,
    ProbabilityError,
    QuadratureError,
    SelfTransportError,
    SingularMatrixError,
    ValidationError,
)
from .geometry import (
    BoundaryPoint,
    CornerRecord,
    Membrane,
    PointClass,
    SiteSet,
    build_membrane,
    classify_point,
    detect_corners,
    index_function,
    load_membrane,
    reference_membrane_path,
    serialize_spec,
)
from .kernels import (
    HorizontalBarrier,
    KernelConfig,
    KernelTable,
    VerticalBarrier,
    barrier_profile,
    cauchy_asymptotic,
    gamma_coeff,
    phi,
)

__version__ = "0.1.0"

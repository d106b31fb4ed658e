"""snaplattice: spring-lattice models of multistable pneumatic fingers.

Reduced-order modeling of segmented dome-unit bending actuators: closed-form
lumped spring constants, static state enumeration by energy minimization,
damped snap-through dynamics, data-driven rediscovery of the spring-constant
expressions, and surrogate-based inverse co-design.

Unit system: mm - N - MPa - ton - s.
"""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    CHEETAH,
    MATERIAL_PRESETS,
    NINJAFLEX,
    FingerGeometry,
    MaterialProps,
    UnitCellGeometry,
    make_finger,
)
from .springs import (  # noqa: F401
    DimensionlessGroups,
    SpringParams,
    StabilityClass,
    StaticClass,
    classify_stability,
    curvature_radius,
    dimensionless_groups,
    limiting_layer_params,
    nonlinear_spring_params,
    spring_params,
)

"""Parametric description of dome units, materials, and assembled fingers.

Unit system used throughout the package: mm - N - MPa - ton - s
(consistent: 1 MPa * mm^2 = 1 N, 1 ton * mm/s^2 = 1 N).

A finger is an ordered chain of dome unit cells on a common strain-limiting
layer.  Per-unit dome height, length, and separation may differ; cell size,
dome thickness, and limiting-layer thickness are shared along one finger.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

from .errors import ConfigError

# Young's modulus range covered by the fitted spring-constant expressions.
E_FIT_RANGE = (5.0, 40.0)


@dataclass(frozen=True)
class MaterialProps:
    """Linear-elastic constants plus the two damping coefficients.

    youngs_modulus : MPa
    poisson_ratio  : dimensionless, in (0, 0.5)
    density        : ton/mm^3
    eta_internal   : ton/s, dashpot in parallel with each pair spring
    eta_isotropic  : ton/s, per-node drag for numerical stability
    """

    youngs_modulus: float
    poisson_ratio: float = 0.45
    density: float = 1.2e-9
    eta_internal: float = 0.05
    eta_isotropic: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.poisson_ratio < 0.5):
            raise ConfigError(f"poisson_ratio must be in (0, 0.5), got {self.poisson_ratio}")
        if self.density <= 0.0:
            raise ConfigError("density must be positive")
        if self.eta_internal < 0.0 or self.eta_isotropic < 0.0:
            raise ConfigError("damping coefficients must be non-negative")
        lo, hi = E_FIT_RANGE
        if not (lo <= self.youngs_modulus <= hi):
            warnings.warn(
                f"E = {self.youngs_modulus} MPa is outside the fitted range "
                f"[{lo}, {hi}] MPa; spring constants are extrapolated",
                stacklevel=2,
            )


# Default presets for the two printed TPUs.  E = 26 MPa matches the stiffer
# grade used in the validation cases; the remaining values are configurable
# defaults, not measured ground truth (Poisson ratios in particular are
# assumptions).
NINJAFLEX = MaterialProps(youngs_modulus=12.0)
CHEETAH = MaterialProps(youngs_modulus=26.0)

MATERIAL_PRESETS = {"ninjaflex": NINJAFLEX, "cheetah": CHEETAH}


@dataclass(frozen=True)
class UnitCellGeometry:
    """One dome unit cell.  All lengths in mm.

    dome_height      H     : apex height of the stress-free dome
    dome_thickness   t     : shell thickness
    dome_base_radius r_b   : radius of the dome's base circle
    unit_cell_size   UC    : cell width (out-of-plane) and node pitch along the finger
    unit_length      U_L   : compliant cavity length along the finger
    unit_separation  U_sep : gap between this cell and the next
    chamber_thickness t_ch : pneumatic chamber wall thickness
    limiting_layer_thickness t_lim : strain-limiting strip thickness
    channel_width    W_ch  : pressurized wall width (out-of-plane)
    mid_thickness    t_mid : mid-wall thickness (carried; affects no spring constant)
    """

    dome_height: float
    dome_thickness: float
    dome_base_radius: float
    unit_cell_size: float = 15.0
    unit_length: float = 7.0
    unit_separation: float = 1.0
    chamber_thickness: float = 1.0
    limiting_layer_thickness: float = 1.5
    channel_width: float = field(default=None)  # type: ignore[assignment]
    mid_thickness: float = 1.0

    def __post_init__(self):
        if self.channel_width is None:
            # Full-width chamber wall unless the config narrows it.
            object.__setattr__(self, "channel_width", self.unit_cell_size)
        for name in (
            "dome_height",
            "dome_thickness",
            "dome_base_radius",
            "unit_cell_size",
            "unit_length",
            "unit_separation",
            "chamber_thickness",
            "limiting_layer_thickness",
            "channel_width",
            "mid_thickness",
        ):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.dome_thickness >= self.dome_height:
            raise ConfigError(
                f"dome_thickness ({self.dome_thickness}) must be smaller than "
                f"dome_height ({self.dome_height})"
            )

    def with_height(self, H: float) -> "UnitCellGeometry":
        return replace(self, dome_height=H)


@dataclass(frozen=True)
class FingerGeometry:
    """An n-segment finger: ordered unit cells plus the shared material.

    All units must share cell size, dome thickness, and limiting-layer
    thickness; heights, lengths, and separations may vary per unit.
    """

    units: tuple[UnitCellGeometry, ...]
    material: MaterialProps

    def __post_init__(self):
        if len(self.units) < 1:
            raise ConfigError("a finger needs at least one unit")
        object.__setattr__(self, "units", tuple(self.units))
        first = self.units[0]
        for i, u in enumerate(self.units[1:], start=2):
            for name in ("unit_cell_size", "dome_thickness", "limiting_layer_thickness"):
                if getattr(u, name) != getattr(first, name):
                    raise ConfigError(f"unit {i} differs from unit 1 in {name}")

    @property
    def n_units(self) -> int:
        return len(self.units)


def make_finger(
    heights,
    material: MaterialProps,
    *,
    dome_thickness: float = 0.8,
    unit_cell_size: float = 15.0,
    unit_length=7.0,
    unit_separation=1.0,
    chamber_thickness: float = 1.0,
    limiting_layer_thickness: float = 1.5,
    dome_base_radius: float | None = None,
    channel_width: float | None = None,
    mid_thickness: float = 1.0,
) -> FingerGeometry:
    """Build a FingerGeometry from per-unit heights and shared parameters.

    ``unit_length`` and ``unit_separation`` accept a scalar or one value per
    unit.  ``dome_base_radius`` defaults to half the cell size (the dome base
    spans the cell).
    """
    heights = list(heights)
    n = len(heights)

    def per_unit(v, name):
        if isinstance(v, (int, float)):
            return [float(v)] * n
        v = [float(x) for x in v]
        if len(v) != n:
            raise ConfigError(f"{name} needs 1 or {n} values, got {len(v)}")
        return v

    u_l = per_unit(unit_length, "unit_length")
    u_sep = per_unit(unit_separation, "unit_separation")
    r_b = unit_cell_size / 2.0 if dome_base_radius is None else dome_base_radius
    units = [
        UnitCellGeometry(
            dome_height=float(h),
            dome_thickness=dome_thickness,
            dome_base_radius=r_b,
            unit_cell_size=unit_cell_size,
            unit_length=u_l[i],
            unit_separation=u_sep[i],
            chamber_thickness=chamber_thickness,
            limiting_layer_thickness=limiting_layer_thickness,
            channel_width=channel_width,
            mid_thickness=mid_thickness,
        )
        for i, h in enumerate(heights)
    ]
    return FingerGeometry(units=tuple(units), material=material)

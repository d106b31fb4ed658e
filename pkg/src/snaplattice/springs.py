"""Lumped spring constants of a dome unit and the static stability classifier.

The dome's snap-through mechanics are reduced to a single nonlinear spring

    E_nl(xb) = 1/2 * k_b * xb^2 * (1 + (1 - alpha) * ((xb/d)^2 - 2*xb/d))

with extension xb measured from rest.  ``k_b`` and ``alpha`` come from
closed-form polynomial fits in the shell's dimensionless groups; ``d`` is the
available inversion travel after the everted apex contacts the neighboring
chamber wall.  The strain-limiting layer contributes a stretching constant
``k_l`` and a bending constant ``k_theta`` per unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import NonPositiveD
from .geometry import MaterialProps, UnitCellGeometry

ALPHA_BISTABLE_LIMIT = 1.0 / 9.0  # second force root exists iff alpha < 1/9 (strict)


@dataclass(frozen=True)
class DimensionlessGroups:
    """Shell groups: pi1 = t/H (load capacity), pi2 = t/R, pi3 = H/R (shallowness)."""

    pi1: float
    pi2: float
    pi3: float


@dataclass(frozen=True)
class SpringParams:
    """Fitted lumped constants of one unit.

    k_b     : N/mm     nonlinear (dome) spring stiffness scale
    alpha   : -        everted-state energy level, sign unrestricted
    d       : mm       inversion travel
    k_l     : N/mm     limiting-layer stretching constant
    k_theta : N*mm/rad limiting-layer bending constant
    """

    k_b: float
    alpha: float
    d: float
    k_l: float
    k_theta: float


class StaticClass(Enum):
    MONOSTABLE = "monostable"
    BISTABLE = "bistable"
    METASTABLE = "metastable"  # assigned only by dynamic analysis


@dataclass(frozen=True)
class StabilityClass:
    """Static two-way classification plus the well/barrier energy levels.

    ``energy_barrier`` and ``second_well_energy`` are per unit k_b*d^2 = 1
    scaling removed, i.e. absolute N*mm for the given params.  Both are zero
    when no second equilibrium exists.  ``METASTABLE`` is never returned here;
    dynamics refines a unit to metastable when its simulated reset occurs
    after load removal.
    """

    kind: StaticClass
    energy_barrier: float = 0.0
    second_well_energy: float = 0.0
    barrier_extension: float = 0.0
    well_extension: float = 0.0


def curvature_radius(g: UnitCellGeometry) -> float:
    """Spherical-cap radius through the dome base circle and apex."""
    r, h = g.dome_base_radius, g.dome_height
    return (r * r + h * h) / (2.0 * h)


def dimensionless_groups(g: UnitCellGeometry) -> DimensionlessGroups:
    R = curvature_radius(g)
    return DimensionlessGroups(
        pi1=g.dome_thickness / g.dome_height,
        pi2=g.dome_thickness / R,
        pi3=g.dome_height / R,
    )


def nonlinear_spring_params(
    g: UnitCellGeometry, m: MaterialProps
) -> tuple[float, float, float]:
    """Evaluate the fitted closed forms for (k_b, alpha, d).

    Raises NonPositiveD when the geometry leaves no inversion travel.
    """
    H = g.dome_height
    t = g.dome_thickness
    R = curvature_radius(g)
    E = m.youngs_modulus

    k_b = (E / R**2) * (
        -1.97 * R * t**5 / H**3
        + 7.4 * H**2 * t**3 / R**2
        + 3.5 * R * t**4 / H**2
        + 0.37 * H**2 * t**2 / R
        + 42.2 * t**5 / H**2
        - 35.8 * H * t**4 / R**2
        + 71.8 * t**5 / (H * R)
        - 3.4 * R * t**3 / H
        - 67.7 * t**4 / H
        + 4.2 * R * t**2
        + 11.1 * t**3
    )

    alpha = (
        0.4 * H**3 / R**3
        - 0.6 * t**3 / H**3
        - 2.9 * H**2 * t / R**3
        - 0.9 * H**2 / R**2
        - 9.0 * t**3 / (H**2 * R)
        + 1.5 * t**2 / H**2
        - 3.9 * t**3 / (H * R**2)
        + 9.2 * H * t / R**2
        + 17.4 * t**2 / (H * R)
        + 0.6 * H / R
        + 17.8 * t**3 / R**3
        - 19.5 * t**2 / R**2
        - 6.1 * t / R
    )

    d = 2.14 * H + 0.25 * t - H - g.unit_separation - g.chamber_thickness / 2.0 - t / 2.0
    if d <= 0.0:
        raise NonPositiveD(
            f"inversion travel d = {d:.4g} mm <= 0 for H={H}, t={t}, "
            f"U_sep={g.unit_separation}, t_ch={g.chamber_thickness}"
        )
    return k_b, alpha, d


def limiting_layer_params(g: UnitCellGeometry, m: MaterialProps) -> tuple[float, float]:
    """Stretching and bending constants of the strain-limiting layer."""
    E = m.youngs_modulus
    t_lim = g.limiting_layer_thickness
    k_l = E * t_lim * g.unit_cell_size / g.unit_length
    k_theta = (
        E * t_lim**3 / (12.0 * (1.0 - m.poisson_ratio**2))
        * g.unit_cell_size / g.unit_separation
    )
    return k_l, k_theta


def spring_params(g: UnitCellGeometry, m: MaterialProps) -> SpringParams:
    """All five lumped constants of one unit."""
    k_b, alpha, d = nonlinear_spring_params(g, m)
    k_l, k_theta = limiting_layer_params(g, m)
    return SpringParams(k_b=k_b, alpha=alpha, d=d, k_l=k_l, k_theta=k_theta)


def nonlinear_energy(xb: float, k_b: float, alpha: float, d: float) -> float:
    """Nonlinear spring energy at extension xb from rest."""
    u = xb / d
    return 0.5 * k_b * xb * xb * (1.0 + (1.0 - alpha) * (u * u - 2.0 * u))


def nonlinear_force(xb: float, k_b: float, alpha: float, d: float) -> float:
    """dE/dxb of the nonlinear spring (positive resists extension)."""
    u = xb / d
    return k_b * xb * (1.0 + (1.0 - alpha) * (2.0 * u * u - 3.0 * u))


def force_roots(alpha: float, d: float) -> tuple[float, float] | None:
    """Nonzero extensions where the nonlinear force vanishes.

    Returns (barrier, well) or None when alpha >= 1/9 (no real pair).
    """
    if alpha >= ALPHA_BISTABLE_LIMIT or alpha >= 1.0:
        return None
    b = 1.0 - alpha
    disc = 9.0 * b * b - 8.0 * b
    if disc < 0.0:
        return None
    root = math.sqrt(disc)
    lo = d * (3.0 * b - root) / (4.0 * b)
    hi = d * (3.0 * b + root) / (4.0 * b)
    return lo, hi


def snap_threshold(alpha: float, d: float) -> float:
    """Extension used to detect snap events.

    The energy barrier location when two force roots exist; for shallower
    (geometrically monostable) units the degenerate-root location 3d/4, where
    the landscape still has its flattest plateau.
    """
    roots = force_roots(alpha, d)
    if roots is not None:
        return roots[0]
    b = max(1.0 - alpha, 1e-12)
    return min(d * 3.0 / 4.0, d * 3.0 * b / (4.0 * b))


def classify_stability(p: SpringParams) -> StabilityClass:
    """Static classification of one unit from its nonlinear spring alone.

    Bistable requires a second force root (alpha < 1/9 strictly) and a well
    energy below the barrier energy.  The metastable refinement is dynamic
    and never produced here.
    """
    roots = force_roots(p.alpha, p.d)
    if roots is None:
        return StabilityClass(kind=StaticClass.MONOSTABLE)
    barrier_x, well_x = roots
    e_barrier = nonlinear_energy(barrier_x, p.k_b, p.alpha, p.d)
    e_well = nonlinear_energy(well_x, p.k_b, p.alpha, p.d)
    if e_well < e_barrier:
        return StabilityClass(
            kind=StaticClass.BISTABLE,
            energy_barrier=e_barrier,
            second_well_energy=e_well,
            barrier_extension=barrier_x,
            well_extension=well_x,
        )
    return StabilityClass(kind=StaticClass.MONOSTABLE)

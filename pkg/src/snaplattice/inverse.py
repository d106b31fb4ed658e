"""Inverse co-design of finger geometry over the bounded design space.

Four objective variants:

  position        min (target - tip)^2 at the fully inverted state
  position_stiffness   adds w2 * (K_scale / stiffness)^2
  dynamic_reset   min w1 (K_scale/K)^2 + w2 / (RT2 - RT1) over metastable
                  dome height and thickness under two pressure profiles
  multi_aperture  min sum_j w_j (size_j - aperture_j)^2 + stiffness term over
                  gripper geometry, apertures at the sequential states

The optimizer is a Gaussian-process surrogate with expected improvement over
the unit box, ordering constraints handled by projection (sorting the dome
heights) and stability-domain membership by a smooth penalty before any
lattice solve.  A tail share of the budget locally polishes the incumbent.
Identical seeds reproduce identical traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from .errors import (
    ConfigError,
    ConstraintViolation,
    GeometryInfeasible,
    InfeasibleState,
    NoConvergence,
    NoFeasiblePoint,
    NonPositiveD,
    SnapDuringProbe,
    StepSizeUnderflow,
)
from .geometry import FingerGeometry, MaterialProps, make_finger
from .lattice import BuildOptions, build_lattice
from .springs import ALPHA_BISTABLE_LIMIT, nonlinear_spring_params, spring_params
from .statics import ActivationPattern, solve_pattern
from .dynamics import PressureProfile, integrate, resetting_time, stiffness_at_state
from . import surrogate

VARIANTS = ("position", "position_stiffness", "dynamic_reset", "multi_aperture")

# Stiffness normalization so (K_scale/K)^2 is O(1) for design-space-typical
# tip stiffnesses (~0.01-0.3 N/mm); see ledgered assumption.
K_SCALE = 0.02

INFEASIBLE_PENALTY = 1e4
PARSIMONY_BAND_ABS = 1e-2
PARSIMONY_BAND_REL = 0.05


@dataclass(frozen=True)
class DesignSpace:
    """Box bounds per variable plus the metastable admissibility band."""

    h_bounds: tuple[float, float] = (3.0, 5.0)
    u_sep_bounds: tuple[float, float] = (1.0, 5.0)
    u_l_bounds: tuple[float, float] = (5.5, 10.0)
    t_bounds: tuple[float, float] = (0.5, 1.0)
    t_lim_bounds: tuple[float, float] = (1.0, 2.0)
    base_l_bounds: tuple[float, float] = (10.0, 60.0)
    theta_b_bounds: tuple[float, float] = (0.0, math.radians(45.0))
    max_segments: int = 8
    metastable_band: tuple[float, float] = (ALPHA_BISTABLE_LIMIT, ALPHA_BISTABLE_LIMIT + 0.045)

    def __post_init__(self):
        for name in ("h_bounds", "u_sep_bounds", "u_l_bounds", "t_bounds",
                     "t_lim_bounds", "base_l_bounds", "theta_b_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name}: need lo < hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class Objective:
    """Variant, targets, and weights of one inverse problem."""

    variant: str
    material: MaterialProps
    target_xy: tuple[float, float] | None = None
    weights: tuple[float, ...] = (1.0, 1.0)
    object_sizes: tuple[float, ...] = ()
    rt_profiles: tuple[PressureProfile, PressureProfile] | None = None
    target_rt: float | None = None
    fixed_heights: tuple[float, ...] = ()      # dynamic_reset: leading bistable units
    n_metastable: int = 2
    unit_cell_size: float = 15.0
    chamber_thickness: float = 1.0
    fixed_u_sep: float = 1.0                   # dynamic_reset keeps these fixed
    fixed_u_l: float = 7.0
    fixed_t_lim: float = 1.0
    build_options: BuildOptions = field(default_factory=BuildOptions)
    sim_t_end: float = 6.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
            raise ConfigError("weights must be non-negative with at least one positive")
        if self.variant in ("position", "position_stiffness"):
            if self.target_xy is None or not all(np.isfinite(self.target_xy)):
                raise ConfigError("position variants need a finite target_xy")
        if self.variant == "multi_aperture" and not self.object_sizes:
            raise ConfigError("multi_aperture needs object sizes")


@dataclass(frozen=True)
class GripperAssembly:
    """Mirror-symmetric two-finger gripper on a rigid base."""

    finger: FingerGeometry
    base_length: float
    base_angle: float  # rad, outward tilt of each finger from vertical


@dataclass
class Diagnostics:
    tip: tuple[float, float] | None = None
    tip_error: float | None = None
    stiffness: float | None = None
    rt1: float | None = None
    rt2: float | None = None
    apertures: tuple[float, ...] = ()


@dataclass
class DesignResult:
    best_x: np.ndarray
    best_geometry: object            # FingerGeometry or GripperAssembly
    best_value: float
    diagnostics: Diagnostics
    evaluations: int
    trace: list[tuple[int, float]]   # (evaluation index, running best)
    var_names: list[str]

    def geometry_dict(self) -> dict:
        g = self.best_geometry
        f = g.finger if isinstance(g, GripperAssembly) else g
        d = {
            "heights": [u.dome_height for u in f.units],
            "u_sep": f.units[0].unit_separation,
            "u_l": f.units[0].unit_length,
            "t": f.units[0].dome_thickness,
            "t_lim": f.units[0].limiting_layer_thickness,
            "uc": f.units[0].unit_cell_size,
            "t_ch": f.units[0].chamber_thickness,
        }
        if isinstance(g, GripperAssembly):
            d["base_length"] = g.base_length
            d["base_angle_deg"] = math.degrees(g.base_angle)
        return d


def _layout(variant: str, n: int, space: DesignSpace):
    """Variable names and bounds for one variant at segment count n."""
    if variant in ("position", "position_stiffness"):
        names = [f"H{i+1}" for i in range(n)] + ["u_sep", "u_l", "t", "t_lim"]
        bounds = [space.h_bounds] * n + [space.u_sep_bounds, space.u_l_bounds,
                                         space.t_bounds, space.t_lim_bounds]
    elif variant == "dynamic_reset":
        names = ["H_meta", "t"]
        bounds = [space.h_bounds, space.t_bounds]
    else:
        names = [f"H{i+1}" for i in range(n)] + [
            "u_sep", "u_l", "t", "t_lim", "theta_b", "base_l"]
        bounds = [space.h_bounds] * n + [
            space.u_sep_bounds, space.u_l_bounds, space.t_bounds,
            space.t_lim_bounds, space.theta_b_bounds, space.base_l_bounds]
    return names, np.asarray(bounds, dtype=float)


def _alpha_of(H: float, t: float, obj: Objective) -> float:
    g_probe = make_finger([H], obj.material, dome_thickness=t,
                          unit_cell_size=obj.unit_cell_size,
                          chamber_thickness=obj.chamber_thickness).units[0]
    return nonlinear_spring_params(g_probe, obj.material)[1]


def _project(variant: str, x: np.ndarray, n: int) -> np.ndarray:
    """Enforce the variant's dome-height ordering by sorting."""
    x = x.copy()
    if variant in ("position", "position_stiffness"):
        x[:n] = np.sort(x[:n])[::-1]       # H_{i+1} <= H_i
    elif variant == "multi_aperture":
        x[:n] = np.sort(x[:n])             # H_{i+1} >= H_i
    return x


def build_geometry(obj: Objective, x: np.ndarray, n: int):
    """FingerGeometry (or GripperAssembly) from a projected design vector."""
    if obj.variant in ("position", "position_stiffness"):
        heights = list(x[:n])
        u_sep, u_l, t, t_lim = x[n:n + 4]
        return make_finger(heights, obj.material, dome_thickness=float(t),
                           unit_cell_size=obj.unit_cell_size,
                           unit_length=float(u_l), unit_separation=float(u_sep),
                           chamber_thickness=obj.chamber_thickness,
                           limiting_layer_thickness=float(t_lim))
    if obj.variant == "dynamic_reset":
        h_meta, t = float(x[0]), float(x[1])
        heights = list(obj.fixed_heights) + [h_meta] * obj.n_metastable
        return make_finger(heights, obj.material, dome_thickness=t,
                           unit_cell_size=obj.unit_cell_size,
                           unit_length=obj.fixed_u_l, unit_separation=obj.fixed_u_sep,
                           chamber_thickness=obj.chamber_thickness,
                           limiting_layer_thickness=obj.fixed_t_lim)
    heights = list(x[:n])
    u_sep, u_l, t, t_lim, theta_b, base_l = x[n:n + 6]
    finger = make_finger(heights, obj.material, dome_thickness=float(t),
                         unit_cell_size=obj.unit_cell_size,
                         unit_length=float(u_l), unit_separation=float(u_sep),
                         chamber_thickness=obj.chamber_thickness,
                         limiting_layer_thickness=float(t_lim))
    return GripperAssembly(finger=finger, base_length=float(base_l),
                           base_angle=float(theta_b))


def _constraint_penalty(obj: Objective, space: DesignSpace, x: np.ndarray, n: int) -> float:
    """Smooth penalty for stability-domain violations (pre-solve screening).

    Position variants require every unit bistable (alpha < 1/9); the
    dynamic-reset variant requires the metastable dome inside the G_M band.
    Returns 0 when admissible.
    """
    pen = 0.0
    if obj.variant in ("position", "position_stiffness", "multi_aperture"):
        t = float(x[n + 2])
        u_sep = float(x[n])
        # inversion travel must stay positive for every unit (d of Eq. form)
        d_min = (1.14 * float(min(x[:n])) + 0.25 * t - u_sep
                 - obj.chamber_thickness / 2.0 - t / 2.0)
        if d_min < 0.1:
            pen += (0.1 - d_min) * 1e3 + 1.0
            return pen
        for H in x[:n]:
            try:
                a = _alpha_of(float(H), t, obj)
            except Exception:
                return INFEASIBLE_PENALTY
            if a >= ALPHA_BISTABLE_LIMIT:
                pen += (a - ALPHA_BISTABLE_LIMIT) * 1e3 + 1.0
    elif obj.variant == "dynamic_reset":
        lo, hi = space.metastable_band
        try:
            a = _alpha_of(float(x[0]), float(x[1]), obj)
        except Exception:
            return INFEASIBLE_PENALTY
        if not (lo <= a <= hi):
            pen += (abs(a - np.clip(a, lo, hi))) * 1e3 + 1.0
    return pen


def aperture(ga: GripperAssembly, tip_xy: tuple[float, float]) -> float:
    """Signed tip-to-tip opening of the mirrored pair.

    Fingers hang from mounts at +-base_length/2 tilted outward by the base
    angle, curling inward; larger curl closes the aperture.
    """
    x_t, y_t = tip_xy
    return ga.base_length + 2.0 * (x_t * math.sin(ga.base_angle)
                                   - y_t * math.cos(ga.base_angle))


def _solve_state(model, pattern, seed):
    st = solve_pattern(model, pattern, seed=seed)
    ext = model.nonlinear_extensions(st.q)
    thr = model.arrays["nl_thr"]
    want = np.asarray(pattern.bits)
    if np.any((ext > thr) != want):
        raise InfeasibleState(f"state {pattern} does not hold for this geometry")
    return st


def evaluate_objective(
    obj: Objective,
    geometry,
    *,
    space: DesignSpace | None = None,
    seed: int = 0,
) -> tuple[float, Diagnostics]:
    """Objective value and diagnostics for a concrete geometry.

    Raises ConstraintViolation for ordering violations, InfeasibleState when a
    required stable state does not exist.  A degenerate reset denominator
    (RT2 == RT1) returns math.inf (documented sentinel).
    """
    finger = geometry.finger if isinstance(geometry, GripperAssembly) else geometry
    hs = [u.dome_height for u in finger.units]
    diag = Diagnostics()
    if obj.variant in ("position", "position_stiffness"):
        for i in range(len(hs) - 1):
            if hs[i + 1] > hs[i] + 1e-9:
                raise ConstraintViolation("H ordering (descending)", hs[i + 1] - hs[i])
    if obj.variant == "multi_aperture":
        for i in range(len(hs) - 1):
            if hs[i + 1] < hs[i] - 1e-9:
                raise ConstraintViolation("H ordering (ascending)", hs[i] - hs[i + 1])
    seps = {u.unit_separation for u in finger.units}
    lens = {u.unit_length for u in finger.units}
    if obj.variant != "dynamic_reset" and (len(seps) > 1 or len(lens) > 1):
        raise ConstraintViolation("equal U_sep/U_L across units", max(len(seps), len(lens)) - 1)

    n = finger.n_units
    model = build_lattice(finger, obj.build_options)

    if obj.variant in ("position", "position_stiffness"):
        st = _solve_state(model, ActivationPattern.all_inverted(n), seed)
        diag.tip = st.tip
        err2 = (st.tip[0] - obj.target_xy[0]) ** 2 + (st.tip[1] - obj.target_xy[1]) ** 2
        diag.tip_error = math.sqrt(err2)
        if obj.variant == "position":
            return err2, diag
        k = stiffness_at_state(model, st, seed=seed)
        diag.stiffness = k.stiffness
        w1, w2 = obj.weights[0], obj.weights[1]
        return w1 * err2 + w2 * (K_SCALE / max(k.stiffness, 1e-9)) ** 2, diag

    if obj.variant == "dynamic_reset":
        if obj.rt_profiles is None:
            raise ConfigError("dynamic_reset needs two pressure profiles")
        meta_unit = n - 1
        rts = []
        for prof in obj.rt_profiles:
            traj, log = integrate(model, model.rest_state(), prof, obj.sim_t_end)
            try:
                rt = resetting_time(traj, log, prof, meta_unit)
            except Exception as ex:
                raise InfeasibleState(f"metastable unit never snapped: {ex}") from ex
            rts.append(obj.sim_t_end if rt is None else rt)
        diag.rt1, diag.rt2 = rts
        st = _solve_state(
            model,
            ActivationPattern(tuple([True] * len(obj.fixed_heights) + [False] * obj.n_metastable)),
            seed)
        k = stiffness_at_state(model, st, seed=seed)
        diag.stiffness = k.stiffness
        w1, w2 = obj.weights[0], obj.weights[1]
        if obj.target_rt is not None:
            return (w1 * (K_SCALE / max(k.stiffness, 1e-9)) ** 2
                    + w2 * (obj.target_rt - rts[1]) ** 2), diag
        if rts[1] - rts[0] <= 0:
            return math.inf, diag
        return (w1 * (K_SCALE / max(k.stiffness, 1e-9)) ** 2
                + w2 / (rts[1] - rts[0])), diag

    # multi_aperture
    ga: GripperAssembly = geometry
    sizes = obj.object_sizes
    if len(sizes) > n:
        raise ConfigError("more object sizes than units")
    aps = []
    val = 0.0
    st_full = None
    for j, size in enumerate(sizes, start=1):
        pat = ActivationPattern(tuple([True] * j + [False] * (n - j)))
        st = _solve_state(model, pat, seed)
        ap = aperture(ga, st.tip)
        aps.append(ap)
        w = obj.weights[j - 1] if j - 1 < len(obj.weights) else obj.weights[-1]
        val += w * (size - ap) ** 2
        if j == len(sizes):
            st_full = st
    diag.apertures = tuple(aps)
    k = stiffness_at_state(model, st_full, seed=seed)
    diag.stiffness = k.stiffness
    w_stiff = obj.weights[-1]
    val += w_stiff * (K_SCALE / max(k.stiffness, 1e-9)) ** 2
    return val, diag


def bayesian_optimize(
    obj: Objective,
    space: DesignSpace,
    n_segments: int,
    budget: int,
    seed: int = 42,
) -> DesignResult:
    """GP-EI minimization over the variant's box at fixed segment count.

    Constraint handling: dome-height ordering by projection (sort), stability
    domains by an analytic pre-penalty so no lattice solve is wasted on
    inadmissible candidates.  The final ~15% of the budget polishes the
    incumbent with a local simplex search (evaluations counted).  Raises
    NoFeasiblePoint when every evaluation was penalized or failed.
    """
    names, bounds = _layout(obj.variant, n_segments, space)
    d = len(names)
    if budget < 10 * d:
        raise ConfigError(f"budget {budget} < 10 x dimension ({10 * d})")
    rng = np.random.default_rng(seed)
    lo, hi = bounds[:, 0], bounds[:, 1]

    evals_x: list[np.ndarray] = []
    evals_y: list[float] = []
    feasible: list[bool] = []
    diags: list[Diagnostics] = []
    trace: list[tuple[int, float]] = []
    cap = [INFEASIBLE_PENALTY]

    def run(u: np.ndarray) -> float:
        x = _project(obj.variant, lo + np.asarray(u) * (hi - lo), n_segments)
        pen = _constraint_penalty(obj, space, x, n_segments)
        if pen > 0.0:
            y = cap[0] + pen
            dg = Diagnostics()
            ok = False
        else:
            try:
                y, dg = evaluate_objective(obj, build_geometry(obj, x, n_segments),
                                           space=space, seed=seed)
                ok = math.isfinite(y)
                if not ok:
                    y = cap[0] * 2.0
            except (InfeasibleState, NoConvergence, SnapDuringProbe,
                    StepSizeUnderflow, ConstraintViolation, NonPositiveD,
                    GeometryInfeasible):
                y, dg, ok = cap[0] * 2.0, Diagnostics(), False
        evals_x.append(np.asarray(u))
        evals_y.append(float(y))
        feasible.append(ok)
        diags.append(dg)
        best = min(evals_y)
        trace.append((len(evals_y), best))
        return float(y)

    n_init = min(max(2 * d + 2, 8), max(budget // 4, 4))
    init = qmc.LatinHypercube(d, seed=int(rng.integers(2**31))).random(n_init)
    for u in init:
        run(u)

    n_polish = max(int(0.15 * budget), 6)
    theta = None  # cached kernel hyperparameters; refit every few points
    while len(evals_y) < budget - n_polish:
        X = np.vstack(evals_x)
        y_arr = np.asarray(evals_y)
        finite_cap = np.percentile(y_arr[np.isfinite(y_arr)], 90)
        y_fit = np.minimum(y_arr, max(finite_cap, 1.0) * 2.0)
        mu, sigma = float(np.mean(y_fit)), float(np.std(y_fit) + 1e-12)
        y_std = (y_fit - mu) / sigma
        if theta is None or len(evals_y) % 5 == 0:
            gp = surrogate.GaussianProcess.fit(X, y_std, seed=seed + len(evals_y))
            theta = (gp.ell, gp.sf2, gp.noise)
        else:
            gp = surrogate.GaussianProcess(X=X, y=y_std, ell=theta[0],
                                           sf2=theta[1], noise=theta[2])
            gp._factorize()
        u_next = surrogate.propose(gp, float(np.min(y_std)), rng)
        # avoid exact duplicates (zero-variance points stall EI)
        if len(evals_x) and min(np.max(np.abs(np.vstack(evals_x) - u_next), axis=1)) < 1e-9:
            u_next = np.clip(u_next + rng.normal(scale=1e-3, size=d), 0.0, 1.0)
        run(u_next)

    if not any(feasible):
        raise NoFeasiblePoint("every sample violated the problem constraints")

    # local polish of the incumbent (counts against the budget)
    from scipy.optimize import minimize as _sm
    i_best = int(np.argmin(np.where(feasible, evals_y, np.inf)))
    u0 = evals_x[i_best]
    remaining = budget - len(evals_y)
    if remaining > 2:
        _sm(lambda u: run(np.clip(u, 0.0, 1.0)), u0, method="Nelder-Mead",
            options={"maxfev": remaining, "xatol": 1e-5, "fatol": 1e-12})

    i_best = int(np.argmin(np.where(feasible, evals_y, np.inf)))
    x_best = _project(obj.variant, lo + evals_x[i_best] * (hi - lo), n_segments)
    geom = build_geometry(obj, x_best, n_segments)
    return DesignResult(
        best_x=x_best, best_geometry=geom, best_value=float(evals_y[i_best]),
        diagnostics=diags[i_best], evaluations=len(evals_y), trace=trace,
        var_names=names)


def segment_sweep(
    obj: Objective,
    space: DesignSpace,
    min_n: int,
    max_n: int,
    budget_per_n: int,
    seed: int = 42,
) -> tuple[int, dict[int, DesignResult]]:
    """Independent optimizations per segment count.

    The selected n is the smallest whose best objective lies within
    max(PARSIMONY_BAND_ABS, PARSIMONY_BAND_REL * best) of the overall best;
    per-n failures are recorded and skipped, not fatal.
    """
    if not (1 <= min_n <= max_n <= space.max_segments):
        raise ConfigError(f"need 1 <= min_n <= max_n <= {space.max_segments}")
    results: dict[int, DesignResult] = {}
    for n in range(min_n, max_n + 1):
        try:
            results[n] = bayesian_optimize(obj, space, n, budget_per_n, seed=seed + 1000 * n)
        except (NoFeasiblePoint, ConfigError):
            continue
    if not results:
        raise NoFeasiblePoint("no segment count produced a feasible design")
    best_val = min(r.best_value for r in results.values())
    band = max(PARSIMONY_BAND_ABS, PARSIMONY_BAND_REL * abs(best_val))
    best_n = min(n for n, r in results.items() if r.best_value <= best_val + band)
    return best_n, results

"""Damped snap-through dynamics, event extraction, and set-point stiffness.

Equations of motion:  M qdd + F_damp(q, qd) + dE/dq = F_pressure(q, t),
integrated with an adaptive Dormand-Prince 5(4) pair.  A snap-through event
is an outward crossing of a dome spring's barrier extension, a snap-back an
inward one; per unit the two strictly alternate by construction.

The set-point stiffness probe follows the quasi-static limit of the paper's
slow follower-force ramp: a tip force grown in small increments with a full
re-equilibration per step ("5 mm/min equivalent"), a linear fit of force vs
tip displacement over the first 2 mm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backends
from .errors import (
    DegenerateElement,
    SnapDuringProbe,
    StepSizeUnderflow,
    UnitNeverSnapped,
)
from .lattice import LatticeModel, SystemState, total_energy, _elastic
from .statics import STATIONARITY_RTOL, StableState, minimize_energy

PROBE_WINDOW_MM = 2.0      # tip travel over which the stiffness line is fitted
PROBE_STEPS = 24
DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-9


@dataclass(frozen=True)
class PressureProfile:
    """Piecewise-linear chamber pressure P(t); times strictly increasing, p >= 0."""

    times: tuple[float, ...]
    pressures: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.pressures, dtype=float)
        if len(t) != len(p) or len(t) < 1:
            raise ValueError("times and pressures must have equal nonzero length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("profile times must be strictly increasing")
        if np.any(p < 0):
            raise ValueError("pressures must be non-negative")

    @classmethod
    def ramp_hold_release(
        cls, magnitude: float, ramp_time: float, hold_time: float,
        release_time: float = 0.05,
    ) -> "PressureProfile":
        """Ramp to `magnitude` over tau1, hold for tau2, release to zero."""
        t1, t2 = ramp_time, hold_time
        return cls(
            times=(0.0, t1, t1 + t2, t1 + t2 + release_time),
            pressures=(0.0, magnitude, magnitude, 0.0),
        )

    @classmethod
    def zero(cls) -> "PressureProfile":
        return cls(times=(0.0,), pressures=(0.0,))

    def release_time(self) -> float | None:
        """Time at which pressure first returns to zero for good; None if never applied."""
        p = np.asarray(self.pressures)
        if not np.any(p > 0):
            return None
        last_pos = np.nonzero(p > 0)[0][-1]
        if last_pos + 1 < len(p):
            return float(self.times[last_pos + 1])
        return None  # pressure still applied at the end of the profile

    def value(self, t: float) -> float:
        return float(np.interp(t, self.times, self.pressures))


@dataclass
class SnapEvent:
    unit: int
    kind: str          # "snap_through" | "snap_back"
    time: float


@dataclass
class EventLog:
    events: list[SnapEvent] = field(default_factory=list)

    def for_unit(self, unit: int) -> list[SnapEvent]:
        return [e for e in self.events if e.unit == unit]

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)


@dataclass
class Trajectory:
    times: np.ndarray             # uniform output grid, s
    states: list[SystemState]
    energies: np.ndarray          # elastic + kinetic, N*mm
    pressures: np.ndarray

    def final_state(self) -> SystemState:
        return self.states[-1]


@dataclass
class StiffnessResult:
    stiffness: float              # N/mm
    r2_of_fit: float
    forces: np.ndarray
    displacements: np.ndarray


def external_pressure_force(model: LatticeModel, state: SystemState, p: float) -> np.ndarray:
    """Follower pressure forces on all dofs at chamber pressure p (MPa)."""
    if p < 0:
        raise ValueError("pressure must be non-negative")
    a = model.arrays
    return backends.active.pressure_forces(
        np.asarray(state.q, dtype=float), a["face_edge"], a["face_orient"], a["face_w"], p)


def damping_forces(model: LatticeModel, state: SystemState) -> np.ndarray:
    """Isotropic plus internal (pair dashpot) damping forces on all dofs."""
    a = model.arrays
    q = np.asarray(state.q, dtype=float)
    pos = q.reshape(-1, 2)
    d = pos[a["pair_ij"][:, 0]] - pos[a["pair_ij"][:, 1]]
    if np.any(np.hypot(d[:, 0], d[:, 1]) < 1e-9):
        raise DegenerateElement("coincident pair nodes in damping evaluation")
    return backends.active.damping_forces(
        q, np.asarray(state.v, dtype=float), a["pair_ij"], a["pair_s"],
        a["eta_int"], a["eta_iso"])


def mechanical_energy(model: LatticeModel, state: SystemState) -> float:
    """Elastic plus kinetic energy (N*mm)."""
    kin = 0.5 * float(np.sum(model.arrays["masses_dof"] * state.v**2))
    return total_energy(model, state) + kin


def integrate(
    model: LatticeModel,
    s0: SystemState,
    load: PressureProfile,
    t_end: float,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    dt_out: float = 1e-3,
) -> tuple[Trajectory, EventLog]:
    """Integrate the damped equations of motion under the pressure profile.

    Emits a SnapEvent whenever a dome spring's extension crosses its barrier
    threshold (outward = snap-through, inward = snap-back).  Raises
    StepSizeUnderflow if the adaptive step falls below 1e-12 s.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    a = model.arrays
    z0 = None
    if model.options.kb_relax_tau > 0:
        ext = model.nonlinear_extensions(s0.q)
        z0 = (ext > a["nl_thr"]).astype(float)
    tp = np.asarray(load.times, dtype=float)
    pp = np.asarray(load.pressures, dtype=float)
    if len(tp) == 1:
        tp = np.array([0.0, max(t_end, 1.0)])
        pp = np.array([pp[0], pp[0]])
    (t_grid, Q, V, ev_elem, ev_kind, ev_time, n_steps, status) = backends.active.integrate_core(
        a, np.asarray(s0.q, dtype=float), np.asarray(s0.v, dtype=float),
        a["free"], a["masses_dof"], tp, pp, s0.time, s0.time + t_end,
        rtol, atol, dt_out, 1e-12, z0)
    if status == backends.active.STATUS_STEP_UNDERFLOW:
        raise StepSizeUnderflow(f"step below 1e-12 s at t = {t_grid[-1]:.6g}")
    if status == backends.active.STATUS_DEGENERATE:
        raise DegenerateElement("coincident nodes during integration")

    states = [SystemState(Q[i], V[i], float(t_grid[i])) for i in range(len(t_grid))]
    energies = np.array([mechanical_energy(model, s) for s in states])
    pressures = np.array([load.value(t) for t in t_grid])
    traj = Trajectory(times=np.asarray(t_grid), states=states,
                      energies=energies, pressures=pressures)

    nl_unit = a["nl_unit"]
    log = EventLog()
    order = np.argsort(ev_time, kind="stable")
    for i in order:
        kind = "snap_through" if ev_kind[i] > 0 else "snap_back"
        log.events.append(SnapEvent(unit=int(nl_unit[ev_elem[i]]), kind=kind,
                                    time=float(ev_time[i])))
    return traj, log


def resetting_time(traj: Trajectory, log: EventLog, load: PressureProfile, unit: int) -> float | None:
    """Delay between pressure release and the unit's snap-back; None if it held.

    Raises UnitNeverSnapped when the unit never inverted during the run.
    """
    release = load.release_time()
    if release is None or release > traj.times[-1]:
        raise ValueError("pressure must be fully released before the end of the run")
    ev = [e for e in log.events if e.unit == unit]
    if not any(e.kind == "snap_through" for e in ev):
        raise UnitNeverSnapped(f"unit {unit} never inverted")
    backs = [e.time for e in ev if e.kind == "snap_back" and e.time >= release]
    if not backs:
        return None
    return backs[0] - release


def stiffness_at_state(
    model: LatticeModel,
    state: StableState,
    *,
    window_mm: float = PROBE_WINDOW_MM,
    steps: int = PROBE_STEPS,
    direction: np.ndarray | None = None,
    seed: int = 0,
) -> StiffnessResult:
    """Set-point stiffness dF/dx from a quasi-static follower-force tip probe.

    The probe force acts on the reported tip node, perpendicular to the end
    wall (or along `direction` in the current frame if given), re-orienting
    with the deformed configuration.  Force magnitude grows geometrically so
    the tip travels about `window_mm`; each increment is equilibrated by a
    full energy minimization with the work term frozen at the previous
    direction (the quasi-static limit of the slow loading rate).  Raises
    SnapDuringProbe if any dome spring crosses its barrier during probing.
    """
    if state.grad_norm >= STATIONARITY_RTOL * (1.0 + abs(state.energy)) + 1e-12:
        raise ValueError("state must be a verified stable state")
    a = model.arrays
    tip = model.report_tip_id
    tip_ix = np.array([2 * tip, 2 * tip + 1])
    q_ref = state.q.copy()
    ext0 = model.nonlinear_extensions(q_ref)
    side0 = ext0 > a["nl_thr"]

    def probe_dir(q):
        if direction is not None:
            d = np.asarray(direction, dtype=float)
            return d / np.linalg.norm(d)
        pos = q.reshape(-1, 2)
        wall = pos[model.tip_id] - pos[model.base_ids[-1]]
        n = np.array([-wall[1], wall[0]])
        n /= max(np.linalg.norm(n), 1e-12)
        # push against the curl (decurling), like a tip indenter
        return -n if n[1] > 0 else n

    # scale the first increment from the rest-state linear response
    e0, g0 = _elastic(model, q_ref)
    f_step = 1e-3
    forces = [0.0]
    disps = [0.0]
    q_cur = q_ref.copy()
    for k in range(1, steps + 1):
        f_mag = forces[-1] + f_step
        d_hat = probe_dir(q_cur)
        for _ in range(3):  # follower direction fixed-point
            fext = np.zeros_like(q_cur)
            fext[tip_ix] = f_mag * d_hat
            st = minimize_energy(model, q_cur, seed=seed, external_force=fext)
            q_new = st.q
            d_new = probe_dir(q_new)
            if np.linalg.norm(d_new - d_hat) < 1e-12:
                break
            d_hat = d_new
        ext = model.nonlinear_extensions(q_new)
        if np.any((ext > a["nl_thr"]) != side0):
            raise SnapDuringProbe(
                f"dome spring crossed its barrier at probe force {f_mag:.4g} N")
        delta = float(np.linalg.norm(q_new[tip_ix] - q_ref[tip_ix]))
        forces.append(f_mag)
        disps.append(delta)
        q_cur = q_new
        if delta >= window_mm:
            break
        # grow the increment so the window is covered in the remaining steps
        if delta > 0:
            remaining = max(steps - k, 1)
            f_step = max(f_step, (window_mm - delta) / remaining * f_mag / max(delta, 1e-9))
    F = np.asarray(forces)
    X = np.asarray(disps)
    sel = X <= window_mm + 1e-9
    F, X = F[sel], X[sel]
    if len(F) < 3:
        raise SnapDuringProbe("not enough probe points inside the fit window")
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, F, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((F - pred) ** 2))
    ss_tot = float(np.sum((F - F.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return StiffnessResult(stiffness=float(coef[0]), r2_of_fit=r2,
                           forces=F, displacements=X)

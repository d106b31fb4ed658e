"""Stable configurations: geometric seeding, energy minimization, enumeration.

The finite state set of an n-unit finger is indexed by activation patterns
(rest/inverted per unit, at most 2^n states).  Each pattern seeds a local
minimization from a purely kinematic guess: every inverted unit's dome spring
is extended to rest + d by rigidly rotating everything downstream of the
crossed joint, accumulating segment to segment.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .errors import NoConvergence
from .geometry import FingerGeometry
from .lattice import BuildOptions, LatticeModel, SystemState, build_lattice, total_energy, energy_gradient, _elastic

STATIONARITY_RTOL = 1e-8     # ||grad||_inf < rtol * (1 + |E|)
DEDUP_TOL = 1e-3             # mm, infinity norm between distinct minima
MAX_ENUM_UNITS = 12
CURVATURE_PROBES = 10
CURVATURE_FLOOR = -1e-6


@dataclass(frozen=True)
class ActivationPattern:
    """Rest/inverted assignment per unit; True means inverted."""

    bits: tuple[bool, ...]

    def __str__(self) -> str:
        return "".join("I" if b else "R" for b in self.bits)

    @classmethod
    def rest(cls, n: int) -> "ActivationPattern":
        return cls(tuple([False] * n))

    @classmethod
    def all_inverted(cls, n: int) -> "ActivationPattern":
        return cls(tuple([True] * n))

    @classmethod
    def from_string(cls, s: str) -> "ActivationPattern":
        return cls(tuple(c in "I1" for c in s))


@dataclass
class StableState:
    pattern: ActivationPattern
    q: np.ndarray
    energy: float
    tip: tuple[float, float]
    grad_norm: float


def _rotate_about(q: np.ndarray, ids, pivot_xy, angle: float) -> None:
    c, s = math.cos(angle), math.sin(angle)
    pos = q.reshape(-1, 2)
    rel = pos[ids] - pivot_xy
    pos[ids] = pivot_xy + rel @ np.array([[c, s], [-s, c]])


def _rotation_to_length(anchor, pivot, point, target_len: float) -> float:
    """CCW rotation of `point` about `pivot` putting it `target_len` from `anchor`.

    Clamped to the farthest reachable configuration when the target exceeds
    |anchor-pivot| + |point-pivot|.
    """
    a = np.asarray(anchor) - np.asarray(pivot)
    r = np.asarray(point) - np.asarray(pivot)
    c = float(a @ r)
    w = float(a[0] * r[1] - a[1] * r[0])
    m = (a @ a + r @ r - target_len**2) / 2.0
    kmag = math.hypot(c, w)
    psi = math.atan2(w, c)
    if kmag < 1e-15:
        return 0.0
    x = m / kmag
    if x < -1.0:
        x = -1.0  # unreachable: rotate to the farthest point
    if x > 1.0:
        x = 1.0
    base = math.acos(x)
    cands = [base - psi, -base - psi]
    # Prefer the positive (curl-direction) rotation of the smallest magnitude.
    pos_c = [c_ for c_ in cands if c_ > 1e-12]
    if pos_c:
        return min(pos_c)
    return max(cands, key=lambda c_: c_)


def geometric_initial_guess(
    model: LatticeModel, pattern: ActivationPattern, d_scale: float = 1.0
) -> np.ndarray:
    """Kinematic seed: extend each inverted dome spring to rest + d by a rigid
    rotation of all downstream nodes about the crossed base joint.

    ``d_scale`` shrinks the extension target (continuation aid); 1.0 is the
    plain geometric model.
    """
    n = model.finger.n_units
    if len(pattern.bits) != n:
        raise ValueError(f"pattern length {len(pattern.bits)} != {n} units")
    q = model.q0.copy()
    pos = q.reshape(-1, 2)
    a = model.arrays
    for i in range(n):
        if not pattern.bits[i]:
            continue
        joint = i + 1  # base node crossed by nonlinear element i
        anchor = a["nl_ij"][i, 0]
        moving = a["nl_ij"][i, 1]
        target = a["nl_s"][i] + d_scale * a["nl_d"][i]
        angle = _rotation_to_length(pos[anchor], pos[joint], pos[moving], target)
        downstream = [j for j in model.base_ids if j > joint]
        downstream += [t for k, t in enumerate(model.top_ids) if k > i]
        downstream.append(model.tip_id)
        _rotate_about(q, np.array(downstream, dtype=int), pos[joint].copy(), angle)
    return q


def minimize_energy(
    model: LatticeModel,
    q0: np.ndarray,
    *,
    max_iter: int = 5000,
    seed: int = 0,
    pattern: ActivationPattern | None = None,
    external_force: np.ndarray | None = None,
) -> StableState:
    """Local quasi-Newton minimization to a verified stationary point.

    Stationarity gate: ||grad||_inf < 1e-8 * (1 + |E|) over free dofs, plus a
    nonnegative second-difference check along random probe directions.
    Raises NoConvergence (carrying the best iterate) past the iteration cap.
    With ``external_force`` the minimized potential is E(q) - f.q (dead load
    work term); the reported energy stays the elastic energy at the solution.
    """
    q0 = np.asarray(q0, dtype=float)
    if not np.all(np.isfinite(q0)):
        raise ValueError("initial coordinates must be finite")
    a = model.arrays
    free = a["free"]
    q_work = q0.copy()
    fext = None if external_force is None else np.asarray(external_force, dtype=float)

    def fun(xf):
        q_work[free] = xf
        e, g = _elastic(model, q_work)
        if fext is not None:
            e -= float(fext @ q_work)
            g = g - fext
        return e, g[free]

    # Stage 1: L-BFGS with restarts.  The rigid-penalty terms spread the
    # spectrum over ~8 decades and scipy's line search often quits early on
    # such problems; restarting with fresh curvature memory recovers.
    xf = q0[free].copy()
    g_prev = np.inf
    for _ in range(6):
        res = _scipy_minimize(
            fun, xf, jac=True, method="L-BFGS-B",
            options={"maxiter": max_iter, "maxfun": 4 * max_iter,
                     "ftol": 1e-18, "gtol": 1e-14, "maxcor": 30},
        )
        xf = res.x
        e, g = fun(xf)
        gn = float(np.abs(g).max())
        if gn < STATIONARITY_RTOL * (1.0 + abs(e)) or gn > 0.7 * g_prev:
            break
        g_prev = gn

    # Stage 2: diagonally preconditioned L-BFGS when stage 1 stalled high.
    if np.abs(g).max() > 1e-4 * (1.0 + abs(e)):
        hd = 1e-6
        diag = np.empty(len(xf))
        for j in range(len(xf)):
            xp = xf.copy(); xp[j] += hd
            xm = xf.copy(); xm[j] -= hd
            diag[j] = (fun(xp)[1][j] - fun(xm)[1][j]) / (2 * hd)
        scale = 1.0 / np.sqrt(np.clip(np.abs(diag), 1e-3, None))

        def fun_scaled(y):
            e_s, g_s = fun(y * scale)
            return e_s, g_s * scale

        for _ in range(4):
            res = _scipy_minimize(
                fun_scaled, xf / scale, jac=True, method="L-BFGS-B",
                options={"maxiter": max_iter, "maxfun": 4 * max_iter,
                         "ftol": 1e-18, "gtol": 1e-14, "maxcor": 30},
            )
            xf = res.x * scale
            gn = float(np.abs(fun(xf)[1]).max())
            if gn < 1e-10 or gn > 0.7 * g_prev:
                break
            g_prev = gn
        e, g = fun(xf)

    tol = STATIONARITY_RTOL * (1.0 + abs(e))
    # Modified-Newton polish; L-BFGS alone stalls above the stationarity gate
    # because the rigid penalty spreads the Hessian spectrum over ~8 decades.
    # The Hessian of the analytic gradient is differenced column by column
    # (dofs are few) and its eigenvalues clamped positive.
    nf = len(xf)
    fd_h = 1e-6
    for _ in range(80):
        if np.abs(g).max() < tol:
            break
        H = np.empty((nf, nf))
        for j in range(nf):
            xp = xf.copy(); xp[j] += fd_h
            xm = xf.copy(); xm[j] -= fd_h
            H[:, j] = (fun(xp)[1] - fun(xm)[1]) / (2 * fd_h)
        H = 0.5 * (H + H.T)
        w, U = np.linalg.eigh(H)
        w_floor = max(1e-8 * np.abs(w).max(), 1e-12)
        w_mod = np.where(np.abs(w) < w_floor, w_floor, np.abs(w))
        step = -U @ ((U.T @ g) / w_mod)
        t_ls = 1.0
        accepted = False
        for _ in range(40):
            e_new, g_new = fun(xf + t_ls * step)
            if (np.abs(g_new).max() < np.abs(g).max()
                    or e_new < e - 1e-14 * (1.0 + abs(e))):
                xf = xf + t_ls * step
                e, g = e_new, g_new
                accepted = True
                break
            t_ls *= 0.5
        if not accepted:
            break
        tol = STATIONARITY_RTOL * (1.0 + abs(e))

    q_work[free] = xf
    grad_norm = float(np.abs(g).max())
    tip = tuple(q_work.reshape(-1, 2)[model.report_tip_id])
    elastic_e = _elastic(model, q_work)[0] if fext is not None else float(e)
    state = StableState(
        pattern=pattern if pattern is not None else ActivationPattern.rest(model.finger.n_units),
        q=q_work.copy(), energy=float(elastic_e), tip=(float(tip[0]), float(tip[1])),
        grad_norm=grad_norm,
    )
    if grad_norm >= STATIONARITY_RTOL * (1.0 + abs(e)):
        raise NoConvergence(
            f"stationarity not reached: |g|={grad_norm:.3e} after polish", best_state=state)

    # Positive-semidefinite curvature along random probes (second differences).
    rng = np.random.default_rng(seed + 12345)
    hprobe = 1e-4
    for _ in range(CURVATURE_PROBES):
        dirn = rng.normal(size=len(free))
        dirn /= np.linalg.norm(dirn)
        ep = fun(xf + hprobe * dirn)[0]
        em = fun(xf - hprobe * dirn)[0]
        if (ep - 2 * e + em) / hprobe**2 < CURVATURE_FLOOR:
            raise NoConvergence(
                f"negative curvature {ep - 2 * e + em:.3e} along probe", best_state=state)
    return state


def enumerate_stable_states(
    finger_or_model: FingerGeometry | LatticeModel,
    *,
    options: BuildOptions | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[StableState]:
    """Minimize from all 2^n geometric seeds and deduplicate the minima.

    States whose coordinate vectors differ by less than DEDUP_TOL in the
    infinity norm merge (lowest-energy representative kept); the distinct
    states come back sorted by energy.  Per-seed NoConvergence is skipped
    without aborting the sweep.
    """
    model = (
        finger_or_model if isinstance(finger_or_model, LatticeModel)
        else build_lattice(finger_or_model, options)
    )
    n = model.finger.n_units
    if n > MAX_ENUM_UNITS:
        raise ValueError(f"state enumeration capped at {MAX_ENUM_UNITS} units (2^n growth)")

    patterns = [ActivationPattern(bits) for bits in itertools.product((False, True), repeat=n)]

    def solve(p):
        try:
            return solve_pattern(model, p, seed=seed)
        except NoConvergence:
            return None

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(solve, patterns))
    else:
        results = [solve(p) for p in patterns]

    found: list[StableState] = []
    for st in results:
        if st is None:
            continue
        for prev in found:
            if np.abs(st.q - prev.q).max() < DEDUP_TOL:
                if st.energy < prev.energy:
                    prev.q, prev.energy = st.q, st.energy
                    prev.tip, prev.grad_norm = st.tip, st.grad_norm
                break
        else:
            found.append(st)
    found.sort(key=lambda s: s.energy)
    return found


def tip_position(state: StableState) -> tuple[float, float]:
    """Coordinates of the designated tip node (top of the finger's end wall)."""
    return state.tip


SEED_SCALES = (1.0, 0.75, 0.55)


def solve_pattern(
    model: LatticeModel, pattern: ActivationPattern, *, seed: int = 0
) -> StableState:
    """Minimize from one pattern's geometric seed.

    Deeply curled seeds (many inverted units with large travel) can coil the
    chain into a foreign basin; on failure the extension target is staged
    down, which keeps the seed past the snap barriers but uncoiled.
    """
    err: NoConvergence | None = None
    for s in SEED_SCALES:
        try:
            return minimize_energy(
                model, geometric_initial_guess(model, pattern, d_scale=s),
                seed=seed, pattern=pattern)
        except NoConvergence as ex:
            err = ex
    raise err


def export_states(states: list[StableState]) -> str:
    """Tabular record stream: pattern, energy, tip, then the full coordinates."""
    lines = ["pattern\tenergy\ttip_x\ttip_y\tgrad_norm\tq"]
    for s in states:
        qs = ",".join(f"{v:.10g}" for v in s.q)
        lines.append(
            f"{s.pattern}\t{s.energy:.10g}\t{s.tip[0]:.10g}\t{s.tip[1]:.10g}\t"
            f"{s.grad_norm:.3e}\t{qs}")
    return "\n".join(lines) + "\n"

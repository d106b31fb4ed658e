"""Pure-NumPy kernels: elastic energy/gradient, damping, and the RK45 loop.

This is the fallback backend; `snaplattice.backends._core` implements the
same functions in Cython.  Both operate on the packed element arrays built by
`snaplattice.lattice` and must stay semantically identical.

Conventions: coordinates are flat [x0, y0, x1, y1, ...]; the gradient is
dE/dq (an internal force of +dE/dq resists the motion that increases E).
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "pure"

_SIN_FLOOR = 1e-9  # torsional gradient clamp near collinear triples
_LEN_FLOOR = 1e-9  # pair elements below this separation are degenerate

# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_DEGENERATE = 2


def elastic_energy_grad(
    q,
    lin_ij,
    lin_k,
    lin_s,
    nl_ij,
    nl_kb,
    nl_alpha,
    nl_d,
    nl_s,
    nl_kc,
    nl_gap,
    tor_ijk,
    tor_k,
    tor_th0,
    kb_scale=None,
):
    """Total elastic energy and its gradient dE/dq.

    Returns (energy, grad, status); status != STATUS_OK flags a degenerate
    element (coincident pair nodes or a zero-length torsional ray).
    """
    pos = q.reshape(-1, 2)
    grad = np.zeros_like(pos)
    energy = 0.0
    status = STATUS_OK

    if len(lin_ij):
        dvec = pos[lin_ij[:, 0]] - pos[lin_ij[:, 1]]
        length = np.hypot(dvec[:, 0], dvec[:, 1])
        if np.any(length < _LEN_FLOOR):
            status = STATUS_DEGENERATE
        length = np.maximum(length, _LEN_FLOOR)
        stretch = length - lin_s
        energy += 0.5 * float(np.dot(lin_k, stretch * stretch))
        fmag = lin_k * stretch / length
        fvec = dvec * fmag[:, None]
        np.add.at(grad, lin_ij[:, 0], fvec)
        np.add.at(grad, lin_ij[:, 1], -fvec)

    if len(nl_ij):
        kb = nl_kb if kb_scale is None else nl_kb * kb_scale
        dvec = pos[nl_ij[:, 0]] - pos[nl_ij[:, 1]]
        length = np.hypot(dvec[:, 0], dvec[:, 1])
        if np.any(length < _LEN_FLOOR):
            status = STATUS_DEGENERATE
        length = np.maximum(length, _LEN_FLOOR)
        xb = length - nl_s
        u = xb / nl_d
        b = 1.0 - nl_alpha
        energy += float(np.sum(0.5 * kb * xb * xb * (1.0 + b * (u * u - 2.0 * u))))
        dEdx = kb * xb * (1.0 + b * (2.0 * u * u - 3.0 * u))
        # contact stops: everted dome pressing into the neighboring wall
        # (extension past d) and adjacent walls touching (gap closing)
        over = np.maximum(xb - nl_d, 0.0)
        under = np.minimum(xb + nl_gap, 0.0)
        energy += float(np.sum(0.5 * nl_kc * (over * over + under * under)))
        dEdx = dEdx + nl_kc * (over + under)
        fvec = dvec * (dEdx / length)[:, None]
        np.add.at(grad, nl_ij[:, 0], fvec)
        np.add.at(grad, nl_ij[:, 1], -fvec)

    if len(tor_ijk):
        # Ordered triple (prev, vertex, next); angle at the vertex.
        xa = pos[tor_ijk[:, 0]]
        xv = pos[tor_ijk[:, 1]]
        xb_ = pos[tor_ijk[:, 2]]
        e0 = xa - xv
        e1 = xb_ - xv
        n0 = np.hypot(e0[:, 0], e0[:, 1])
        n1 = np.hypot(e1[:, 0], e1[:, 1])
        if np.any(n0 < _LEN_FLOOR) or np.any(n1 < _LEN_FLOOR):
            status = STATUS_DEGENERATE
        n0 = np.maximum(n0, _LEN_FLOOR)
        n1 = np.maximum(n1, _LEN_FLOOR)
        dot = e0[:, 0] * e1[:, 0] + e0[:, 1] * e1[:, 1]
        u = np.clip(dot / (n0 * n1), -1.0, 1.0)
        theta = np.arccos(u)
        dth = theta - tor_th0
        energy += 0.5 * float(np.dot(tor_k, dth * dth))
        # F = k*(theta-theta0) * grad(theta); grad(theta) = -grad(u)/sin(theta)
        coef = -tor_k * dth / np.maximum(np.sin(theta), _SIN_FLOOR)
        inv01 = 1.0 / (n0 * n1)
        gu_a = (e1 - e0 * (dot / (n0 * n0))[:, None]) * inv01[:, None]
        gu_b = (e0 - e1 * (dot / (n1 * n1))[:, None]) * inv01[:, None]
        gu_v = -(e0 + e1) * inv01[:, None] + (
            e0 * (dot / (n0 * n0))[:, None] + e1 * (dot / (n1 * n1))[:, None]
        ) * inv01[:, None]
        np.add.at(grad, tor_ijk[:, 0], coef[:, None] * gu_a)
        np.add.at(grad, tor_ijk[:, 1], coef[:, None] * gu_v)
        np.add.at(grad, tor_ijk[:, 2], coef[:, None] * gu_b)

    return energy, grad.reshape(-1), status


def damping_forces(q, v, pair_ij, pair_s, eta_int, eta_iso):
    """Internal (pair dashpot) plus isotropic damping forces on every dof.

    Returned with the sign of a resisting force term F_d as it appears on the
    left side of  M a + F_d + dE/dq = F_ext.
    """
    pos = q.reshape(-1, 2)
    vel = v.reshape(-1, 2)
    force = eta_iso * vel.copy()
    if len(pair_ij) and eta_int > 0.0:
        dvec = pos[pair_ij[:, 0]] - pos[pair_ij[:, 1]]
        dvel = vel[pair_ij[:, 0]] - vel[pair_ij[:, 1]]
        # length floored at a fraction of rest so the s/L^3 factor cannot
        # blow up when a pair collapses mid-transient
        length = np.maximum(np.hypot(dvec[:, 0], dvec[:, 1]), 0.05 * pair_s)
        srl = pair_s / length
        proj = dvec[:, 0] * dvel[:, 0] + dvec[:, 1] * dvel[:, 1]
        fvec = eta_int * (
            dvel * (1.0 - srl)[:, None] + dvec * (srl * proj / length**2)[:, None]
        )
        np.add.at(force, pair_ij[:, 0], fvec)
        np.add.at(force, pair_ij[:, 1], -fvec)
    return force.reshape(-1)


def pressure_forces(q, face_edge, face_orient, face_w, p):
    """Follower pressure forces: p * edge length * width along the face normal.

    The normal is the edge perpendicular times the build-time orientation
    sign (body-fixed, smooth in the state).  Half of each face force goes to
    each edge node; |perp| equals the edge length, so orient * p * w * perp
    has magnitude p * L * w.
    """
    force = np.zeros_like(q)
    if p == 0.0 or not len(face_edge):
        return force
    pos = q.reshape(-1, 2)
    fmat = force.reshape(-1, 2)
    for f in range(len(face_edge)):
        i, j = face_edge[f, 0], face_edge[f, 1]
        edge = pos[j] - pos[i]
        half = 0.5 * p * face_w[f] * face_orient[f] * np.array([-edge[1], edge[0]])
        fmat[i] += half
        fmat[j] += half
    return force


def _interp_pressure(t, tp, pp):
    if t <= tp[0]:
        return pp[0]
    if t >= tp[-1]:
        return pp[-1]
    return float(np.interp(t, tp, pp))


class _RHS:
    """Equations of motion in first-order form on the free dofs."""

    def __init__(self, model_arrays, q_ref, free, masses_dof, tp, pp):
        self.m = model_arrays
        self.q_ref = q_ref
        self.free = free
        self.minv = 1.0 / masses_dof[free]
        self.tp = tp
        self.pp = pp
        self.nf = len(free)

    def full_q(self, y):
        q = self.q_ref.copy()
        q[self.free] = y[: self.nf]
        return q

    def full_v(self, y):
        v = np.zeros_like(self.q_ref)
        v[self.free] = y[self.nf : 2 * self.nf]
        return v

    def __call__(self, t, y):
        m = self.m
        q = self.full_q(y)
        v = self.full_v(y)
        nz = len(y) - 2 * self.nf
        kb_scale = None
        if nz:
            z = y[2 * self.nf :]
            kb_scale = 1.0 - m["relax_depth"] * z
        _, grad, status = elastic_energy_grad(
            q,
            m["lin_ij"], m["lin_k"], m["lin_s"],
            m["nl_ij"], m["nl_kb"], m["nl_alpha"], m["nl_d"], m["nl_s"], m["nl_kc"],
            m["nl_gap"],
            m["tor_ijk"], m["tor_k"], m["tor_th0"],
            kb_scale=kb_scale,
        )
        fd = damping_forces(q, v, m["pair_ij"], m["pair_s"], m["eta_int"], m["eta_iso"])
        p = _interp_pressure(t, self.tp, self.pp)
        fext = pressure_forces(q, m["face_edge"], m["face_orient"], m["face_w"], p)
        acc = (fext - fd - grad)[self.free] * self.minv
        out = np.empty_like(y)
        out[: self.nf] = y[self.nf : 2 * self.nf]
        out[self.nf : 2 * self.nf] = acc
        if nz:
            ext = _nl_extensions(q, m["nl_ij"], m["nl_s"])
            target = (ext > m["nl_thr"]).astype(float)
            out[2 * self.nf :] = (target - z) / m["relax_tau"]
        return out, status


def _nl_extensions(q, nl_ij, nl_s):
    pos = q.reshape(-1, 2)
    dvec = pos[nl_ij[:, 0]] - pos[nl_ij[:, 1]]
    return np.hypot(dvec[:, 0], dvec[:, 1]) - nl_s


def _hermite(y0, f0, y1, f1, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    return (
        y0 * (2 * t3 - 3 * t2 + 1)
        + f0 * (h * (t3 - 2 * t2 + theta))
        + y1 * (-2 * t3 + 3 * t2)
        + f1 * (h * (t3 - t2))
    )


def integrate_core(
    model_arrays,
    q0,
    v0,
    free,
    masses_dof,
    tp,
    pp,
    t0,
    t_end,
    rtol,
    atol,
    dt_out,
    dt_min=1e-12,
    z0=None,
):
    """Adaptive Dormand-Prince 5(4) integration with snap-event detection.

    Returns (t_grid, Q, V, ev_elem, ev_kind, ev_time, n_steps, status) where
    Q/V hold the full coordinate/velocity vectors on the uniform output grid
    and ev_kind is +1 for an outward barrier crossing, -1 for inward.
    """
    rhs = _RHS(model_arrays, q0.copy(), free, masses_dof, tp, pp)
    nf = len(free)
    y = np.concatenate([q0[free], v0[free]] + ([z0] if z0 is not None else []))
    t = t0

    thr = model_arrays["nl_thr"]
    ext0 = _nl_extensions(q0, model_arrays["nl_ij"], model_arrays["nl_s"])
    armed = np.where(ext0 > thr, -1, 1).astype(np.int8)  # +1: watch for outward crossing

    t_grid = [t0]
    Q = [q0.copy()]
    V = [np.zeros_like(q0)]
    V[0][free] = v0[free]
    ev_elem, ev_kind, ev_time = [], [], []

    f, status = rhs(t, y)
    if status:
        return (np.array(t_grid), np.array(Q), np.array(V),
                np.array(ev_elem, dtype=np.int64), np.array(ev_kind, dtype=np.int8),
                np.array(ev_time), 0, status)

    # Initial step from the usual |y|/|f| heuristic.
    d0 = float(np.linalg.norm(y)) / math.sqrt(len(y))
    d1 = float(np.linalg.norm(f)) / math.sqrt(len(y))
    h = min(t_end - t0, 1e-2 if d1 < 1e-12 else max(1e-9, 0.01 * d0 / d1))
    h = max(h, 1e-9)

    n_steps = 0
    next_out = t0 + dt_out
    k = [None] * 7
    k[0] = f
    while t < t_end:
        h = min(h, t_end - t)
        if h < dt_min:
            status = STATUS_STEP_UNDERFLOW
            break
        for stage in range(1, 7):
            ys = y + h * sum(a * k[m_] for m_, a in enumerate(_DP_A[stage]))
            k[stage], st = rhs(t + _DP_C[stage] * h, ys)
            if st:
                status = st
                break
        if status:
            break
        y_new = ys  # stage 7 state equals the 5th-order solution (FSAL)
        err_vec = h * sum(e * k[m_] for m_, e in enumerate(_DP_E))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0:
            t_new = t + h
            q_a = rhs.full_q(y)
            q_b = rhs.full_q(y_new)
            f0q = np.zeros_like(q_a)
            f1q = np.zeros_like(q_a)
            f0q[free] = k[0][:nf]
            f1q[free] = k[6][:nf]
            v_b = rhs.full_v(y_new)

            # Snap events: barrier crossings of the nonlinear extensions.
            ext1 = _nl_extensions(q_b, model_arrays["nl_ij"], model_arrays["nl_s"])
            for e_i in range(len(thr)):
                want = armed[e_i]
                crossed = (want > 0 and ext1[e_i] > thr[e_i]) or (
                    want < 0 and ext1[e_i] < thr[e_i]
                )
                if not crossed:
                    continue
                lo, hi = 0.0, 1.0
                for _ in range(48):
                    mid = 0.5 * (lo + hi)
                    qm = _hermite(q_a, f0q, q_b, f1q, h, mid)
                    em = _nl_extensions(qm, model_arrays["nl_ij"], model_arrays["nl_s"])[e_i]
                    if (em > thr[e_i]) == (want > 0):
                        hi = mid
                    else:
                        lo = mid
                ev_elem.append(e_i)
                ev_kind.append(int(want))
                ev_time.append(t + 0.5 * (lo + hi) * h)
                armed[e_i] = -want

            while next_out <= t_new + 1e-15:
                theta = (next_out - t) / h
                t_grid.append(next_out)
                Q.append(_hermite(q_a, f0q, q_b, f1q, h, min(max(theta, 0.0), 1.0)))
                vm = np.zeros_like(q_a)
                vm[free] = _hermite(y[nf : 2 * nf], k[0][nf : 2 * nf],
                                    y_new[nf : 2 * nf], k[6][nf : 2 * nf], h, theta)
                V.append(vm)
                next_out += dt_out

            t, y = t_new, y_new
            k[0] = k[6]
            n_steps += 1
            h = h * min(5.0, max(0.2, 0.9 * err ** -0.2 if err > 1e-10 else 5.0))
        else:
            h = h * max(0.2, 0.9 * err ** -0.2)

    if t_grid[-1] < t_end - 1e-12 and status == STATUS_OK:
        t_grid.append(t)
        Q.append(rhs.full_q(y))
        V.append(rhs.full_v(y))
    return (
        np.array(t_grid),
        np.array(Q),
        np.array(V),
        np.array(ev_elem, dtype=np.int64),
        np.array(ev_kind, dtype=np.int8),
        np.array(ev_time),
        n_steps,
        status,
    )

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: elastic energy/gradient, damping, and the RK45 loop.

Mirrors snaplattice.backends.pure; both backends must stay semantically
identical.  See that module for conventions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, acos, sin, fabs, fmax, fmin, pow

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double SIN_FLOOR = 1e-9
cdef double LEN_FLOOR = 1e-9

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_DEGENERATE = 2


cdef int _elastic_c(
    double[::1] q,
    long[:, ::1] lin_ij, double[::1] lin_k, double[::1] lin_s,
    long[:, ::1] nl_ij, double[::1] nl_kb, double[::1] nl_alpha,
    double[::1] nl_d, double[::1] nl_s, double[::1] nl_kc, double[::1] nl_gap,
    long[:, ::1] tor_ijk, double[::1] tor_k, double[::1] tor_th0,
    double[::1] kb_scale,
    double[::1] grad, double* energy_out) nogil:
    cdef int status = 0
    cdef Py_ssize_t m, i, j, a, v, b
    cdef double dx, dy, length, stretch, fm, energy = 0.0
    cdef double xb, u, bb, dEdx, kb
    cdef double e0x, e0y, e1x, e1y, n0, n1, dot, uu, theta, dth, coef, inv01
    cdef double ga_x, ga_y, gb_x, gb_y, gv_x, gv_y, r0, r1

    for i in range(grad.shape[0]):
        grad[i] = 0.0

    for m in range(lin_ij.shape[0]):
        i = lin_ij[m, 0]; j = lin_ij[m, 1]
        dx = q[2 * i] - q[2 * j]
        dy = q[2 * i + 1] - q[2 * j + 1]
        length = sqrt(dx * dx + dy * dy)
        if length < LEN_FLOOR:
            status = 2
            length = LEN_FLOOR
        stretch = length - lin_s[m]
        energy += 0.5 * lin_k[m] * stretch * stretch
        fm = lin_k[m] * stretch / length
        grad[2 * i] += fm * dx; grad[2 * i + 1] += fm * dy
        grad[2 * j] -= fm * dx; grad[2 * j + 1] -= fm * dy

    for m in range(nl_ij.shape[0]):
        i = nl_ij[m, 0]; j = nl_ij[m, 1]
        kb = nl_kb[m]
        if kb_scale.shape[0] > 0:
            kb = kb * kb_scale[m]
        dx = q[2 * i] - q[2 * j]
        dy = q[2 * i + 1] - q[2 * j + 1]
        length = sqrt(dx * dx + dy * dy)
        if length < LEN_FLOOR:
            status = 2
            length = LEN_FLOOR
        xb = length - nl_s[m]
        u = xb / nl_d[m]
        bb = 1.0 - nl_alpha[m]
        energy += 0.5 * kb * xb * xb * (1.0 + bb * (u * u - 2.0 * u))
        dEdx = kb * xb * (1.0 + bb * (2.0 * u * u - 3.0 * u))
        if xb > nl_d[m]:
            # contact stop: everted dome pressing into the neighboring wall
            energy += 0.5 * nl_kc[m] * (xb - nl_d[m]) * (xb - nl_d[m])
            dEdx += nl_kc[m] * (xb - nl_d[m])
        elif xb < -nl_gap[m]:
            # adjacent chamber walls touching as the gap closes
            energy += 0.5 * nl_kc[m] * (xb + nl_gap[m]) * (xb + nl_gap[m])
            dEdx += nl_kc[m] * (xb + nl_gap[m])
        fm = dEdx / length
        grad[2 * i] += fm * dx; grad[2 * i + 1] += fm * dy
        grad[2 * j] -= fm * dx; grad[2 * j + 1] -= fm * dy

    for m in range(tor_ijk.shape[0]):
        a = tor_ijk[m, 0]; v = tor_ijk[m, 1]; b = tor_ijk[m, 2]
        e0x = q[2 * a] - q[2 * v]; e0y = q[2 * a + 1] - q[2 * v + 1]
        e1x = q[2 * b] - q[2 * v]; e1y = q[2 * b + 1] - q[2 * v + 1]
        n0 = sqrt(e0x * e0x + e0y * e0y)
        n1 = sqrt(e1x * e1x + e1y * e1y)
        if n0 < LEN_FLOOR or n1 < LEN_FLOOR:
            status = 2
            n0 = fmax(n0, LEN_FLOOR); n1 = fmax(n1, LEN_FLOOR)
        dot = e0x * e1x + e0y * e1y
        uu = dot / (n0 * n1)
        if uu > 1.0: uu = 1.0
        if uu < -1.0: uu = -1.0
        theta = acos(uu)
        dth = theta - tor_th0[m]
        energy += 0.5 * tor_k[m] * dth * dth
        coef = -tor_k[m] * dth / fmax(sin(theta), SIN_FLOOR)
        inv01 = 1.0 / (n0 * n1)
        r0 = dot / (n0 * n0); r1 = dot / (n1 * n1)
        ga_x = (e1x - e0x * r0) * inv01; ga_y = (e1y - e0y * r0) * inv01
        gb_x = (e0x - e1x * r1) * inv01; gb_y = (e0y - e1y * r1) * inv01
        gv_x = (-(e0x + e1x) + e0x * r0 + e1x * r1) * inv01
        gv_y = (-(e0y + e1y) + e0y * r0 + e1y * r1) * inv01
        grad[2 * a] += coef * ga_x; grad[2 * a + 1] += coef * ga_y
        grad[2 * v] += coef * gv_x; grad[2 * v + 1] += coef * gv_y
        grad[2 * b] += coef * gb_x; grad[2 * b + 1] += coef * gb_y

    energy_out[0] = energy
    return status


_EMPTY = np.empty(0)


def elastic_energy_grad(q, lin_ij, lin_k, lin_s, nl_ij, nl_kb, nl_alpha,
                        nl_d, nl_s, nl_kc, nl_gap, tor_ijk, tor_k, tor_th0, kb_scale=None):
    cdef cnp.ndarray[double, ndim=1] grad = np.zeros(len(q))
    cdef double energy = 0.0
    cdef double[::1] scale = _EMPTY if kb_scale is None else np.ascontiguousarray(kb_scale)
    cdef int status = _elastic_c(
        np.ascontiguousarray(q), lin_ij, lin_k, lin_s,
        nl_ij, nl_kb, nl_alpha, nl_d, nl_s, nl_kc, nl_gap, tor_ijk, tor_k, tor_th0,
        scale, grad, &energy)
    return energy, grad, status


cdef void _damping_c(
    double[::1] q, double[::1] v,
    long[:, ::1] pair_ij, double[::1] pair_s,
    double eta_int, double eta_iso, double[::1] force) nogil:
    cdef Py_ssize_t m, i, j
    cdef double dx, dy, dvx, dvy, length, srl, proj, fx, fy
    for i in range(force.shape[0]):
        force[i] = eta_iso * v[i]
    if eta_int <= 0.0:
        return
    for m in range(pair_ij.shape[0]):
        i = pair_ij[m, 0]; j = pair_ij[m, 1]
        dx = q[2 * i] - q[2 * j]
        dy = q[2 * i + 1] - q[2 * j + 1]
        dvx = v[2 * i] - v[2 * j]
        dvy = v[2 * i + 1] - v[2 * j + 1]
        # floor at a fraction of rest so s/L^3 cannot blow up on collapse
        length = fmax(sqrt(dx * dx + dy * dy), 0.05 * pair_s[m])
        srl = pair_s[m] / length
        proj = dx * dvx + dy * dvy
        fx = eta_int * (dvx * (1.0 - srl) + dx * srl * proj / (length * length))
        fy = eta_int * (dvy * (1.0 - srl) + dy * srl * proj / (length * length))
        force[2 * i] += fx; force[2 * i + 1] += fy
        force[2 * j] -= fx; force[2 * j + 1] -= fy


def damping_forces(q, v, pair_ij, pair_s, eta_int, eta_iso):
    cdef cnp.ndarray[double, ndim=1] force = np.zeros(len(q))
    _damping_c(np.ascontiguousarray(q), np.ascontiguousarray(v),
               pair_ij, pair_s, eta_int, eta_iso, force)
    return force


cdef void _pressure_c(
    double[::1] q, long[:, ::1] face_edge, double[::1] face_orient,
    double[::1] face_w, double p, double[::1] force) nogil:
    cdef Py_ssize_t f, i, j
    cdef double ex, ey, half
    if p == 0.0:
        return
    for f in range(face_edge.shape[0]):
        i = face_edge[f, 0]; j = face_edge[f, 1]
        ex = q[2 * j] - q[2 * i]; ey = q[2 * j + 1] - q[2 * i + 1]
        # body-fixed orientation; |(-ey, ex)| is the edge length
        half = 0.5 * p * face_w[f] * face_orient[f]
        force[2 * i] += half * (-ey); force[2 * i + 1] += half * ex
        force[2 * j] += half * (-ey); force[2 * j + 1] += half * ex


def pressure_forces(q, face_edge, face_orient, face_w, p):
    cdef cnp.ndarray[double, ndim=1] force = np.zeros(len(q))
    _pressure_c(np.ascontiguousarray(q), face_edge, face_orient, face_w, p, force)
    return force


cdef double _interp_p(double t, double[::1] tp, double[::1] pp) nogil:
    cdef Py_ssize_t n = tp.shape[0], i
    if t <= tp[0]:
        return pp[0]
    if t >= tp[n - 1]:
        return pp[n - 1]
    i = 1
    while tp[i] < t:
        i += 1
    return pp[i - 1] + (pp[i] - pp[i - 1]) * (t - tp[i - 1]) / (tp[i] - tp[i - 1])


# Dormand-Prince 5(4) coefficients.
cdef double[7] DP_C = [0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0]
cdef double[7][6] DP_A
DP_A[1][0] = 1.0 / 5
DP_A[2][0] = 3.0 / 40; DP_A[2][1] = 9.0 / 40
DP_A[3][0] = 44.0 / 45; DP_A[3][1] = -56.0 / 15; DP_A[3][2] = 32.0 / 9
DP_A[4][0] = 19372.0 / 6561; DP_A[4][1] = -25360.0 / 2187
DP_A[4][2] = 64448.0 / 6561; DP_A[4][3] = -212.0 / 729
DP_A[5][0] = 9017.0 / 3168; DP_A[5][1] = -355.0 / 33; DP_A[5][2] = 46732.0 / 5247
DP_A[5][3] = 49.0 / 176; DP_A[5][4] = -5103.0 / 18656
DP_A[6][0] = 35.0 / 384; DP_A[6][1] = 0.0; DP_A[6][2] = 500.0 / 1113
DP_A[6][3] = 125.0 / 192; DP_A[6][4] = -2187.0 / 6784; DP_A[6][5] = 11.0 / 84
cdef double[7] DP_E = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920,
                       -17253.0 / 339200, 22.0 / 525, -1.0 / 40]


cdef class _Work:
    cdef double[::1] q_full, v_full, grad, fd, fp
    cdef long[::1] free
    cdef double[::1] q_ref, minv


def integrate_core(model_arrays, q0, v0, free, masses_dof, tp, pp,
                   t0, t_end, rtol, atol, dt_out, dt_min=1e-12, z0=None):
    """Adaptive DOPRI5(4) with barrier-crossing snap events; see pure backend."""
    m = model_arrays
    cdef long[:, ::1] lin_ij = m["lin_ij"]
    cdef double[::1] lin_k = m["lin_k"], lin_s = m["lin_s"]
    cdef long[:, ::1] nl_ij = m["nl_ij"]
    cdef double[::1] nl_kb = m["nl_kb"], nl_alpha = m["nl_alpha"]
    cdef double[::1] nl_d = m["nl_d"], nl_s = m["nl_s"], nl_thr = m["nl_thr"]
    cdef double[::1] nl_kc = m["nl_kc"]
    cdef double[::1] nl_gap = m["nl_gap"]
    cdef long[:, ::1] tor_ijk = m["tor_ijk"]
    cdef double[::1] tor_k = m["tor_k"], tor_th0 = m["tor_th0"]
    cdef long[:, ::1] pair_ij = m["pair_ij"]
    cdef double[::1] pair_s = m["pair_s"]
    cdef long[:, ::1] face_edge = m["face_edge"]
    cdef double[::1] face_orient = m["face_orient"]
    cdef double[::1] face_w = m["face_w"]
    cdef double eta_int = m["eta_int"], eta_iso = m["eta_iso"]
    cdef double relax_tau = m["relax_tau"], relax_depth = m["relax_depth"]

    cdef double[::1] tpv = np.ascontiguousarray(tp, dtype=float)
    cdef double[::1] ppv = np.ascontiguousarray(pp, dtype=float)
    cdef long[::1] freev = np.ascontiguousarray(free, dtype=np.int64)
    cdef double[::1] q_ref = np.ascontiguousarray(q0, dtype=float)
    cdef Py_ssize_t nf = freev.shape[0], ndof = q_ref.shape[0]
    cdef Py_ssize_t nnl = nl_ij.shape[0]
    cdef Py_ssize_t nz = 0 if (z0 is None or relax_tau <= 0.0) else nnl
    cdef Py_ssize_t ny = 2 * nf + nz

    minv_np = 1.0 / np.asarray(masses_dof)[np.asarray(free)]
    cdef double[::1] minv = np.ascontiguousarray(minv_np)

    cdef cnp.ndarray[double, ndim=1] y = np.empty(ny)
    y[:nf] = np.asarray(q0)[np.asarray(free)]
    y[nf:2 * nf] = np.asarray(v0)[np.asarray(free)]
    if nz:
        y[2 * nf:] = z0

    # scratch buffers
    cdef double[::1] qbuf = np.array(q_ref, dtype=float)
    cdef double[::1] vbuf = np.zeros(ndof)
    cdef double[::1] grad = np.zeros(ndof)
    cdef double[::1] fd = np.zeros(ndof)
    cdef double[::1] fp = np.zeros(ndof)
    cdef double[::1] kbsc = np.ones(nnl) if nz else _EMPTY
    cdef double[:, ::1] K = np.zeros((7, ny))
    cdef double[::1] ys = np.zeros(ny)
    cdef double[::1] ynew = np.zeros(ny)
    cdef double[::1] exts = np.zeros(nnl)
    cdef cnp.ndarray[cnp.int8_t, ndim=1] armed = np.empty(nnl, dtype=np.int8)

    cdef int status = STATUS_OK
    cdef Py_ssize_t i, j, stage, e_i, it
    cdef double t = t0, h, energy, err, sc, d0 = 0.0, d1 = 0.0
    cdef double dx, dy

    def _ext_of(double[::1] qv, double[::1] out):
        cdef Py_ssize_t mm, ii, jj
        cdef double ddx, ddy
        for mm in range(nnl):
            ii = nl_ij[mm, 0]; jj = nl_ij[mm, 1]
            ddx = qv[2 * ii] - qv[2 * jj]
            ddy = qv[2 * ii + 1] - qv[2 * jj + 1]
            out[mm] = sqrt(ddx * ddx + ddy * ddy) - nl_s[mm]

    def _rhs(double tt, double[::1] yy, double[::1] out):
        """Fills out with dy/dt; returns status."""
        cdef Py_ssize_t ii
        cdef double p
        cdef int st
        for ii in range(ndof):
            qbuf[ii] = q_ref[ii]
            vbuf[ii] = 0.0
        for ii in range(nf):
            qbuf[freev[ii]] = yy[ii]
            vbuf[freev[ii]] = yy[nf + ii]
        if nz:
            for ii in range(nnl):
                kbsc[ii] = 1.0 - relax_depth * yy[2 * nf + ii]
        st = _elastic_c(qbuf, lin_ij, lin_k, lin_s, nl_ij, nl_kb, nl_alpha,
                        nl_d, nl_s, nl_kc, nl_gap, tor_ijk, tor_k, tor_th0,
                        kbsc if nz else _EMPTY_MV, grad, &energy)
        _damping_c(qbuf, vbuf, pair_ij, pair_s, eta_int, eta_iso, fd)
        for ii in range(ndof):
            fp[ii] = 0.0
        p = _interp_p(tt, tpv, ppv)
        _pressure_c(qbuf, face_edge, face_orient, face_w, p, fp)
        for ii in range(nf):
            out[ii] = yy[nf + ii]
            out[nf + ii] = (fp[freev[ii]] - fd[freev[ii]] - grad[freev[ii]]) * minv[ii]
        if nz:
            _ext_of(qbuf, exts)
            for ii in range(nnl):
                out[2 * nf + ii] = ((1.0 if exts[ii] > nl_thr[ii] else 0.0)
                                    - yy[2 * nf + ii]) / relax_tau
        return st

    # output accumulators (python lists; appended rarely)
    t_grid = [t0]
    Q = [np.asarray(q_ref).copy()]
    v_full0 = np.zeros(ndof)
    v_full0[np.asarray(free)] = np.asarray(v0)[np.asarray(free)]
    V = [v_full0]
    ev_elem, ev_kind, ev_time = [], [], []

    _ext_of(q_ref, exts)
    for i in range(nnl):
        armed[i] = -1 if exts[i] > nl_thr[i] else 1

    status = _rhs(t, y, K[0])
    if status:
        return (np.array(t_grid), np.array(Q), np.array(V),
                np.array(ev_elem, dtype=np.int64), np.array(ev_kind, dtype=np.int8),
                np.array(ev_time), 0, status)

    for i in range(ny):
        d0 += y[i] * y[i]
        d1 += K[0, i] * K[0, i]
    d0 = sqrt(d0 / ny); d1 = sqrt(d1 / ny)
    h = fmin(t_end - t0, 1e-2 if d1 < 1e-12 else fmax(1e-9, 0.01 * d0 / d1))
    h = fmax(h, 1e-9)

    cdef long n_steps = 0
    cdef double next_out = t0 + dt_out
    cdef double theta, lo, hi, mid, em
    cdef int want, crossed
    qa = np.empty(ndof); qb = np.empty(ndof)
    f0q = np.zeros(ndof); f1q = np.zeros(ndof)
    qm = np.empty(ndof)
    cdef double[::1] qav = qa, qbv = qb, f0v = f0q, f1v = f1q, qmv = qm

    while t < t_end:
        if t + h > t_end:
            h = t_end - t
        if h < dt_min:
            status = STATUS_STEP_UNDERFLOW
            break
        status = STATUS_OK
        for stage in range(1, 7):
            for i in range(ny):
                sc = 0.0
                for j in range(stage):
                    sc += DP_A[stage][j] * K[j, i]
                ys[i] = y[i] + h * sc
            status = _rhs(t + DP_C[stage] * h, ys, K[stage])
            if status:
                break
        if status:
            break
        for i in range(ny):
            ynew[i] = ys[i]  # FSAL: stage 7 evaluated the 5th-order solution
        err = 0.0
        for i in range(ny):
            sc = 0.0
            for j in range(7):
                sc += DP_E[j] * K[j, i]
            sc = h * sc / (atol + rtol * fmax(fabs(y[i]), fabs(ynew[i])))
            err += sc * sc
        err = sqrt(err / ny)
        if err <= 1.0:
            # full states at step ends for events/output
            for i in range(ndof):
                qav[i] = q_ref[i]; qbv[i] = q_ref[i]
                f0v[i] = 0.0; f1v[i] = 0.0
            for i in range(nf):
                qav[freev[i]] = y[i]
                qbv[freev[i]] = ynew[i]
                f0v[freev[i]] = K[0, i]
                f1v[freev[i]] = K[6, i]

            _ext_of(qbv, exts)
            for e_i in range(nnl):
                want = armed[e_i]
                crossed = ((want > 0 and exts[e_i] > nl_thr[e_i]) or
                           (want < 0 and exts[e_i] < nl_thr[e_i]))
                if not crossed:
                    continue
                lo = 0.0; hi = 1.0
                for it in range(48):
                    mid = 0.5 * (lo + hi)
                    _hermite_fill(qav, f0v, qbv, f1v, h, mid, qmv)
                    dx = qmv[2 * nl_ij[e_i, 0]] - qmv[2 * nl_ij[e_i, 1]]
                    dy = qmv[2 * nl_ij[e_i, 0] + 1] - qmv[2 * nl_ij[e_i, 1] + 1]
                    em = sqrt(dx * dx + dy * dy) - nl_s[e_i]
                    if (em > nl_thr[e_i]) == (want > 0):
                        hi = mid
                    else:
                        lo = mid
                ev_elem.append(e_i)
                ev_kind.append(want)
                ev_time.append(t + 0.5 * (lo + hi) * h)
                armed[e_i] = -want

            while next_out <= t + h + 1e-15:
                theta = (next_out - t) / h
                if theta < 0.0: theta = 0.0
                if theta > 1.0: theta = 1.0
                _hermite_fill(qav, f0v, qbv, f1v, h, theta, qmv)
                t_grid.append(next_out)
                Q.append(np.asarray(qmv).copy())
                vm = np.zeros(ndof)
                for i in range(nf):
                    vm[freev[i]] = _hermite1(y[nf + i], K[0, nf + i],
                                             ynew[nf + i], K[6, nf + i], h, theta)
                V.append(vm)
                next_out += dt_out

            t = t + h
            for i in range(ny):
                y[i] = ynew[i]
                K[0, i] = K[6, i]
            n_steps += 1
            if err > 1e-10:
                h = h * fmin(5.0, fmax(0.2, 0.9 * pow(err, -0.2)))
            else:
                h = h * 5.0
        else:
            h = h * fmax(0.2, 0.9 * pow(err, -0.2))

    last_t = <double> t_grid[len(t_grid) - 1]
    if last_t < t_end - 1e-12 and status == STATUS_OK:
        t_grid.append(t)
        qfin = np.asarray(q_ref).copy()
        vfin = np.zeros(ndof)
        for i in range(nf):
            qfin[freev[i]] = y[i]
            vfin[freev[i]] = y[nf + i]
        Q.append(qfin); V.append(vfin)

    return (np.array(t_grid), np.array(Q), np.array(V),
            np.array(ev_elem, dtype=np.int64), np.array(ev_kind, dtype=np.int8),
            np.array(ev_time), n_steps, status)


cdef double[::1] _EMPTY_MV = np.empty(0)


cdef inline double _hermite1(double y0, double f0, double y1, double f1,
                             double h, double th) nogil:
    cdef double t2 = th * th, t3 = th * th * th
    return (y0 * (2 * t3 - 3 * t2 + 1) + f0 * h * (t3 - 2 * t2 + th)
            + y1 * (-2 * t3 + 3 * t2) + f1 * h * (t3 - t2))


cdef void _hermite_fill(double[::1] y0, double[::1] f0, double[::1] y1,
                        double[::1] f1, double h, double th, double[::1] out) nogil:
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        out[i] = _hermite1(y0[i], f0[i], y1[i], f1[i], h, th)

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the reference kernels in ``pyref.py``.

Same signatures, same math; loops are fused and run without interpreter
overhead.  Results agree with the reference to floating-point roundoff (the
summation orders differ), which is what the parity tests check.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport copysign, fabs, hypot, sqrt, tanh

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8


def jacobi_sweeps(double[:, ::1] g, double[:, ::1] v, int max_sweeps, double tol):
    """One-sided Jacobi orthogonalization, in place; see the reference twin."""
    cdef Py_ssize_t m = g.shape[0]
    cdef Py_ssize_t n = g.shape[1]
    cdef Py_ssize_t mv = v.shape[0]
    cdef int sweep
    cdef Py_ssize_t p, q, r
    cdef double alpha, beta, gamma, zeta, t, c, s, gp, gq
    cdef bint rotated
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(m):
                    gp = g[r, p]
                    gq = g[r, q]
                    alpha += gp * gp
                    beta += gq * gq
                    gamma += gp * gq
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = copysign(1.0, zeta) / (fabs(zeta) + hypot(1.0, zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    gp = g[r, p]
                    gq = g[r, q]
                    g[r, p] = c * gp - s * gq
                    g[r, q] = s * gp + c * gq
                for r in range(mv):
                    gp = v[r, p]
                    gq = v[r, q]
                    v[r, p] = c * gp - s * gq
                    v[r, q] = s * gp + c * gq
        if not rotated:
            return sweep
    return -1


def forward_pair(
    double[:, ::1] w_vh, double[::1] b_vh,
    double[:, ::1] w_th, double[::1] b_th,
    double[:, ::1] w_time, double[::1] b_time,
    double[:, ::1] w_vo, double[::1] b_vo,
    double[:, ::1] w_to, double[::1] b_to,
    double[:, ::1] xv, double[:, ::1] xt, double[::1] u,
):
    """Batch forward through both branches; see the reference twin."""
    cdef Py_ssize_t batch = xv.shape[0]
    cdef Py_ssize_t d_v = xv.shape[1]
    cdef Py_ssize_t d_t = xt.shape[1]
    cdef Py_ssize_t hidden = w_vh.shape[0]
    cdef Py_ssize_t tdim = w_time.shape[0]
    cdef Py_ssize_t d_out = w_vo.shape[0]

    hv_arr = np.empty((batch, hidden), dtype=np.float64)
    ht_arr = np.empty((batch, hidden), dtype=np.float64)
    tau_arr = np.empty((batch, tdim), dtype=np.float64)
    zv_arr = np.empty((batch, d_out), dtype=np.float64)
    zt_arr = np.empty((batch, d_out), dtype=np.float64)
    nv_arr = np.empty(batch, dtype=np.float64)
    nt_arr = np.empty(batch, dtype=np.float64)
    ev_arr = np.empty((batch, d_out), dtype=np.float64)
    et_arr = np.empty((batch, d_out), dtype=np.float64)

    cdef double[:, ::1] hv = hv_arr
    cdef double[:, ::1] ht = ht_arr
    cdef double[:, ::1] tau = tau_arr
    cdef double[:, ::1] zv = zv_arr
    cdef double[:, ::1] zt = zt_arr
    cdef double[::1] nv = nv_arr
    cdef double[::1] nt = nt_arr
    cdef double[:, ::1] ev = ev_arr
    cdef double[:, ::1] et = et_arr

    cdef Py_ssize_t b, h, i, o, t
    cdef double acc, sv, st

    for b in range(batch):
        for h in range(hidden):
            acc = b_vh[h]
            for i in range(d_v):
                acc += w_vh[h, i] * xv[b, i]
            hv[b, h] = tanh(acc)
        for h in range(hidden):
            acc = b_th[h]
            for i in range(d_t):
                acc += w_th[h, i] * xt[b, i]
            ht[b, h] = tanh(acc)
        for t in range(tdim):
            tau[b, t] = tanh(u[b] * w_time[t, 0] + b_time[t])
        sv = 0.0
        st = 0.0
        for o in range(d_out):
            acc = b_vo[o]
            for h in range(hidden):
                acc += w_vo[o, h] * hv[b, h]
            for t in range(tdim):
                acc += w_vo[o, hidden + t] * tau[b, t]
            acc = tanh(acc)
            zv[b, o] = acc
            sv += acc * acc
            acc = b_to[o]
            for h in range(hidden):
                acc += w_to[o, h] * ht[b, h]
            for t in range(tdim):
                acc += w_to[o, hidden + t] * tau[b, t]
            acc = tanh(acc)
            zt[b, o] = acc
            st += acc * acc
        nv[b] = sqrt(sv)
        nt[b] = sqrt(st)
        for o in range(d_out):
            ev[b, o] = zv[b, o] / nv[b]
            et[b, o] = zt[b, o] / nt[b]

    return (hv_arr, ht_arr, tau_arr, zv_arr, zt_arr, nv_arr, nt_arr, ev_arr, et_arr)


def accumulate_triplets(
    double[:, ::1] ev, double[:, ::1] et,
    i64[::1] a_idx, u8[::1] a_vis, i64[::1] o_idx,
    double[::1] weight, double[::1] margin, u8[::1] is_intra,
):
    """Hinge sums and embedding gradients; see the reference twin."""
    cdef Py_ssize_t n_trip = a_idx.shape[0]
    cdef Py_ssize_t d = ev.shape[1]

    d_ev_arr = np.zeros((ev.shape[0], d), dtype=np.float64)
    d_et_arr = np.zeros((et.shape[0], d), dtype=np.float64)
    cdef double[:, ::1] d_ev = d_ev_arr
    cdef double[:, ::1] d_et = d_et_arr

    cdef double inter_sum = 0.0
    cdef double intra_sum = 0.0
    cdef int active = 0
    cdef Py_ssize_t k, j, a, o
    cdef double w, s_ap, s_an, viol

    for k in range(n_trip):
        w = weight[k]
        if w <= 0.0:
            continue
        a = a_idx[k]
        o = o_idx[k]
        s_ap = 0.0
        s_an = 0.0
        if a_vis[k]:
            for j in range(d):
                s_ap += ev[a, j] * et[a, j]
                s_an += ev[a, j] * et[o, j]
        else:
            for j in range(d):
                s_ap += et[a, j] * ev[a, j]
                s_an += et[a, j] * ev[o, j]
        viol = margin[k] - s_ap + s_an
        if viol <= 0.0:
            continue
        if is_intra[k]:
            intra_sum += w * viol
        else:
            inter_sum += w * viol
        active += 1
        if a_vis[k]:
            for j in range(d):
                d_ev[a, j] += w * (et[o, j] - et[a, j])
                d_et[a, j] -= w * ev[a, j]
                d_et[o, j] += w * ev[a, j]
        else:
            for j in range(d):
                d_et[a, j] += w * (ev[o, j] - ev[a, j])
                d_ev[a, j] -= w * et[a, j]
                d_ev[o, j] += w * et[a, j]

    return inter_sum, intra_sum, active, d_ev_arr, d_et_arr


def backward_pair(
    double[:, ::1] w_vo, double[:, ::1] w_to,
    double[:, ::1] xv, double[:, ::1] xt, double[::1] u,
    double[:, ::1] hv, double[:, ::1] ht, double[:, ::1] tau,
    double[:, ::1] zv, double[:, ::1] zt,
    double[::1] nv, double[::1] nt,
    double[:, ::1] ev, double[:, ::1] et,
    double[:, ::1] d_ev, double[:, ::1] d_et,
):
    """Embedding gradients back to parameter gradients; see the reference twin."""
    cdef Py_ssize_t batch = xv.shape[0]
    cdef Py_ssize_t d_v = xv.shape[1]
    cdef Py_ssize_t d_t = xt.shape[1]
    cdef Py_ssize_t hidden = hv.shape[1]
    cdef Py_ssize_t tdim = tau.shape[1]
    cdef Py_ssize_t d_out = zv.shape[1]

    g_wvh_arr = np.zeros((hidden, d_v), dtype=np.float64)
    g_bvh_arr = np.zeros(hidden, dtype=np.float64)
    g_wth_arr = np.zeros((hidden, d_t), dtype=np.float64)
    g_bth_arr = np.zeros(hidden, dtype=np.float64)
    g_wtime_arr = np.zeros((tdim, 1), dtype=np.float64)
    g_btime_arr = np.zeros(tdim, dtype=np.float64)
    g_wvo_arr = np.zeros((d_out, hidden + tdim), dtype=np.float64)
    g_bvo_arr = np.zeros(d_out, dtype=np.float64)
    g_wto_arr = np.zeros((d_out, hidden + tdim), dtype=np.float64)
    g_bto_arr = np.zeros(d_out, dtype=np.float64)

    cdef double[:, ::1] g_wvh = g_wvh_arr
    cdef double[::1] g_bvh = g_bvh_arr
    cdef double[:, ::1] g_wth = g_wth_arr
    cdef double[::1] g_bth = g_bth_arr
    cdef double[:, ::1] g_wtime = g_wtime_arr
    cdef double[::1] g_btime = g_btime_arr
    cdef double[:, ::1] g_wvo = g_wvo_arr
    cdef double[::1] g_bvo = g_bvo_arr
    cdef double[:, ::1] g_wto = g_wto_arr
    cdef double[::1] g_bto = g_bto_arr

    # per-row scratch
    dav_arr = np.empty(d_out, dtype=np.float64)
    dat_arr = np.empty(d_out, dtype=np.float64)
    dc_arr = np.empty(hidden + tdim, dtype=np.float64)
    dtau_arr = np.empty(tdim, dtype=np.float64)
    cdef double[::1] dav = dav_arr
    cdef double[::1] dat = dat_arr
    cdef double[::1] dc = dc_arr
    cdef double[::1] dtau_row = dtau_arr

    cdef Py_ssize_t b, o, h, i, t
    cdef double dotv, dott, dz, da, datime

    for b in range(batch):
        dotv = 0.0
        dott = 0.0
        for o in range(d_out):
            dotv += d_ev[b, o] * ev[b, o]
            dott += d_et[b, o] * et[b, o]

        for o in range(d_out):
            dz = (d_ev[b, o] - dotv * ev[b, o]) / nv[b]
            da = dz * (1.0 - zv[b, o] * zv[b, o])
            dav[o] = da
            g_bvo[o] += da
            for h in range(hidden):
                g_wvo[o, h] += da * hv[b, h]
            for t in range(tdim):
                g_wvo[o, hidden + t] += da * tau[b, t]
        for h in range(hidden + tdim):
            dc[h] = 0.0
        for o in range(d_out):
            da = dav[o]
            for h in range(hidden + tdim):
                dc[h] += da * w_vo[o, h]
        for t in range(tdim):
            dtau_row[t] = dc[hidden + t]
        for h in range(hidden):
            da = dc[h] * (1.0 - hv[b, h] * hv[b, h])
            g_bvh[h] += da
            for i in range(d_v):
                g_wvh[h, i] += da * xv[b, i]

        for o in range(d_out):
            dz = (d_et[b, o] - dott * et[b, o]) / nt[b]
            da = dz * (1.0 - zt[b, o] * zt[b, o])
            dat[o] = da
            g_bto[o] += da
            for h in range(hidden):
                g_wto[o, h] += da * ht[b, h]
            for t in range(tdim):
                g_wto[o, hidden + t] += da * tau[b, t]
        for h in range(hidden + tdim):
            dc[h] = 0.0
        for o in range(d_out):
            da = dat[o]
            for h in range(hidden + tdim):
                dc[h] += da * w_to[o, h]
        for t in range(tdim):
            dtau_row[t] += dc[hidden + t]
        for h in range(hidden):
            da = dc[h] * (1.0 - ht[b, h] * ht[b, h])
            g_bth[h] += da
            for i in range(d_t):
                g_wth[h, i] += da * xt[b, i]

        for t in range(tdim):
            datime = dtau_row[t] * (1.0 - tau[b, t] * tau[b, t])
            g_wtime[t, 0] += datime * u[b]
            g_btime[t] += datime

    return (
        g_wvh_arr, g_bvh_arr, g_wth_arr, g_bth_arr,
        g_wtime_arr, g_btime_arr, g_wvo_arr, g_bvo_arr,
        g_wto_arr, g_bto_arr,
    )

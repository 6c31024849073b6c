# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-row kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

N_CELLS = 8


cdef inline double _expit(double t) nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


def expit(t):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = tv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _expit(tv[i])
    return out.reshape(np.shape(t))


def propensity_weights(r, lin, yfill, double zeta):
    cdef const double[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[::1] lv = np.ascontiguousarray(lin, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(yfill, dtype=np.float64)
    cdef Py_ssize_t i, n = rv.shape[0]
    cdef double pi, min_pi = 1.0
    w = np.empty(n, dtype=np.float64)
    cdef double[::1] wv = w
    with nogil:
        for i in range(n):
            if rv[i] == 1.0:
                pi = _expit(lv[i] + zeta * yv[i])
                wv[i] = 1.0 / pi
                if pi < min_pi:
                    min_pi = pi
            else:
                wv[i] = 0.0
    return w, min_pi


def dr_terms(r, yfill, lin_base, lin_outcome, double zeta):
    cdef const double[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(yfill, dtype=np.float64)
    cdef const double[::1] lb = np.ascontiguousarray(lin_base, dtype=np.float64)
    cdef const double[::1] lo = np.ascontiguousarray(lin_outcome, dtype=np.float64)
    cdef Py_ssize_t i, n = rv.shape[0]
    cdef double pi, wi, mi, min_pi = 1.0
    w = np.empty(n, dtype=np.float64)
    m = np.empty(n, dtype=np.float64)
    g = np.empty(n, dtype=np.float64)
    cdef double[::1] wv = w, mv = m, gv = g
    with nogil:
        for i in range(n):
            mi = _expit(lo[i] - zeta)
            if rv[i] == 1.0:
                pi = _expit(lb[i] + zeta * yv[i])
                wi = 1.0 / pi
                if pi < min_pi:
                    min_pi = pi
            else:
                wi = 0.0
            wv[i] = wi
            mv[i] = mi
            gv[i] = wi * (yv[i] - mi) + mi
    return w, m, g, min_pi


def efficiency_cells(q1, lam0, lam1, th0, th1, double zeta):
    cdef const double[::1] qv = np.ascontiguousarray(q1, dtype=np.float64)
    cdef const double[::1] l0 = np.ascontiguousarray(lam0, dtype=np.float64)
    cdef const double[::1] l1 = np.ascontiguousarray(lam1, dtype=np.float64)
    cdef const double[::1] t0 = np.ascontiguousarray(th0, dtype=np.float64)
    cdef const double[::1] t1 = np.ascontiguousarray(th1, dtype=np.float64)
    cdef Py_ssize_t i, n = qv.shape[0]
    W = np.empty((n, N_CELLS), dtype=np.float64)
    P = np.empty((n, N_CELLS), dtype=np.float64)
    G = np.empty((n, N_CELLS), dtype=np.float64)
    cdef double[:, ::1] Wv = W, Pv = P, Gv = G
    cdef double q[2]
    cdef double lam[2]
    cdef double th[2]
    cdef double m[2]
    cdef double pis[2][2]
    cdef double mu[2]
    cdef double p, rho, ey, dz, a, d, pi, py
    cdef int z, y, c1
    with nogil:
        for i in range(n):
            q[1] = qv[i]
            q[0] = 1.0 - qv[i]
            lam[0] = l0[i]
            lam[1] = l1[i]
            th[0] = t0[i]
            th[1] = t1[i]
            ey = 0.0
            for z in range(2):
                p = _expit(th[z])
                m[z] = _expit(th[z] - zeta)
                pis[z][0] = _expit(lam[z])
                pis[z][1] = _expit(lam[z] + zeta)
                rho = 1.0 / (p / pis[z][1] + (1.0 - p) / pis[z][0])
                mu[z] = p * rho / pis[z][1]
                ey = ey + q[z] * mu[z]
            for z in range(2):
                dz = z - qv[i]
                a = (m[z] - ey) * dz
                for y in range(2):
                    pi = pis[z][y]
                    py = mu[z] if y == 1 else 1.0 - mu[z]
                    d = (y - ey) * dz
                    c1 = z * 4 + y * 2 + 1
                    Wv[i, c1] = (d - (1.0 - pi) * a) / pi
                    Wv[i, c1 - 1] = a
                    Pv[i, c1] = q[z] * py * pi
                    Pv[i, c1 - 1] = q[z] * py * (1.0 - pi)
                    Gv[i, c1] = (y - m[z]) / pi + m[z]
                    Gv[i, c1 - 1] = m[z]
    return W, P, G

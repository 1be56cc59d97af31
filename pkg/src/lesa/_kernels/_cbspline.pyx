# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled B-spline kernels: local de Boor triangle per evaluation point.

Only the k+1 non-zero basis functions of the knot span are computed, then
scattered into the dense output row.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef Py_ssize_t _find_span(const double[::1] t, Py_ssize_t order, Py_ssize_t nb, double z) nogil:
    # span i with t[i] <= z < t[i+1], restricted to order <= i < nb
    cdef Py_ssize_t lo = order, hi = nb, mid
    if z >= t[nb]:
        return nb - 1
    if z <= t[order]:
        return order
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if z < t[mid]:
            hi = mid
        else:
            lo = mid
    return lo


cdef void _local(const double[::1] t, Py_ssize_t span, Py_ssize_t order, double z,
                 double* N, double* Nlow, double* left, double* right) nogil:
    # N[0..order] at degree `order`; Nlow[0..order-1] at degree order-1
    cdef Py_ssize_t j, r
    cdef double saved, temp
    N[0] = 1.0
    for j in range(1, order + 1):
        left[j] = z - t[span + 1 - j]
        right[j] = t[span + j] - z
        if j == order:
            for r in range(order):
                Nlow[r] = N[r]
        saved = 0.0
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    if order == 0:
        Nlow[0] = 0.0


def basis(knots, int order, z):
    B, _ = _eval(knots, order, z, False)
    return B


def basis_and_deriv(knots, int order, z):
    return _eval(knots, order, z, True)


def _eval(knots, int order, z, bint want_deriv):
    cdef const double[::1] t = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] zz = np.ascontiguousarray(np.atleast_1d(z), dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0]
    cdef Py_ssize_t nb = t.shape[0] - order - 1
    out = np.zeros((n, nb))
    dout = np.zeros((n, nb)) if want_deriv else None
    cdef double[:, ::1] B = out
    cdef double[:, ::1] dB
    if want_deriv:
        dB = dout
    cdef double N[32]
    cdef double Nlow[32]
    cdef double left[32]
    cdef double right[32]
    cdef Py_ssize_t i, r, span, j
    cdef double zi, d1, d2, c
    if order > 30:
        raise ValueError("spline order too large")
    with nogil:
        for i in range(n):
            zi = zz[i]
            if zi < t[0] or zi > t[t.shape[0] - 1]:
                continue
            span = _find_span(t, order, nb, zi)
            _local(t, span, order, zi, N, Nlow, left, right)
            for r in range(order + 1):
                B[i, span - order + r] = N[r]
            if want_deriv and order > 0:
                # B'_j = k/(t[j+k]-t[j]) B_{j,k-1} - k/(t[j+k+1]-t[j+1]) B_{j+1,k-1}
                for r in range(order + 1):
                    j = span - order + r
                    c = 0.0
                    if r >= 1:
                        d1 = t[j + order] - t[j]
                        if d1 != 0.0:
                            c = c + order * Nlow[r - 1] / d1
                    if r < order:
                        d2 = t[j + order + 1] - t[j + 1]
                        if d2 != 0.0:
                            c = c - order * Nlow[r] / d2
                    dB[i, j] = c
    return out, dout

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled semi-Lagrangian backward sweep. See ``_sweep_py.sweep`` for the contract."""

from libc.math cimport INFINITY


def sweep(double[:, ::1] values, double[:, ::1] taint,
          long long[:, ::1] base, double[:, :, ::1] frac,
          unsigned char[:, ::1] outside, long long[::1] strides):
    cdef Py_ssize_t n_slices = values.shape[0]
    cdef Py_ssize_t n_nodes = base.shape[0]
    cdef Py_ssize_t n_dir = base.shape[1]
    cdef Py_ssize_t d = frac.shape[2]
    cdef Py_ssize_t k, i, j, jbest
    cdef long long b0, s0, s1
    cdef double a, b, val, best, c
    cdef bint clamped
    cdef double[::1] v_next
    cdef double[::1] c_next

    s0 = strides[0]
    s1 = strides[1] if d > 1 else 0
    for k in range(n_slices - 2, -1, -1):
        v_next = values[k + 1]
        c_next = taint[k + 1]
        for i in range(n_nodes):
            best = INFINITY
            jbest = 0
            clamped = False
            for j in range(n_dir):
                if outside[i, j]:
                    clamped = True
                b0 = base[i, j]
                a = frac[i, j, 0]
                if d == 1:
                    val = 0.0
                    val += (1.0 - a) * v_next[b0]
                    val += a * v_next[b0 + s0]
                else:
                    b = frac[i, j, 1]
                    val = 0.0
                    val += (1.0 - a) * (1.0 - b) * v_next[b0]
                    val += a * (1.0 - b) * v_next[b0 + s0]
                    val += (1.0 - a) * b * v_next[b0 + s1]
                    val += a * b * v_next[b0 + s0 + s1]
                if val < best:
                    best = val
                    jbest = j
            values[k, i] = best
            if clamped:
                taint[k, i] = 1.0
                continue
            b0 = base[i, jbest]
            a = frac[i, jbest, 0]
            c = 0.0
            if d == 1:
                c += (1.0 - a) * c_next[b0]
                c += a * c_next[b0 + s0]
            else:
                b = frac[i, jbest, 1]
                c += (1.0 - a) * (1.0 - b) * c_next[b0]
                c += a * (1.0 - b) * c_next[b0 + s0]
                c += (1.0 - a) * b * c_next[b0 + s1]
                c += a * b * c_next[b0 + s0 + s1]
            taint[k, i] = c

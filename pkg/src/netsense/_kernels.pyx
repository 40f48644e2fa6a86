# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled region-code kernels; see ``_kernels_py`` for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite

cnp.import_array()


cdef inline signed char _code(double v, const double[:] bounds, Py_ssize_t nb) noexcept nogil:
    cdef signed char c = 0
    cdef Py_ssize_t i
    for i in range(nb):
        if v >= bounds[i]:
            c += 1
    return c


cdef bint _fill_codes(const double[:, :] p, const double[:] b, signed char[:, :] o) noexcept nogil:
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1], nb = b.shape[0]
    cdef Py_ssize_t i, j
    cdef bint bad = False
    for i in range(m):
        for j in range(n):
            if not isfinite(p[i, j]):
                bad = True
            o[i, j] = _code(p[i, j], b, nb)
    return bad


def region_codes(pre, boundaries):
    arr = np.ascontiguousarray(pre, dtype=np.float64)
    shape = arr.shape
    flat = arr.reshape(1, -1) if arr.ndim == 1 else arr.reshape(-1, arr.shape[arr.ndim - 1])
    b = np.ascontiguousarray(boundaries, dtype=np.float64)
    out = np.empty(flat.shape, dtype=np.int8)
    cdef bint bad
    if flat.size:
        bad = _fill_codes(flat, b, out)
        if bad:
            raise FloatingPointError("non-finite preactivation")
    return out.reshape(shape)


def accumulate_transitions(pre, boundaries, prev, cnp.int64_t[:] per_neuron,
                           cnp.int64_t[:] per_arc):
    cdef const double[:, :] p = np.ascontiguousarray(pre, dtype=np.float64)
    cdef const double[:] b = np.ascontiguousarray(boundaries, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1], nb = b.shape[0]
    if m == 0:
        return prev
    last = np.empty(n, dtype=np.int8)
    cur = np.empty(n, dtype=np.int8)
    cdef signed char[:] lv = last
    cdef signed char[:] cv = cur
    cdef signed char[:] pv
    cdef Py_ssize_t i, j, start
    cdef long long arc, dlt
    cdef bint bad = False
    if prev is None:
        start = 1
        per_arc[0] = 0
        with nogil:
            for j in range(n):
                if not isfinite(p[0, j]):
                    bad = True
                lv[j] = _code(p[0, j], b, nb)
    else:
        start = 0
        pv = prev
        for j in range(n):
            lv[j] = pv[j]
    with nogil:
        for i in range(start, m):
            arc = 0
            for j in range(n):
                if not isfinite(p[i, j]):
                    bad = True
                cv[j] = _code(p[i, j], b, nb)
                dlt = cv[j] - lv[j]
                if dlt < 0:
                    dlt = -dlt
                per_neuron[j] += dlt
                arc += dlt
                lv[j] = cv[j]
            per_arc[i] = arc
    if bad:
        raise FloatingPointError("non-finite preactivation")
    return last


def neighbor_mismatch_mask(codes):
    cdef const signed char[:, :, :] c = np.ascontiguousarray(codes, dtype=np.int8)
    cdef Py_ssize_t rows = c.shape[0], cols = c.shape[1], n = c.shape[2]
    out = np.zeros((rows, cols), dtype=np.uint8)
    cdef unsigned char[:, :] o = out
    cdef Py_ssize_t r, q, k
    with nogil:
        for r in range(rows):
            for q in range(cols):
                if r + 1 < rows:
                    for k in range(n):
                        if c[r, q, k] != c[r + 1, q, k]:
                            o[r, q] = 1
                            o[r + 1, q] = 1
                            break
                if q + 1 < cols:
                    for k in range(n):
                        if c[r, q, k] != c[r, q + 1, k]:
                            o[r, q] = 1
                            o[r, q + 1] = 1
                            break
    return out

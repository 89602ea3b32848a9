# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled beam-search kernel.

Mirrors ``dvs2s._fastops_py.topk_flat`` exactly in semantics; the numpy
version is the reference the test-suite compares against.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline bint _worse(double va, Py_ssize_t ia, double vb, Py_ssize_t ib) nogil:
    # a ranks below b: lower value, or equal value and larger flat index
    return va < vb or (va == vb and ia > ib)


cdef void _sift_down(double* vals, Py_ssize_t* idx, Py_ssize_t size, Py_ssize_t pos) nogil:
    cdef Py_ssize_t child, worst
    cdef double tv
    cdef Py_ssize_t ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            return
        worst = child
        if child + 1 < size and _worse(vals[child + 1], idx[child + 1], vals[child], idx[child]):
            worst = child + 1
        if _worse(vals[worst], idx[worst], vals[pos], idx[pos]):
            tv = vals[pos]; vals[pos] = vals[worst]; vals[worst] = tv
            ti = idx[pos]; idx[pos] = idx[worst]; idx[worst] = ti
            pos = worst
        else:
            return


def topk_flat(const real[:, ::1] scores, Py_ssize_t k):
    """Flat indices of the ``k`` best finite entries.

    Ordered by value descending, then flat index ascending. Non-finite
    entries are never returned.
    """
    cdef Py_ssize_t rows = scores.shape[0], cols = scores.shape[1]
    cdef Py_ssize_t i, j, flat, size = 0, pos, parent
    cdef double v, tv
    cdef Py_ssize_t ti
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    heap_v_arr = np.empty(k, dtype=np.float64)
    heap_i_arr = np.empty(k, dtype=np.intp)
    cdef double[:] heap_v = heap_v_arr
    cdef Py_ssize_t[:] heap_i = heap_i_arr
    cdef double* hv = &heap_v[0]
    cdef Py_ssize_t* hi = &heap_i[0]
    with nogil:
        for i in range(rows):
            for j in range(cols):
                v = scores[i, j]
                if not isfinite(v):
                    continue
                flat = i * cols + j
                if size < k:
                    # push, sift up (root holds the worst kept entry)
                    pos = size
                    hv[pos] = v
                    hi[pos] = flat
                    size += 1
                    while pos > 0:
                        parent = (pos - 1) // 2
                        if _worse(hv[pos], hi[pos], hv[parent], hi[parent]):
                            tv = hv[pos]; hv[pos] = hv[parent]; hv[parent] = tv
                            ti = hi[pos]; hi[pos] = hi[parent]; hi[parent] = ti
                            pos = parent
                        else:
                            break
                elif _worse(hv[0], hi[0], v, flat):
                    hv[0] = v
                    hi[0] = flat
                    _sift_down(hv, hi, size, 0)
    vals = heap_v_arr[:size]
    idx = heap_i_arr[:size].astype(np.int64)
    order = np.lexsort((idx, -vals))
    return idx[order]

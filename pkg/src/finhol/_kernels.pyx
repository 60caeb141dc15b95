# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled jet convolution kernels.

Every array is laid out as ``(ncoef, batch)``, C-contiguous.  Triples
``(ti[t], tj[t], tk[t])`` enumerate all index pairs whose multi-indices sum
to the output multi-index ``tk[t]``; they are sorted by ``tk`` and
``offsets[k]:offsets[k+1]`` is the slice belonging to output ``k``.
"""
from libc.math cimport sqrt as csqrt


def mul(const double[:, ::1] a, const double[:, ::1] b, double[:, ::1] out,
        const int[::1] ti, const int[::1] tj, const int[::1] tk, Py_ssize_t ntri):
    cdef Py_ssize_t t, s, i, j, k
    cdef Py_ssize_t nb = out.shape[1]
    out[:, :] = 0.0
    for t in range(ntri):
        i = ti[t]
        j = tj[t]
        k = tk[t]
        for s in range(nb):
            out[k, s] += a[i, s] * b[j, s]


def div(const double[:, ::1] a, const double[:, ::1] b, double[:, ::1] out,
        const int[::1] ti, const int[::1] tj, const int[::1] offsets, Py_ssize_t nout):
    # out[k] = (a[k] - sum_{i != 0} b[i] out[j]) / b[0]; every j < k when i != 0
    cdef Py_ssize_t t, s, i, j, k
    cdef Py_ssize_t nb = out.shape[1]
    for k in range(nout):
        for s in range(nb):
            out[k, s] = a[k, s]
        for t in range(offsets[k], offsets[k + 1]):
            i = ti[t]
            if i == 0:
                continue
            j = tj[t]
            for s in range(nb):
                out[k, s] -= b[i, s] * out[j, s]
        for s in range(nb):
            out[k, s] /= b[0, s]


def sqrt(const double[:, ::1] a, double[:, ::1] out,
         const int[::1] ti, const int[::1] tj, const int[::1] offsets, Py_ssize_t nout):
    # out[k] = (a[k] - sum_{i, j != 0} out[i] out[j]) / (2 out[0])
    cdef Py_ssize_t t, s, i, j, k
    cdef Py_ssize_t nb = out.shape[1]
    for s in range(nb):
        out[0, s] = csqrt(a[0, s])
    for k in range(1, nout):
        for s in range(nb):
            out[k, s] = a[k, s]
        for t in range(offsets[k], offsets[k + 1]):
            i = ti[t]
            j = tj[t]
            if i == 0 or j == 0:
                continue
            for s in range(nb):
                out[k, s] -= out[i, s] * out[j, s]
        for s in range(nb):
            out[k, s] /= 2.0 * out[0, s]

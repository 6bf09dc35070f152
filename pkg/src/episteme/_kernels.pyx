# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense MLP kernels.

Fused bias + activation around BLAS ``dgemm`` so that a whole network pass is a
single Python call. Row-major operands are handed to column-major BLAS as
their transposes.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"

# above this many outputs per layer numpy's vectorised tanh beats the scalar libm loop
cdef Py_ssize_t TANH_VECTOR_MIN = 256


cdef void _dense(double[:, ::1] a, double[:, ::1] w, double[::1] b,
                 double[:, ::1] out, int code) noexcept nogil:
    cdef int batch = a.shape[0]
    cdef int n_in = a.shape[1]
    cdef int n_out = w.shape[0]
    cdef int i, j
    cdef double alpha = 1.0
    cdef double beta = 1.0
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double v
    for i in range(batch):
        for j in range(n_out):
            out[i, j] = b[j]
    # out^T (n_out, batch) += W (n_out, n_in) @ a^T (n_in, batch)
    dgemm(&ta, &tb, &n_out, &batch, &n_in, &alpha, &w[0, 0], &n_in,
          &a[0, 0], &n_in, &beta, &out[0, 0], &n_out)
    if code == 1:
        for i in range(batch):
            for j in range(n_out):
                out[i, j] = tanh(out[i, j])
    elif code == 2:
        for i in range(batch):
            for j in range(n_out):
                v = out[i, j]
                out[i, j] = v if v > 0.0 else 0.0


def mlp_forward(x, list weights, list biases, codes):
    cdef Py_ssize_t layer, n = len(weights)
    cdef int code
    cdef double[:, ::1] a = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] out
    cdef double[:, ::1] w
    cdef double[::1] b
    acts = [np.asarray(a)]
    for layer in range(n):
        w = weights[layer]
        b = biases[layer]
        arr = np.empty((a.shape[0], w.shape[0]), dtype=np.float64)
        out = arr
        code = <int>codes[layer]
        if a.shape[0] > 0:
            if code == 1 and a.shape[0] * w.shape[0] >= TANH_VECTOR_MIN:
                _dense(a, w, b, out, 0)
                np.tanh(arr, out=arr)
            else:
                _dense(a, w, b, out, code)
        acts.append(arr)
        a = out
    return acts


def mlp_backward(list acts, list weights, codes, grad_out):
    cdef Py_ssize_t layer, n = len(weights)
    cdef int i, j, batch, n_in, n_out, code
    cdef double alpha = 1.0
    cdef double beta = 0.0
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double[:, ::1] delta = np.array(grad_out, dtype=np.float64, order="C")
    cdef double[:, ::1] out
    cdef double[:, ::1] a_in
    cdef double[:, ::1] w
    cdef double[:, ::1] dw
    cdef double[::1] db
    cdef double[:, ::1] da
    cdef double o
    dws = [None] * n
    dbs = [None] * n
    for layer in range(n - 1, -1, -1):
        out = acts[layer + 1]
        a_in = acts[layer]
        w = weights[layer]
        code = <int>codes[layer]
        batch = delta.shape[0]
        n_out = w.shape[0]
        n_in = w.shape[1]
        dw_arr = np.zeros((n_out, n_in), dtype=np.float64)
        db_arr = np.zeros(n_out, dtype=np.float64)
        da_arr = np.zeros((batch, n_in), dtype=np.float64)
        dw = dw_arr
        db = db_arr
        da = da_arr
        if batch > 0:
            with nogil:
                if code == 1:
                    for i in range(batch):
                        for j in range(n_out):
                            o = out[i, j]
                            delta[i, j] = delta[i, j] * (1.0 - o * o)
                elif code == 2:
                    for i in range(batch):
                        for j in range(n_out):
                            if not out[i, j] > 0.0:
                                delta[i, j] = 0.0
                for i in range(batch):
                    for j in range(n_out):
                        db[j] += delta[i, j]
                # dW^T (n_in, n_out) = a^T (n_in, batch) @ delta (batch, n_out)
                dgemm(&tn, &tt, &n_in, &n_out, &batch, &alpha, &a_in[0, 0], &n_in,
                      &delta[0, 0], &n_out, &beta, &dw[0, 0], &n_in)
                # da^T (n_in, batch) = W^T (n_in, n_out) @ delta^T (n_out, batch)
                dgemm(&tn, &tn, &n_in, &batch, &n_out, &alpha, &w[0, 0], &n_in,
                      &delta[0, 0], &n_out, &beta, &da[0, 0], &n_in)
        dws[layer] = dw_arr
        dbs[layer] = db_arr
        delta = da
    return dws, dbs, np.asarray(delta)

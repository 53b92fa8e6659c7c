# Compiled MLP / optimizer kernels. Same contracts as _kernels_py.py.
# Matrices are row-major; BLAS is column-major, so every product is issued
# as its transpose (C^T = B^T A^T).

import numpy as np

from libc.math cimport sqrt, pow
from scipy.linalg.cython_blas cimport dgemm


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       double* A, int lda, double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    cdef double one = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &one, A, &lda, B, &ldb, &beta, C, &ldc)


def layer_views(flat, sizes):
    views = []
    off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = flat[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = flat[off:off + n_out]
        off += n_out
        views.append((W, b))
    return views


def mlp_forward(double[::1] flat, sizes, double[:, ::1] x):
    cdef int n_layers = len(sizes) - 1
    cdef int batch = x.shape[0]
    cdef int n_in, n_out, i, r, c
    cdef Py_ssize_t off = 0, j, total
    cdef double[:, ::1] h = x
    cdef double[:, ::1] out
    cdef double* b
    cdef double* po
    acts = [np.asarray(x)]
    for i in range(n_layers):
        n_in = sizes[i]
        n_out = sizes[i + 1]
        arr = np.empty((batch, n_out))
        out = arr
        b = &flat[off + n_in * n_out]
        with nogil:
            for r in range(batch):
                for c in range(n_out):
                    out[r, c] = b[c]
            if batch > 0:
                _gemm(b'N', b'N', n_out, batch, n_in, &flat[off], n_out,
                      &h[0, 0], n_in, 1.0, &out[0, 0], n_out)
            if i < n_layers - 1 and batch > 0:
                po = &out[0, 0]
                total = <Py_ssize_t>batch * n_out
                for j in range(total):
                    po[j] = 0.0 if po[j] < 0.0 else po[j]
        off += n_in * n_out + n_out
        acts.append(arr)
        h = out
    return acts


def mlp_backward(double[::1] flat, sizes, acts, double[:, ::1] dout, grad_out, bint need_dx):
    cdef int n_layers = len(sizes) - 1
    cdef int batch = dout.shape[0]
    cdef int n_in, n_out, i, r, c
    cdef Py_ssize_t off, j, total
    cdef double* pa
    cdef double* pd
    cdef double* pg
    cdef double[:, ::1] d = dout
    cdef double[:, ::1] a
    cdef double[:, ::1] dx
    cdef double[::1] g
    cdef bint want_grad = grad_out is not None
    if want_grad:
        g = grad_out
    offsets = []
    off = 0
    for i in range(n_layers):
        offsets.append(off)
        off += sizes[i] * sizes[i + 1] + sizes[i + 1]
    for i in range(n_layers - 1, -1, -1):
        n_in = sizes[i]
        n_out = sizes[i + 1]
        off = offsets[i]
        a = acts[i]
        if want_grad:
            with nogil:
                _gemm(b'N', b'T', n_out, n_in, batch, &d[0, 0], n_out,
                      &a[0, 0], n_in, 0.0, &g[off], n_out)
                pg = &g[off + n_in * n_out]
                pd = &d[0, 0]
                for c in range(n_out):
                    pg[c] = 0.0
                for r in range(batch):
                    for c in range(n_out):
                        pg[c] += pd[r * n_out + c]
        if i == 0 and not need_dx:
            return None
        arr = np.empty((batch, n_in))
        dx = arr
        with nogil:
            _gemm(b'T', b'N', n_in, batch, n_out, &flat[off], n_out,
                  &d[0, 0], n_out, 0.0, &dx[0, 0], n_in)
            if i > 0:
                pa = &a[0, 0]
                pd = &dx[0, 0]
                total = <Py_ssize_t>batch * n_in
                for j in range(total):
                    pd[j] = pd[j] if pa[j] > 0.0 else 0.0
        d = dx
    return np.asarray(d)


def adam_update(double[::1] flat, double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long step):
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, <double>step)
    cdef double bc2 = 1.0 - pow(beta2, <double>step)
    cdef double gi
    with nogil:
        for i in range(n):
            gi = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            flat[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)


def polyak_update(double[::1] target, double[::1] online, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    cdef double keep = 1.0 - tau
    with nogil:
        for i in range(n):
            target[i] = keep * target[i] + tau * online[i]

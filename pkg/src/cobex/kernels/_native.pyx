# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Same contract as ``cobex.kernels._numpy``: 2-D float64 C-contiguous
matrices, int64 index vectors, uint8 masks. Matrix products go through BLAS
dgemm (row-major arrays passed as their column-major transposes); the
transcendental forwards delegate to numpy's SIMD loops, which beat scalar
libm calls by an order of magnitude; everything else is a typed loop.

Backward kernels accumulate into the caller's adjoint buffer and return it;
passed ``None`` they allocate and write the first contribution directly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, INFINITY
from scipy.linalg.cython_blas cimport dgemm

NAME = "native"


cdef inline void _dgemm(char ta, char tb, int m, int n, int k,
                        double alpha, double *a, int lda,
                        double *b, int ldb, double beta,
                        double *c, int ldc) noexcept nogil:
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    if m > 0 and n > 0 and k > 0:
        # row-major C = A @ B  <=>  col-major C^T = B^T @ A^T
        _dgemm(b'N', b'N', n, m, k, 1.0, &b[0, 0], n, &a[0, 0], k, 0.0, &c[0, 0], n)
    elif m > 0 and n > 0:
        out[:] = 0.0
    return out


def matmul_acc_da(double[:, ::1] dc, double[:, ::1] b, da):
    # da += dc @ b.T ; col-major: DA^T (k,m) += B (k,n) @ DC^T (n,m)
    cdef int m = dc.shape[0], n = dc.shape[1], k = b.shape[0]
    cdef double beta = 1.0
    if da is None:
        da = np.empty((m, k), dtype=np.float64)
        beta = 0.0
    cdef double[:, ::1] buf = da
    if m > 0 and n > 0 and k > 0:
        _dgemm(b'T', b'N', k, m, n, 1.0, &b[0, 0], n, &dc[0, 0], n, beta, &buf[0, 0], k)
    elif beta == 0.0:
        da[:] = 0.0
    return da


def matmul_acc_db(double[:, ::1] a, double[:, ::1] dc, db):
    # db += a.T @ dc ; col-major: DB^T (n,k) += DC^T (n,m) @ A (m,k)
    cdef int m = a.shape[0], k = a.shape[1], n = dc.shape[1]
    cdef double beta = 1.0
    if db is None:
        db = np.empty((k, n), dtype=np.float64)
        beta = 0.0
    cdef double[:, ::1] buf = db
    if m > 0 and n > 0 and k > 0:
        _dgemm(b'N', b'T', n, k, m, 1.0, &dc[0, 0], n, &a[0, 0], k, beta, &buf[0, 0], n)
    elif beta == 0.0:
        db[:] = 0.0
    return db


def add(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t i, j, m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(m):
            for j in range(n):
                c[i, j] = a[i, j] + b[i, j]
    return out


def sub(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t i, j, m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(m):
            for j in range(n):
                c[i, j] = a[i, j] - b[i, j]
    return out


def mul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t i, j, m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(m):
            for j in range(n):
                c[i, j] = a[i, j] * b[i, j]
    return out


def acc(out, double[:, ::1] x):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    if out is None:
        return np.asarray(x).copy()
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                o[i, j] += x[i, j]
    return out


def acc_scaled(out, double[:, ::1] x, double s):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    cdef double[:, ::1] o
    if out is None:
        out = np.empty((m, n), dtype=np.float64)
        o = out
        with nogil:
            for i in range(m):
                for j in range(n):
                    o[i, j] = s * x[i, j]
        return out
    o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                o[i, j] += s * x[i, j]
    return out


def acc_fill(out, double s, shape):
    if out is None:
        return np.full(shape, s)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, m = o.shape[0], n = o.shape[1]
    with nogil:
        for i in range(m):
            for j in range(n):
                o[i, j] += s
    return out


def scalar_mul(double[:, ::1] a, double s):
    cdef Py_ssize_t i, j, m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(m):
            for j in range(n):
                c[i, j] = a[i, j] * s
    return out


def scalar_add(double[:, ::1] a, double s):
    cdef Py_ssize_t i, j, m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(m):
            for j in range(n):
                c[i, j] = a[i, j] + s
    return out


def tanh(double[:, ::1] x):
    return np.tanh(np.asarray(x))


def tanh_acc_bwd(double[:, ::1] y, double[:, ::1] dy, dx):
    cdef Py_ssize_t i, j, m = y.shape[0], n = y.shape[1]
    cdef double[:, ::1] o
    cdef bint fresh = dx is None
    if fresh:
        dx = np.empty((m, n), dtype=np.float64)
    o = dx
    with nogil:
        if fresh:
            for i in range(m):
                for j in range(n):
                    o[i, j] = dy[i, j] * (1.0 - y[i, j] * y[i, j])
        else:
            for i in range(m):
                for j in range(n):
                    o[i, j] += dy[i, j] * (1.0 - y[i, j] * y[i, j])
    return dx


def exp(double[:, ::1] x):
    return np.exp(np.asarray(x))


def exp_acc_bwd(double[:, ::1] y, double[:, ::1] dy, dx):
    cdef Py_ssize_t i, j, m = y.shape[0], n = y.shape[1]
    cdef double[:, ::1] o
    cdef bint fresh = dx is None
    if fresh:
        dx = np.empty((m, n), dtype=np.float64)
    o = dx
    with nogil:
        if fresh:
            for i in range(m):
                for j in range(n):
                    o[i, j] = dy[i, j] * y[i, j]
        else:
            for i in range(m):
                for j in range(n):
                    o[i, j] += dy[i, j] * y[i, j]
    return dx


def log(double[:, ::1] x):
    return np.log(np.asarray(x))


def log_acc_bwd(double[:, ::1] x, double[:, ::1] dy, dx):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    cdef double[:, ::1] o
    cdef bint fresh = dx is None
    if fresh:
        dx = np.empty((m, n), dtype=np.float64)
    o = dx
    with nogil:
        if fresh:
            for i in range(m):
                for j in range(n):
                    o[i, j] = dy[i, j] / x[i, j]
        else:
            for i in range(m):
                for j in range(n):
                    o[i, j] += dy[i, j] / x[i, j]
    return dx


def relu(double[:, ::1] x):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(m):
            for j in range(n):
                y[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out


def relu_acc_bwd(double[:, ::1] x, double[:, ::1] dy, dx):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    cdef double[:, ::1] o
    cdef bint fresh = dx is None
    if fresh:
        dx = np.empty((m, n), dtype=np.float64)
    o = dx
    with nogil:
        if fresh:
            for i in range(m):
                for j in range(n):
                    o[i, j] = dy[i, j] if x[i, j] > 0.0 else 0.0
        else:
            for i in range(m):
                for j in range(n):
                    if x[i, j] > 0.0:
                        o[i, j] += dy[i, j]
    return dx


def add_bias(double[:, ::1] x, double[:, ::1] b):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(m):
            for j in range(n):
                y[i, j] = x[i, j] + b[0, j]
    return out


def bias_acc_bwd(double[:, ::1] dy, db):
    cdef Py_ssize_t i, j, m = dy.shape[0], n = dy.shape[1]
    if db is None:
        db = np.zeros((1, n), dtype=np.float64)
    cdef double[:, ::1] o = db
    with nogil:
        for i in range(m):
            for j in range(n):
                o[0, j] += dy[i, j]
    return db


def masked_softmax(double[:, ::1] z, unsigned char[:, ::1] mask):
    cdef Py_ssize_t i, j, m = z.shape[0], n = z.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] p = out
    cdef double hi, tot
    with nogil:
        for i in range(m):
            hi = -INFINITY
            for j in range(n):
                if mask[i, j] and z[i, j] > hi:
                    hi = z[i, j]
            tot = 0.0
            for j in range(n):
                if mask[i, j]:
                    p[i, j] = c_exp(z[i, j] - hi)
                    tot += p[i, j]
                else:
                    p[i, j] = 0.0
            for j in range(n):
                p[i, j] /= tot
    return out


def softmax_acc_bwd(double[:, ::1] p, double[:, ::1] dp, dz):
    cdef Py_ssize_t i, j, m = p.shape[0], n = p.shape[1]
    cdef double inner
    cdef double[:, ::1] o
    cdef bint fresh = dz is None
    if fresh:
        dz = np.empty((m, n), dtype=np.float64)
    o = dz
    with nogil:
        for i in range(m):
            inner = 0.0
            for j in range(n):
                inner += dp[i, j] * p[i, j]
            if fresh:
                for j in range(n):
                    o[i, j] = p[i, j] * (dp[i, j] - inner)
            else:
                for j in range(n):
                    o[i, j] += p[i, j] * (dp[i, j] - inner)
    return dz


def sum_all(double[:, ::1] x):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    cdef double tot = 0.0
    with nogil:
        for i in range(m):
            for j in range(n):
                tot += x[i, j]
    return tot


def sum_rows(double[:, ::1] x):
    cdef Py_ssize_t i, j, m = x.shape[0], n = x.shape[1]
    out = np.empty((m, 1), dtype=np.float64)
    cdef double[:, ::1] s = out
    cdef double tot
    with nogil:
        for i in range(m):
            tot = 0.0
            for j in range(n):
                tot += x[i, j]
            s[i, 0] = tot
    return out


def sum_rows_acc_bwd(double[:, ::1] dy, dx, Py_ssize_t n_cols):
    cdef Py_ssize_t i, j, m = dy.shape[0]
    cdef double[:, ::1] o
    cdef bint fresh = dx is None
    if fresh:
        dx = np.empty((m, n_cols), dtype=np.float64)
    o = dx
    with nogil:
        if fresh:
            for i in range(m):
                for j in range(n_cols):
                    o[i, j] = dy[i, 0]
        else:
            for i in range(m):
                for j in range(n_cols):
                    o[i, j] += dy[i, 0]
    return dx


def gather_rows(double[:, ::1] x, long long[::1] idx):
    cdef Py_ssize_t i, j, m = idx.shape[0], n = x.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(m):
            for j in range(n):
                y[i, j] = x[idx[i], j]
    return out


def gather_rows_acc_bwd(double[:, ::1] dy, long long[::1] idx, dx, Py_ssize_t n_rows):
    cdef Py_ssize_t i, j, m = idx.shape[0], n = dy.shape[1]
    if dx is None:
        dx = np.zeros((n_rows, n), dtype=np.float64)
    cdef double[:, ::1] o = dx
    with nogil:
        for i in range(m):
            for j in range(n):
                o[idx[i], j] += dy[i, j]
    return dx


def take_per_row(double[:, ::1] x, long long[::1] cols):
    cdef Py_ssize_t i, m = x.shape[0]
    out = np.empty((m, 1), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(m):
            y[i, 0] = x[i, cols[i]]
    return out


def take_per_row_acc_bwd(double[:, ::1] dy, long long[::1] cols, dx, Py_ssize_t n_cols):
    cdef Py_ssize_t i, m = dy.shape[0]
    if dx is None:
        dx = np.zeros((m, n_cols), dtype=np.float64)
    cdef double[:, ::1] o = dx
    with nogil:
        for i in range(m):
            o[i, cols[i]] += dy[i, 0]
    return dx

"""Pure-numpy kernel backend.

Every function here has a twin in the compiled ``_native`` extension; the
tape only ever calls through :mod:`cobex.kernels`, so the two backends are
interchangeable. All matrix arguments are 2-D float64 C-contiguous arrays;
index vectors are int64, masks uint8.

Backward kernels accumulate into the caller's adjoint buffer and return it;
passed ``None`` they allocate the first contribution directly (no zero-fill
pass), never aliasing their inputs.
"""

import numpy as np

NAME = "numpy"


def matmul(a, b):
    return a @ b


def matmul_acc_da(dc, b, da):
    if da is None:
        return dc @ b.T
    da += dc @ b.T
    return da


def matmul_acc_db(a, dc, db):
    if db is None:
        return a.T @ dc
    db += a.T @ dc
    return db


def add(a, b):
    return a + b


def sub(a, b):
    return a - b


def mul(a, b):
    return a * b


def acc(out, x):
    if out is None:
        return x.copy()
    out += x
    return out


def acc_scaled(out, x, s):
    if out is None:
        return s * x
    out += s * x
    return out


def acc_fill(out, s, shape):
    if out is None:
        return np.full(shape, s)
    out += s
    return out


def scalar_mul(a, s):
    return a * s


def scalar_add(a, s):
    return a + s


def tanh(x):
    return np.tanh(x)


def tanh_acc_bwd(y, dy, dx):
    if dx is None:
        return dy * (1.0 - y * y)
    dx += dy * (1.0 - y * y)
    return dx


def exp(x):
    return np.exp(x)


def exp_acc_bwd(y, dy, dx):
    if dx is None:
        return dy * y
    dx += dy * y
    return dx


def log(x):
    return np.log(x)


def log_acc_bwd(x, dy, dx):
    if dx is None:
        return dy / x
    dx += dy / x
    return dx


def relu(x):
    return np.maximum(x, 0.0)


def relu_acc_bwd(x, dy, dx):
    if dx is None:
        return dy * (x > 0.0)
    dx += dy * (x > 0.0)
    return dx


def add_bias(x, b):
    return x + b


def bias_acc_bwd(dy, db):
    if db is None:
        return dy.sum(axis=0, keepdims=True)
    db += dy.sum(axis=0, keepdims=True)
    return db


def masked_softmax(z, mask):
    # mask: uint8, 1 = active entry; every row has at least one active entry
    neg = np.where(mask.astype(bool), z, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    e = np.exp(neg - m)
    e[~mask.astype(bool)] = 0.0
    return e / e.sum(axis=1, keepdims=True)


def softmax_acc_bwd(p, dp, dz):
    inner = (dp * p).sum(axis=1, keepdims=True)
    if dz is None:
        return p * (dp - inner)
    dz += p * (dp - inner)
    return dz


def sum_all(x):
    return float(x.sum())


def sum_rows(x):
    return x.sum(axis=1, keepdims=True)


def sum_rows_acc_bwd(dy, dx, n_cols):
    if dx is None:
        return np.repeat(dy, n_cols, axis=1)
    dx += dy
    return dx


def gather_rows(x, idx):
    return x[idx]


def gather_rows_acc_bwd(dy, idx, dx, n_rows):
    if dx is None:
        dx = np.zeros((n_rows, dy.shape[1]))
    np.add.at(dx, idx, dy)
    return dx


def take_per_row(x, cols):
    n = x.shape[0]
    return x[np.arange(n), cols].reshape(n, 1)


def take_per_row_acc_bwd(dy, cols, dx, n_cols):
    if dx is None:
        dx = np.zeros((dy.shape[0], n_cols))
    np.add.at(dx, (np.arange(dx.shape[0]), cols), dy[:, 0])
    return dx

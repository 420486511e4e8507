"""Backend parity: the compiled kernels must match the numpy fallback."""

import numpy as np
import pytest

from cobex import kernels
from cobex.errors import ConfigError
from cobex.kernels import _numpy

native = pytest.importorskip("cobex.kernels._native")

RNG = np.random.default_rng(42)


def _mat(m, n, lo=-2.0, hi=2.0):
    return np.ascontiguousarray(RNG.uniform(lo, hi, (m, n)))


def _check(a, b):
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_matmul_parity():
    for m, k, n in ((1, 1, 1), (3, 4, 2), (64, 24, 32)):
        a, b = _mat(m, k), _mat(k, n)
        _check(native.matmul(a, b), _numpy.matmul(a, b))


def test_matmul_bwd_parity():
    a, b = _mat(5, 3), _mat(3, 4)
    dc = _mat(5, 4)
    _check(native.matmul_acc_da(dc, b, None), _numpy.matmul_acc_da(dc, b, None))
    _check(native.matmul_acc_db(a, dc, None), _numpy.matmul_acc_db(a, dc, None))
    da_n, da_p = _mat(5, 3), None
    da_p = da_n.copy()
    _check(native.matmul_acc_da(dc, b, da_n), _numpy.matmul_acc_da(dc, b, da_p))


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_elementwise_parity(op):
    a, b = _mat(6, 5), _mat(6, 5)
    _check(getattr(native, op)(a, b), getattr(_numpy, op)(a, b))


def test_scalar_and_acc_parity():
    a = _mat(4, 3)
    _check(native.scalar_mul(a, 1.7), _numpy.scalar_mul(a, 1.7))
    _check(native.scalar_add(a, -0.4), _numpy.scalar_add(a, -0.4))
    x = _mat(4, 3)
    _check(native.acc(None, x), _numpy.acc(None, x))
    out_n, out_p = a.copy(), a.copy()
    _check(native.acc(out_n, x), _numpy.acc(out_p, x))
    _check(native.acc_scaled(None, x, 0.3), _numpy.acc_scaled(None, x, 0.3))
    _check(native.acc_fill(None, 2.5, (4, 3)), _numpy.acc_fill(None, 2.5, (4, 3)))
    out_n, out_p = a.copy(), a.copy()
    _check(native.acc_fill(out_n, 2.5, (4, 3)), _numpy.acc_fill(out_p, 2.5, (4, 3)))


@pytest.mark.parametrize("op,bwd", [
    ("tanh", "tanh_acc_bwd"), ("exp", "exp_acc_bwd"), ("relu", "relu_acc_bwd"),
])
def test_unary_parity(op, bwd):
    x = _mat(7, 5)
    y_n = getattr(native, op)(x)
    y_p = getattr(_numpy, op)(x)
    _check(y_n, y_p)
    dy = _mat(7, 5)
    ref = x if op == "relu" else y_p
    _check(getattr(native, bwd)(ref, dy, None), getattr(_numpy, bwd)(ref, dy, None))
    buf_n, buf_p = _mat(7, 5), None
    buf_p = buf_n.copy()
    _check(getattr(native, bwd)(ref, dy, buf_n), getattr(_numpy, bwd)(ref, dy, buf_p))


def test_log_parity():
    x = _mat(4, 4, 0.1, 3.0)
    _check(native.log(x), _numpy.log(x))
    dy = _mat(4, 4)
    _check(native.log_acc_bwd(x, dy, None), _numpy.log_acc_bwd(x, dy, None))


def test_bias_parity():
    x, b = _mat(8, 5), _mat(1, 5)
    _check(native.add_bias(x, b), _numpy.add_bias(x, b))
    dy = _mat(8, 5)
    _check(native.bias_acc_bwd(dy, None), _numpy.bias_acc_bwd(dy, None))


def test_softmax_parity():
    z = _mat(6, 8, -30, 30)
    mask = (RNG.random((6, 8)) < 0.7).astype(np.uint8)
    mask[:, 0] = 1
    p_n = native.masked_softmax(z, mask)
    p_p = _numpy.masked_softmax(z, mask)
    _check(p_n, p_p)
    dp = _mat(6, 8)
    _check(native.softmax_acc_bwd(p_p, dp, None), _numpy.softmax_acc_bwd(p_p, dp, None))


def test_reduction_parity():
    x = _mat(9, 7)
    assert abs(native.sum_all(x) - _numpy.sum_all(x)) < 1e-10
    _check(native.sum_rows(x), _numpy.sum_rows(x))
    dy = _mat(9, 1)
    _check(native.sum_rows_acc_bwd(dy, None, 7), _numpy.sum_rows_acc_bwd(dy, None, 7))


def test_gather_parity():
    x = _mat(5, 4)
    idx = RNG.integers(0, 5, 7).astype(np.int64)
    _check(native.gather_rows(x, idx), _numpy.gather_rows(x, idx))
    dy = _mat(7, 4)
    _check(native.gather_rows_acc_bwd(dy, idx, None, 5),
           _numpy.gather_rows_acc_bwd(dy, idx, None, 5))
    cols = RNG.integers(0, 4, 5).astype(np.int64)
    _check(native.take_per_row(x, cols), _numpy.take_per_row(x, cols))
    dy2 = _mat(5, 1)
    _check(native.take_per_row_acc_bwd(dy2, cols, None, 4),
           _numpy.take_per_row_acc_bwd(dy2, cols, None, 4))


def test_backend_selection_roundtrip():
    start = kernels.backend_name()
    prev = kernels.use_backend("numpy")
    assert prev == start
    assert kernels.backend_name() == "numpy"
    kernels.use_backend("native")
    assert kernels.backend_name() == "native"
    kernels.use_backend(start)
    with pytest.raises(ConfigError):
        kernels.use_backend("cuda")


def test_full_loss_parity_between_backends(small_train, small_params):
    from cobex import objectives
    from conftest import small_batch

    batch = small_batch(small_train, n=24)
    pw = objectives.PenaltyWeights(np.full(3, 0.2), np.full(3, -0.1))
    results = {}
    start = kernels.backend_name()
    try:
        for name in ("native", "numpy"):
            kernels.use_backend(name)
            graph = objectives.inner_loss(batch, small_params, pw)
            grads = graph.backward()
            results[name] = (
                graph.root.item(),
                [g.copy() for g in graph.theta_grad_list(grads)],
                grads[graph.u].copy(),
            )
    finally:
        kernels.use_backend(start)
    assert np.isclose(results["native"][0], results["numpy"][0], rtol=1e-12)
    for gn, gp in zip(results["native"][1], results["numpy"][1]):
        _check(gn, gp)
    _check(results["native"][2], results["numpy"][2])

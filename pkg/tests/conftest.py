"""Shared fixtures: small environments, datasets, and finite-difference helpers."""

import numpy as np
import pytest

from cobex import constraints, policy
from cobex.data import make_batch
from cobex.synthenv import EnvSpec, gen_dataset, gen_env

SMALL_SPEC = EnvSpec(
    seed=3,
    n_domains=3,
    d_context=4,
    d_candidate=2,
    min_candidates=2,
    max_candidates=4,
    hidden=(6,),
)


@pytest.fixture(scope="session")
def small_env():
    return gen_env(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_splits(small_env):
    return gen_dataset(small_env, 400)


@pytest.fixture(scope="session")
def small_train(small_splits):
    return small_splits[0]


@pytest.fixture()
def small_params():
    # 6 -> 6 -> 1 tanh MLP: 49 parameters, small enough for finite differences
    return policy.init_policy(7, (6, 6, 1))


def small_batch(dataset, n=16, benchmark="global", start=0):
    bench = constraints.load_benchmark(benchmark)
    bounds = constraints.resolve_bounds(bench, dataset.domain_names)
    return make_batch(dataset, np.arange(start, start + n), bounds)


def grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return np.all(
        np.abs(analytic - numeric)
        <= atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
    )


def fd_param_grads(loss_fn, params, step=1e-5):
    """Central finite differences of a scalar loss over PolicyParams arrays."""
    grads = []
    for li in range(len(params.flat())):
        arr = params.flat()[li]
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            up = params.copy()
            up.flat()[li][idx] += step
            down = params.copy()
            down.flat()[li][idx] -= step
            g[idx] = (loss_fn(up) - loss_fn(down)) / (2 * step)
        grads.append(g)
    return grads


def fd_vector_grad(loss_fn, vec, step=1e-5):
    """Central finite differences of a scalar loss over a 1-D vector."""
    g = np.zeros_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        up[i] += step
        down = vec.copy()
        down[i] -= step
        g[i] = (loss_fn(up) - loss_fn(down)) / (2 * step)
    return g

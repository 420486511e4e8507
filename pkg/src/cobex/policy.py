"""Stochastic softmax MLP policy over variable-size candidate sets.

Each candidate is scored by a shared MLP applied to the concatenation of the
context features and that candidate's features; propensities are the softmax
of the scores. The scorer is shared across candidates, so propensities are
equivariant under candidate permutation and the policy handles any candidate
count up to ``MAX_CANDIDATES``.
"""

from dataclasses import dataclass

import numpy as np

from cobex.errors import ConfigError, InvalidCandidateSetError, ShapeError

MAX_CANDIDATES = 16

DEFAULT_CONTEXT_DIM = 16
DEFAULT_CANDIDATE_DIM = 8
DEFAULT_HIDDEN = (32, 32)

CHECKPOINT_VERSION = 1


@dataclass
class PolicyParams:
    """MLP weights: tanh hidden layers, scalar linear output per candidate."""

    dims: tuple
    weights: list
    biases: list

    def validate(self):
        if len(self.dims) < 2 or self.dims[-1] != 1:
            raise ConfigError(f"invalid layer dims {self.dims}")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.weights):
            raise ConfigError("layer count does not match dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (1, self.dims[i + 1]):
                raise ShapeError(f"layer {i} shapes {w.shape}/{b.shape} do not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ConfigError(f"layer {i} has non-finite entries")

    @property
    def input_dim(self):
        return self.dims[0]

    def copy(self):
        return PolicyParams(
            self.dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def flat(self):
        """All parameter arrays in a fixed order (weights then bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def n_parameters(self):
        return sum(a.size for a in self.flat())


@dataclass
class CandidateSet:
    """Shared context plus one feature vector per routing candidate."""

    context: np.ndarray
    features: np.ndarray  # (n_candidates, d_candidate)

    def validate(self):
        if self.features.ndim != 2 or self.context.ndim != 1:
            raise ShapeError("candidate set arrays have wrong rank")
        n = self.features.shape[0]
        if not 1 <= n <= MAX_CANDIDATES:
            raise InvalidCandidateSetError(f"candidate count {n} outside [1, {MAX_CANDIDATES}]")
        if not (np.isfinite(self.context).all() and np.isfinite(self.features).all()):
            raise InvalidCandidateSetError("candidate set has non-finite features")

    @property
    def n_candidates(self):
        return self.features.shape[0]


def default_dims(d_context=DEFAULT_CONTEXT_DIM, d_candidate=DEFAULT_CANDIDATE_DIM,
                 hidden=DEFAULT_HIDDEN):
    return (d_context + d_candidate, *hidden, 1)


def init_policy(seed, dims):
    """Glorot-uniform weights, zero biases; deterministic in the seed."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ConfigError("need at least input and output layer sizes")
    if dims[-1] != 1:
        raise ConfigError("output layer must produce a scalar score")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer sizes must be positive: {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    params = PolicyParams(dims, weights, biases)
    params.validate()
    return params


def forward_scores(params, x):
    """Scores for a (m, input_dim) feature matrix; returns shape (m,)."""
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"input dim {x.shape[1]} != policy input {params.input_dim}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
    return h[:, 0]


def stable_softmax(scores):
    e = np.exp(scores - scores.max())
    return e / e.sum()


def candidate_inputs(cs):
    """Stack context|candidate feature rows for the shared scorer."""
    n = cs.n_candidates
    ctx = np.broadcast_to(cs.context, (n, cs.context.size))
    return np.ascontiguousarray(np.hstack([ctx, cs.features]), dtype=np.float64)


def propensities(params, cs):
    """Action selection probabilities over the candidate set."""
    cs.validate()
    scores = forward_scores(params, candidate_inputs(cs))
    return stable_softmax(scores)


def propensity_matrix(params, contexts, candidates, mask):
    """Batched propensities: (B, N) rows on the simplex, masked entries 0.

    ``contexts`` is (B, d_x), ``candidates`` (B, N, d_c), ``mask`` (B, N)
    with 1 marking real candidates.
    """
    b, n, d_c = candidates.shape
    ctx = np.repeat(contexts[:, None, :], n, axis=1)
    flat = np.concatenate([ctx, candidates], axis=2).reshape(b * n, -1)
    scores = forward_scores(params, np.ascontiguousarray(flat)).reshape(b, n)
    active = mask.astype(bool)
    scores = np.where(active, scores, -np.inf)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    e[~active] = 0.0
    return e / e.sum(axis=1, keepdims=True)


def sample_action(params, cs, rng):
    """Draw an action index from the policy's propensities."""
    p = propensities(params, cs)
    return int(rng.choice(p.size, p=p))


def make_leaves(tape, params):
    """Register every parameter matrix as a tape leaf; returns (W, b) pairs."""
    return [(tape.leaf(w), tape.leaf(b)) for w, b in zip(params.weights, params.biases)]


def score_graph(tape, leaves, x):
    """Tape subgraph computing MLP scores for an input Value; returns (m, 1)."""
    h = x
    last = len(leaves) - 1
    for i, (w, b) in enumerate(leaves):
        h = tape.add_bias(tape.matmul(h, w), b)
        if i < last:
            h = tape.tanh(h)
    return h


def apply_step(params, grads, lr):
    """New params one gradient-descent step away; grads ordered like flat()."""
    out = params.copy()
    arrays = out.flat()
    for a, g in zip(arrays, grads):
        a -= lr * g
    return out


def save_checkpoint(params, path, fingerprint=""):
    """Versioned binary container; round-trips parameters bit-exactly."""
    params.validate()
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "dims": np.asarray(params.dims, dtype=np.int64),
        "fingerprint": np.str_(fingerprint),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Returns (params, fingerprint)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        dims = tuple(int(d) for d in data["dims"])
        weights = [np.ascontiguousarray(data[f"w{i}"]) for i in range(len(dims) - 1)]
        biases = [np.ascontiguousarray(data[f"b{i}"]) for i in range(len(dims) - 1)]
        fingerprint = str(data["fingerprint"])
    params = PolicyParams(dims, weights, biases)
    params.validate()
    return params, fingerprint

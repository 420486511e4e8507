"""Losses and penalty terms for constrained off-policy training.

Per-sample forms (numpy in, float out) back the spec-level contracts and the
hand-arithmetic tests; the ``*_loss`` builders assemble whole-minibatch tape
graphs whose roots are the scalar batch means used by the trainers.

Conventions: replication R = 1 - ||p_theta - p0||_1 / 2; IPS term
-r * p_theta(a) / p0(a); hinge penalties max(0, c_min - R) and
max(0, R - c_max) weighted by exp(u_k) / exp(v_k) in the inner (minimax)
loss, and by lambda / p(k) in the meta loss.
"""

from dataclasses import dataclass

import numpy as np

from cobex import policy as policy_mod
from cobex.autodiff import Tape, Value
from cobex.data import PROPENSITY_FLOOR
from cobex.errors import ConfigError, PropensityFloorError, ShapeError

UV_CLAMP = 30.0


@dataclass
class PenaltyWeights:
    """Dual variables; exp(u), exp(v) are the penalty multipliers."""

    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_domains):
        return cls(np.zeros(n_domains), np.zeros(n_domains))

    def validate(self):
        if self.u.shape != self.v.shape or self.u.ndim != 1:
            raise ShapeError("u and v must be equal-length vectors")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ConfigError("penalty weights must be finite")

    def clamp(self, bound=UV_CLAMP):
        np.clip(self.u, -bound, bound, out=self.u)
        np.clip(self.v, -bound, bound, out=self.v)

    def copy(self):
        return PenaltyWeights(self.u.copy(), self.v.copy())


@dataclass
class DomainPrior:
    """Prior probability of each domain; strictly positive simplex point."""

    p: np.ndarray

    def validate(self):
        if self.p.ndim != 1:
            raise ShapeError("domain prior must be a vector")
        if (self.p <= 0).any():
            raise ConfigError("domain prior entries must all be positive")
        if abs(float(self.p.sum()) - 1.0) > 1e-8:
            raise ConfigError("domain prior must sum to 1")


def replication(p_theta, p_0):
    """1 - L1/2 between propensity vectors; in [0, 1], 1 iff equal.

    Accepts tape values (row-wise, returns an (m, 1) value differentiable in
    ``p_theta``) or plain vectors (returns a float).
    """
    if isinstance(p_theta, Value):
        tape = p_theta.tape
        q = p_0 if isinstance(p_0, Value) else tape.const(np.atleast_2d(p_0))
        if q.data.shape != p_theta.data.shape:
            raise ShapeError(f"propensity shapes differ: {p_theta.data.shape} vs {q.data.shape}")
        d = tape.sub(p_theta, q)
        absd = tape.add(tape.relu(d), tape.relu(tape.scale(d, -1.0)))
        return tape.shift(tape.scale(tape.sum_rows(absd), -0.5), 1.0)
    p_theta = np.asarray(p_theta, dtype=np.float64)
    p_0 = np.asarray(p_0, dtype=np.float64)
    if p_theta.shape != p_0.shape:
        raise ShapeError(f"propensity shapes differ: {p_theta.shape} vs {p_0.shape}")
    return float(1.0 - 0.5 * np.abs(p_theta - p_0).sum())


def replication_rows(p_theta, p_0):
    """Row-wise numpy replication for (B, N) propensity matrices."""
    return 1.0 - 0.5 * np.abs(p_theta - p_0).sum(axis=1)


def ips_loss(sample, p_theta):
    """Vanilla IPS objective -r * p_theta(a) / p0(a) for one sample."""
    p0_a = float(sample.propensities[sample.action])
    if p0_a < PROPENSITY_FLOOR:
        raise PropensityFloorError(
            f"chosen-action propensity {p0_a:.3g} below floor {PROPENSITY_FLOOR}"
        )
    coeff = -sample.reward / p0_a
    if isinstance(p_theta, Value):
        tape = p_theta.tape
        if p_theta.data.shape[0] != 1:
            raise ShapeError("per-sample ips_loss expects a single propensity row")
        picked = tape.take_per_row(p_theta, np.array([sample.action]))
        return tape.scale(picked, coeff)
    return coeff * float(np.asarray(p_theta)[sample.action])


def check_bounds(c_min, c_max):
    lo = np.asarray(c_min, dtype=np.float64)
    hi = np.asarray(c_max, dtype=np.float64)
    if (lo < 0).any() or (hi > 1).any() or (lo > hi).any():
        raise ConfigError(f"replication bounds must satisfy 0 <= min <= max <= 1")
    return lo, hi


def hinge_penalties(replication_value, c_min, c_max):
    """(max(0, c_min - R), max(0, R - c_max)); at most one is positive."""
    check_bounds(c_min, c_max)
    if isinstance(replication_value, Value):
        tape = replication_value.tape
        def against(bound, sign):
            bound = np.asarray(bound, dtype=np.float64)
            if bound.ndim == 0:
                inner = tape.shift(tape.scale(replication_value, -sign), sign * float(bound))
            else:
                c = tape.const(bound.reshape(replication_value.data.shape))
                inner = tape.sub(c, replication_value) if sign > 0 else tape.sub(replication_value, c)
            return tape.max0(inner)
        return against(c_min, 1.0), against(c_max, -1.0)
    r = float(replication_value)
    return max(0.0, float(c_min) - r), max(0.0, r - float(c_max))


@dataclass
class LossGraph:
    """A built minibatch loss: scalar root plus handles into the graph."""

    tape: Tape
    root: Value
    leaves: list              # (W, b) Value pairs, layer order
    batch: object
    propensities: Value       # (B, N)
    repl: Value               # (B, 1)
    pen_min: Value            # (B, 1) raw hinge shortfall
    pen_max: Value            # (B, 1) raw hinge excess
    ips: Value                # (B, 1) per-sample IPS terms
    u: Value = None           # (M, 1) leaf when dual weights participate
    v: Value = None

    def theta_grad_list(self, grad_map):
        """Parameter gradients ordered like PolicyParams.flat()."""
        out = []
        for w, b in self.leaves:
            out.append(grad_map[w])
            out.append(grad_map[b])
        return out

    def backward(self):
        return self.tape.backward(self.root)

    def reward_estimate(self):
        """Batch IPS reward estimate (the negated mean IPS loss term)."""
        return -float(self.ips.data.mean())


def batch_propensities(tape, batch, leaves):
    """Masked softmax propensities (B, N) for a packed batch."""
    x = tape.const(batch.flat_input)
    scores = policy_mod.score_graph(tape, leaves, x)
    logits = tape.reshape(scores, batch.size, batch.n_slots)
    return tape.softmax_row(logits, batch.mask)


def _graph_core(batch, params):
    if batch.size == 0:
        raise ConfigError("empty batch")
    tape = Tape()
    leaves = policy_mod.make_leaves(tape, params)
    p = batch_propensities(tape, batch, leaves)
    ips = tape.mul(tape.take_per_row(p, batch.actions), tape.const(batch.ips_coeff))
    repl = replication(p, batch.p0)
    pen_min = tape.max0(tape.sub(tape.const(batch.c_min), repl))
    pen_max = tape.max0(tape.sub(repl, tape.const(batch.c_max)))
    return tape, leaves, p, ips, repl, pen_min, pen_max


def inner_loss(batch, params, pw):
    """Mean of ips + exp(u_k) pen_min + exp(v_k) pen_max over the batch.

    Differentiable w.r.t. both the policy parameters and the dual weights.
    """
    pw.validate()
    tape, leaves, p, ips, repl, pen_min, pen_max = _graph_core(batch, params)
    u = tape.leaf(pw.u)
    v = tape.leaf(pw.v)
    eu = tape.exp(tape.gather_rows(u, batch.domains))
    ev = tape.exp(tape.gather_rows(v, batch.domains))
    per_sample = tape.add(ips, tape.add(tape.mul(eu, pen_min), tape.mul(ev, pen_max)))
    root = tape.scale(tape.sum(per_sample), 1.0 / batch.size)
    return LossGraph(tape, root, leaves, batch, p, repl, pen_min, pen_max, ips, u=u, v=v)


def max_player_loss(batch, params, pw):
    """Same expression as inner_loss, read as a function of the dual weights.

    The gradient w.r.t. u_k is exp(u_k) times the batch-mean pen_min over
    domain-k samples, hence always >= 0 (likewise for v).
    """
    return inner_loss(batch, params, pw)


def quadratic_loss(batch, params, weight):
    """Mean of ips + weight * (pen_min^2 + pen_max^2)."""
    if weight < 0:
        raise ConfigError(f"penalty weight must be >= 0, got {weight}")
    tape, leaves, p, ips, repl, pen_min, pen_max = _graph_core(batch, params)
    if weight > 0:
        sq = tape.add(tape.mul(pen_min, pen_min), tape.mul(pen_max, pen_max))
        per_sample = tape.add(ips, tape.scale(sq, weight))
    else:
        per_sample = ips
    root = tape.scale(tape.sum(per_sample), 1.0 / batch.size)
    return LossGraph(tape, root, leaves, batch, p, repl, pen_min, pen_max, ips)


def meta_loss(batch, params, prior, lam):
    """(1 - lambda) * mean ips + lambda * mean((pen_min + pen_max) / p(k)).

    The second term is the macro average of the constraint violations; it
    carries no dependence on the dual weights and, at lambda = 1, none on
    the rewards.
    """
    prior.validate()
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    tape, leaves, p, ips, repl, pen_min, pen_max = _graph_core(batch, params)
    inv_prior = (lam / prior.p[batch.domains]).reshape(batch.size, 1)
    weighted = tape.mul(tape.const(inv_prior), tape.add(pen_min, pen_max))
    per_sample = tape.add(tape.scale(ips, 1.0 - lam), weighted)
    root = tape.scale(tape.sum(per_sample), 1.0 / batch.size)
    return LossGraph(tape, root, leaves, batch, p, repl, pen_min, pen_max, ips)

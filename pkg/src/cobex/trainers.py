"""Training procedures: IPS baseline, quadratic penalty, minimax primal-dual,
and meta-gradient penalty adaptation, plus optimizers and model selection.

All trainers are deterministic functions of (data order, seed, config). The
meta-gradient trainer computes the derivative of the meta objective through
the single inner gradient-descent step analytically: with
theta' = theta - eta * grad_theta L_inner(theta, u, v) and u entering
L_inner only through exp(u_k) * Pbar_k_min(theta),

    dL_meta/du_k = -eta * exp(u_k) * <grad L_meta(theta'), grad Pbar_k_min>

(and likewise for v with Pbar_k_max), where Pbar_k is the batch-mean hinge
penalty restricted to domain-k samples. This keeps everything first-order:
one meta backward plus one seeded backward per active (domain, hinge) pair.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from cobex import constraints as constraints_mod
from cobex import objectives, policy as policy_mod
from cobex.data import make_batch
from cobex.errors import ConfigError, DivergenceError

PARAM_NORM_LIMIT = 1e6


class Optimizer:
    """SGD or Adam over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, kind="adam", lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {kind!r}")
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.kind = kind
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, arrays, grads):
        if self.kind == "sgd":
            for a, g in zip(arrays, grads):
                a -= self.lr * g
            return
        if self.m is None:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class MinimaxConfig:
    eta: float = 0.1      # max-player learning rate
    gamma: float = 1.0    # max-player lr decay
    tau: float = 1.0      # max-player update period
    xi: float = 1.0       # period decay

    def validate(self):
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if not 0 < self.gamma <= 1 or not 0 < self.xi <= 1:
            raise ConfigError("gamma and xi must be in (0, 1]")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")


@dataclass
class MetaGradConfig:
    eta_inner: float = 0.01   # step size of the cloned inner update
    lam: float = 1.0          # meta-objective balance weight

    def validate(self):
        if self.eta_inner <= 0:
            raise ConfigError("eta_inner must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must be in [0, 1]")


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    reward: float
    micro_violation: float
    macro_violation: float
    u: np.ndarray
    v: np.ndarray
    extra: dict = field(default_factory=dict)  # method-specific scalars (eta, tau)


@dataclass
class TrainReport:
    method: str
    seed: int
    n_domains: int
    records: list = field(default_factory=list)
    epoch_snapshots: list = field(default_factory=list)  # (epoch, PolicyParams)
    checkpoint_path: str = ""

    def log(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            return
        self.records.append(record)

    def iterations(self):
        return [r.iteration for r in self.records]

    def u_trace(self):
        return np.array([r.u for r in self.records])

    def v_trace(self):
        return np.array([r.v for r in self.records])

    def to_csv(self, path):
        m = self.n_domains
        cols = ["iteration", "loss", "reward", "micro_viol", "macro_viol"]
        cols += [f"u_{k}" for k in range(m)] + [f"v_{k}" for k in range(m)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                vals = [str(r.iteration)] + [repr(x) for x in
                                             (r.loss, r.reward, r.micro_violation, r.macro_violation)]
                vals += [repr(float(x)) for x in r.u] + [repr(float(x)) for x in r.v]
                fh.write(",".join(vals) + "\n")


def batch_violation_rates(repl, c_min, c_max, domains):
    """Micro/macro violation rates of one batch (strict exterior of bounds)."""
    viol = (repl < c_min) | (repl > c_max)
    micro = float(viol.mean())
    rates = []
    for k in np.unique(domains):
        sel = domains == k
        rates.append(float(viol[sel].mean()))
    return micro, float(np.mean(rates))


def minibatch_plan(n, batch_size, epochs, seed, paired=False):
    """Deterministic shuffled minibatch index stream.

    Yields (iteration, idx) or (iteration, idx_a, idx_b) when paired; the
    paired batches are disjoint strides of the same shuffled epoch. Partial
    trailing batches are dropped so batch shapes stay constant.
    """
    if n < 1:
        raise ConfigError("dataset is empty")
    rng = np.random.default_rng(seed)
    width = 2 * batch_size if paired else batch_size
    if n < width:
        width = max(2, n) if paired else n
    half = width // 2
    t = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for s in range(0, n - width + 1, width):
            block = perm[s : s + width]
            if paired:
                yield t, block[:half], block[half:]
            else:
                yield t, block
            t += 1


def _guard(loss, params, iteration):
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss at iteration {iteration}")
    for a in params.flat():
        if not np.isfinite(a).all() or np.abs(a).max() > PARAM_NORM_LIMIT:
            raise DivergenceError(f"parameters diverged at iteration {iteration}")


def _bounds_for(data, bench):
    if bench is None:
        bench = constraints_mod.ConstraintBenchmark(name="unconstrained", specs=())
    return constraints_mod.resolve_bounds(bench, data.domain_names)


def _epochs_of(n, batch_size, epochs, paired=False):
    width = 2 * batch_size if paired else batch_size
    if n < width:
        width = max(2, n) if paired else n
    per_epoch = max((n - width) // width + 1, 0) if n >= width else 0
    return per_epoch


def _log_row(report, t, loss, graph, batch, pw, log_every, total_iters,
             extra=None):
    if t % log_every and t != total_iters - 1:
        return
    repl = graph.repl.data[:, 0]
    micro, macro = batch_violation_rates(repl, batch.c_min[:, 0], batch.c_max[:, 0],
                                         batch.domains)
    m = report.n_domains
    u = pw.u.copy() if pw is not None else np.zeros(m)
    v = pw.v.copy() if pw is not None else np.zeros(m)
    report.log(TrainRecord(t, loss, graph.reward_estimate(), micro, macro, u, v,
                           extra or {}))


def _run_simple(method, data, params, opt, epochs, bench, weight, batch_size,
                seed, log_every):
    params = params.copy()
    opt = opt or Optimizer()
    bounds = _bounds_for(data, bench)
    report = TrainReport(method=method, seed=seed, n_domains=data.n_domains)
    per_epoch = _epochs_of(len(data), batch_size, epochs)
    total = per_epoch * epochs
    epoch_done = 0
    for t, idx in minibatch_plan(len(data), batch_size, epochs, seed):
        batch = make_batch(data, idx, bounds)
        graph = objectives.quadratic_loss(batch, params, weight)
        grads = graph.backward()
        loss = graph.root.item()
        _log_row(report, t, loss, graph, batch, None, log_every, total)
        opt.step(params.flat(), graph.theta_grad_list(grads))
        _guard(loss, params, t)
        if (t + 1) % per_epoch == 0:
            epoch_done += 1
            report.epoch_snapshots.append((epoch_done, params.copy()))
    return params, report


def train_ips(data, params, opt=None, epochs=1, bench=None, batch_size=512,
              seed=0, log_every=10):
    """Vanilla IPS minimization; constraints ignored (bench only feeds metrics)."""
    return _run_simple("ips", data, params, opt, epochs, bench, 0.0, batch_size,
                       seed, log_every)


def train_quadratic(data, params, opt=None, weight=10.0, bench=None, epochs=1,
                    batch_size=512, seed=0, log_every=10):
    """IPS plus a fixed quadratic penalty weight * (pen_min^2 + pen_max^2)."""
    return _run_simple("quadratic", data, params, opt, epochs, bench, weight,
                       batch_size, seed, log_every)


def train_minimax(data, params, opt=None, cfg=None, bench=None, epochs=1,
                  batch_size=512, seed=0, log_every=10):
    """Alternating min (policy) / max (penalty weight ascent) training.

    Every round(tau)-th iteration the dual weights take a gradient-ascent
    step with rate eta, after which eta decays by gamma and tau by xi; the
    policy step uses the same backward pass (gradients at the pre-update
    dual weights).
    """
    cfg = cfg or MinimaxConfig()
    cfg.validate()
    params = params.copy()
    opt = opt or Optimizer()
    bounds = _bounds_for(data, bench)
    report = TrainReport(method="minimax", seed=seed, n_domains=data.n_domains)
    pw = objectives.PenaltyWeights.zeros(data.n_domains)
    eta, tau = cfg.eta, cfg.tau
    per_epoch = _epochs_of(len(data), batch_size, epochs)
    total = per_epoch * epochs
    epoch_done = 0
    for t, idx in minibatch_plan(len(data), batch_size, epochs, seed):
        batch = make_batch(data, idx, bounds)
        graph = objectives.inner_loss(batch, params, pw)
        grads = graph.backward()
        loss = graph.root.item()
        _log_row(report, t, loss, graph, batch, pw, log_every, total,
                 extra={"eta": eta, "tau": tau})
        if t % max(1, int(round(tau))) == 0:
            pw.u += eta * grads[graph.u][:, 0]
            pw.v += eta * grads[graph.v][:, 0]
            pw.clamp()
            eta *= cfg.gamma
            tau *= cfg.xi
        opt.step(params.flat(), graph.theta_grad_list(grads))
        _guard(loss, params, t)
        if (t + 1) % per_epoch == 0:
            epoch_done += 1
            report.epoch_snapshots.append((epoch_done, params.copy()))
    return params, report


def metagrad_uv_gradient(batch_inner, batch_meta, params, pw, cfg, prior):
    """Gradient of the meta loss w.r.t. the dual weights, computed analytically
    through the single inner gradient-descent step (see module docstring).

    Domains absent from the inner batch (or with inactive hinges) get zero.
    """
    cfg.validate()
    graph = objectives.inner_loss(batch_inner, params, pw)
    inner_grads = graph.backward()
    theta_grads = graph.theta_grad_list(inner_grads)
    theta_prime = policy_mod.apply_step(params, theta_grads, cfg.eta_inner)
    meta_graph = objectives.meta_loss(batch_meta, theta_prime, prior, cfg.lam)
    meta_grads = meta_graph.theta_grad_list(meta_graph.backward())

    m = pw.u.size
    b = batch_inner.size
    grad_u = np.zeros(m)
    grad_v = np.zeros(m)
    for k in np.unique(batch_inner.domains):
        sel = (batch_inner.domains == k).astype(np.float64).reshape(b, 1)
        for pen_node, grad_out, log_weight in (
            (graph.pen_min, grad_u, pw.u[k]),
            (graph.pen_max, grad_v, pw.v[k]),
        ):
            if float((pen_node.data * sel).sum()) == 0.0:
                continue  # inactive hinge: exact zero gradient
            pen_grads = graph.tape.backward_from(pen_node, sel / b)
            pen_theta = graph.theta_grad_list(pen_grads)
            dot = sum(float(np.vdot(g1, g2)) for g1, g2 in zip(meta_grads, pen_theta))
            grad_out[k] = -cfg.eta_inner * np.exp(log_weight) * dot
    if not (np.isfinite(grad_u).all() and np.isfinite(grad_v).all()):
        raise DivergenceError("non-finite meta gradient for the dual weights")
    return grad_u, grad_v


def train_metagrad(data, params, opt_theta=None, opt_uv=None, cfg=None,
                   bench=None, prior=None, epochs=1, batch_size=512, seed=0,
                   log_every=10):
    """Meta-gradient dual-weight adaptation (paired disjoint batches).

    Each iteration: adapt u, v by descending the meta objective through a
    cloned one-step inner update, then take a policy step on the inner loss
    at the updated weights. The clone is discarded.
    """
    cfg = cfg or MetaGradConfig()
    cfg.validate()
    if prior is None:
        raise ConfigError("train_metagrad requires a domain prior")
    prior.validate()
    params = params.copy()
    opt_theta = opt_theta or Optimizer()
    opt_uv = opt_uv or Optimizer(lr=0.05)
    bounds = _bounds_for(data, bench)
    report = TrainReport(method="metagrad", seed=seed, n_domains=data.n_domains)
    pw = objectives.PenaltyWeights.zeros(data.n_domains)
    per_epoch = _epochs_of(len(data), batch_size, epochs, paired=True)
    total = per_epoch * epochs
    epoch_done = 0
    for t, idx_a, idx_b in minibatch_plan(len(data), batch_size, epochs, seed,
                                          paired=True):
        batch_a = make_batch(data, idx_a, bounds)
        batch_b = make_batch(data, idx_b, bounds)
        grad_u, grad_v = metagrad_uv_gradient(batch_a, batch_b, params, pw, cfg, prior)
        opt_uv.step([pw.u, pw.v], [grad_u, grad_v])
        pw.clamp()
        graph = objectives.inner_loss(batch_a, params, pw)
        grads = graph.backward()
        loss = graph.root.item()
        _log_row(report, t, loss, graph, batch_a, pw, log_every, total)
        opt_theta.step(params.flat(), graph.theta_grad_list(grads))
        _guard(loss, params, t)
        if (t + 1) % per_epoch == 0:
            epoch_done += 1
            report.epoch_snapshots.append((epoch_done, params.copy()))
    return params, report


@dataclass
class Selection:
    params: object
    epoch: int
    macro_violation: float
    reward: float


def select_best(checkpoints, validation, bench):
    """Checkpoint with the lowest validation macro violation rate.

    Ties break toward higher expected reward, then the earlier epoch.
    """
    from cobex.evaluation import expected_reward, violation_rates

    if not checkpoints:
        raise ConfigError("no checkpoints to select from")
    best = None
    for epoch, params in checkpoints:
        _, macro, _ = violation_rates(validation, params, bench)
        reward, _ = expected_reward(validation, params)
        cand = Selection(params, epoch, macro, reward)
        if best is None or (cand.macro_violation, -cand.reward, cand.epoch) < (
            best.macro_violation, -best.reward, best.epoch
        ):
            best = cand
    return best

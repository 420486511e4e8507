"""Synthetic logged-bandit environment with ground-truth oracles.

The hidden reward model and the logging policy share one bounded scoring
MLP: the logging policy is the softmax of those scores at a temperature
(folded into its final layer, so its checkpoint is an ordinary policy), and
the reward is Bernoulli with success probability sigmoid(scale * score +
bias). This mirrors a production policy that has already converged on the
reward signal it is being retrained on.

Per-sample randomness is counter-based: sample i is generated from a Philox
stream keyed by (seed, i), so generation is order-independent and any
subset is reproducible in isolation.
"""

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from cobex import policy as policy_mod
from cobex.data import PROPENSITY_FLOOR, Dataset
from cobex.errors import ConfigError

# assistant-flavored domain labels; extended with numbered names past 12
DOMAIN_NAMES = (
    "music", "home_automation", "shopping", "knowledge", "notifications",
    "video", "weather", "communication", "calendar", "news", "sports",
    "smalltalk",
)

MC_KEY_OFFSET = 1 << 48  # keeps oracle streams disjoint from dataset streams


@dataclass(frozen=True)
class EnvSpec:
    seed: int = 0
    n_domains: int = 8
    zipf_exponent: float = 1.1
    d_context: int = 16
    d_candidate: int = 8
    min_candidates: int = 2
    max_candidates: int = 8
    temperature: float = 1.0
    score_bound: float = 2.4
    hidden_gain: float = 0.5
    reward_scale: float = 0.15
    reward_bias: float = 0.3
    hidden: tuple = (32, 32)

    def validate(self):
        if self.n_domains < 1:
            raise ConfigError("need at least one domain")
        if self.d_context < 1 or self.d_candidate < 1:
            raise ConfigError("feature dims must be >= 1")
        if not 1 <= self.min_candidates <= self.max_candidates <= policy_mod.MAX_CANDIDATES:
            raise ConfigError("invalid candidate count range")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.score_bound <= 0 or self.hidden_gain <= 0:
            raise ConfigError("score_bound and hidden_gain must be positive")


def zipf_prior(n_domains, exponent):
    ranks = np.arange(1, n_domains + 1, dtype=np.float64)
    w = ranks ** (-exponent)
    return w / w.sum()


def domain_names(n_domains):
    names = list(DOMAIN_NAMES[:n_domains])
    names += [f"domain_{i:02d}" for i in range(len(names), n_domains)]
    return names


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _sample_rng(seed, index):
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class Environment:
    """Fixed hidden reward model, logging policy, and domain prior."""

    def __init__(self, spec):
        spec.validate()
        self.spec = spec
        self.prior = zipf_prior(spec.n_domains, spec.zipf_exponent)
        self.domain_names = domain_names(spec.n_domains)
        rng = np.random.default_rng(spec.seed)
        dims = (spec.d_context + spec.d_candidate, *spec.hidden, 1)
        base = policy_mod.init_policy(int(rng.integers(2**31)), dims)
        for i in range(len(base.weights) - 1):
            base.weights[i] *= spec.hidden_gain
        # cap |score| so min logging propensity has a hard floor:
        # softmax min >= exp(-2 * bound / T) / n_candidates
        w_last, b_last = base.weights[-1], base.biases[-1]
        hard = float(np.abs(w_last).sum() + np.abs(b_last).sum())
        factor = spec.score_bound / hard
        w_last *= factor
        b_last *= factor
        self.score_params = base
        self.logging_params = base.copy()
        self.logging_params.weights[-1] /= spec.temperature
        self.logging_params.biases[-1] /= spec.temperature
        self.domain_embeddings = rng.standard_normal((spec.n_domains, spec.d_context))
        self.fingerprint = self._fingerprint()

    def _fingerprint(self):
        digest = hashlib.sha256()
        digest.update(json.dumps(asdict(self.spec), sort_keys=True).encode())
        for arr in self.logging_params.flat():
            digest.update(arr.tobytes())
        digest.update(self.domain_embeddings.tobytes())
        return digest.hexdigest()[:16]

    def min_logging_propensity_bound(self):
        s = self.spec
        return np.exp(-2.0 * s.score_bound / s.temperature) / s.max_candidates

    def scores(self, context, candidates):
        """Hidden bounded scores for each candidate."""
        cs = policy_mod.CandidateSet(context=context, features=candidates)
        return policy_mod.forward_scores(self.score_params, policy_mod.candidate_inputs(cs))

    def success_prob(self, context, candidates):
        """Exact Bernoulli success probability for each candidate."""
        s = self.scores(context, candidates)
        return _sigmoid(self.spec.reward_scale * s + self.spec.reward_bias)

    def draw_context(self, rng):
        k = int(rng.choice(self.spec.n_domains, p=self.prior))
        x = rng.standard_normal(self.spec.d_context) + self.domain_embeddings[k]
        n_c = int(rng.integers(self.spec.min_candidates, self.spec.max_candidates + 1))
        cands = rng.standard_normal((n_c, self.spec.d_candidate))
        return k, x, cands

    def logging_propensities(self, context, candidates):
        cs = policy_mod.CandidateSet(context=context, features=candidates)
        return policy_mod.propensities(self.logging_params, cs)


def gen_env(spec):
    return Environment(spec)


def _generate_packed(env, n, start_index):
    spec = env.spec
    width = spec.max_candidates
    contexts = np.zeros((n, spec.d_context))
    candidates = np.zeros((n, width, spec.d_candidate))
    ncs = np.zeros(n, dtype=np.int64)
    props = np.zeros((n, width))
    actions = np.zeros(n, dtype=np.int64)
    rewards = np.zeros(n)
    domains = np.zeros(n, dtype=np.int64)
    for j in range(n):
        rng = _sample_rng(spec.seed, start_index + j)
        k, x, cands = env.draw_context(rng)
        p0 = env.logging_propensities(x, cands)
        if p0.min() < PROPENSITY_FLOOR:
            raise ConfigError(
                f"logging propensity {p0.min():.3g} below floor "
                f"{PROPENSITY_FLOOR}; raise the temperature or lower score_bound"
            )
        a = int(rng.choice(p0.size, p=p0))
        success = env.success_prob(x, cands)[a]
        contexts[j] = x
        candidates[j, : cands.shape[0]] = cands
        ncs[j] = cands.shape[0]
        props[j, : p0.size] = p0
        actions[j] = a
        rewards[j] = float(rng.random() < success)
        domains[j] = k
    return contexts, candidates, ncs, props, actions, rewards, domains


def gen_dataset(env, n, splits=(0.85, 0.10, 0.05)):
    """Generate (train, validation, test) datasets of ``n`` samples total."""
    splits = tuple(float(f) for f in splits)
    if len(splits) != 3 or any(f < 0 for f in splits) or abs(sum(splits) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be >= 0 and sum to 1, got {splits}")
    n_train = int(round(n * splits[0]))
    n_val = int(round(n * splits[1]))
    n_test = n - n_train - n_val
    if n_test < 0:
        raise ConfigError("rounded split sizes exceed the sample count")
    out = []
    start = 0
    for count, tag in ((n_train, "train"), (n_val, "validation"), (n_test, "test")):
        arrays = _generate_packed(env, count, start)
        out.append(
            Dataset(*arrays, domain_names=env.domain_names, split=tag,
                    fingerprint=env.fingerprint)
        )
        start += count
    return tuple(out)


def true_policy_value(env, params, n_mc, mc_seed=0):
    """Monte Carlo ground-truth expected reward of a policy.

    Uses the reward model's exact success probabilities, so the only noise
    is over contexts and the policy's own action sampling.
    """
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1")
    vals = np.zeros(n_mc)
    for j in range(n_mc):
        rng = _sample_rng(env.spec.seed, MC_KEY_OFFSET + mc_seed * n_mc + j)
        _, x, cands = env.draw_context(rng)
        cs = policy_mod.CandidateSet(context=x, features=cands)
        a = policy_mod.sample_action(params, cs, rng)
        vals[j] = env.success_prob(x, cands)[a]
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0


def true_replication_profile(env, params, n_mc, mc_seed=0):
    """Monte Carlo per-domain mean replication of a policy vs the logger.

    Returns (means, counts); domains never drawn get mean nan and count 0.
    """
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1")
    sums = np.zeros(env.spec.n_domains)
    counts = np.zeros(env.spec.n_domains, dtype=np.int64)
    from cobex.objectives import replication

    for j in range(n_mc):
        rng = _sample_rng(env.spec.seed, MC_KEY_OFFSET + mc_seed * n_mc + j)
        k, x, cands = env.draw_context(rng)
        cs = policy_mod.CandidateSet(context=x, features=cands)
        p_new = policy_mod.propensities(params, cs)
        p_log = env.logging_propensities(x, cands)
        sums[k] += replication(p_new, p_log)
        counts[k] += 1
    means = np.full(env.spec.n_domains, np.nan)
    present = counts > 0
    means[present] = sums[present] / counts[present]
    return means, counts

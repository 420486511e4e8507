"""Synthetic environment: determinism, priors, floors, oracle agreement."""

import numpy as np
import pytest

from cobex import evaluation, policy
from cobex.data import PROPENSITY_FLOOR
from cobex.errors import ConfigError
from cobex.synthenv import (
    EnvSpec,
    gen_dataset,
    gen_env,
    true_policy_value,
    true_replication_profile,
    zipf_prior,
)
from conftest import SMALL_SPEC


def test_env_fingerprint_deterministic():
    a = gen_env(EnvSpec(seed=5))
    b = gen_env(EnvSpec(seed=5))
    assert a.fingerprint == b.fingerprint
    c = gen_env(EnvSpec(seed=6))
    assert a.fingerprint != c.fingerprint


def test_dataset_deterministic(small_env):
    a = gen_dataset(small_env, 100)
    b = gen_dataset(small_env, 100)
    for da, db in zip(a, b):
        assert np.array_equal(da.contexts, db.contexts)
        assert np.array_equal(da.propensities, db.propensities)
        assert np.array_equal(da.rewards, db.rewards)


def test_single_domain_env():
    env = gen_env(EnvSpec(seed=1, n_domains=1, d_context=3, d_candidate=2,
                          min_candidates=2, max_candidates=3, hidden=(4,)))
    assert env.prior.tolist() == [1.0]
    train, _, _ = gen_dataset(env, 40)
    assert (train.domains == 0).all()


def test_zipf_prior_imbalance():
    prior = zipf_prior(27, 1.1)
    assert abs(prior.sum() - 1.0) < 1e-12
    assert prior[0] / prior[-1] >= 10.0
    assert (np.diff(prior) < 0).all()


def test_empty_dataset():
    env = gen_env(SMALL_SPEC)
    train, val, test = gen_dataset(env, 0)
    assert len(train) == len(val) == len(test) == 0


def test_split_sizes_and_disjoint_fingerprints(small_env):
    train, val, test = gen_dataset(small_env, 200, (0.85, 0.10, 0.05))
    assert len(train) == 170 and len(val) == 20 and len(test) == 10
    assert train.split == "train" and val.split == "validation" and test.split == "test"
    assert train.fingerprint == val.fingerprint == test.fingerprint
    # disjoint: no context row repeats across splits
    all_rows = np.vstack([train.contexts, val.contexts, test.contexts])
    assert np.unique(all_rows, axis=0).shape[0] == 200


def test_bad_split_fractions(small_env):
    with pytest.raises(ConfigError):
        gen_dataset(small_env, 10, (0.5, 0.2, 0.2))


def test_propensity_floor_met(small_env):
    train, val, test = gen_dataset(small_env, 500)
    for ds in (train, val, test):
        active = ds.mask.astype(bool)
        assert ds.propensities[active].min() >= 1e-3  # design target
        chosen = ds.propensities[np.arange(len(ds)), ds.actions]
        assert chosen.min() >= PROPENSITY_FLOOR


def test_generator_raises_when_temperature_too_low():
    spec = EnvSpec(seed=2, n_domains=2, d_context=3, d_candidate=2,
                   min_candidates=2, max_candidates=4, temperature=0.05,
                   hidden=(4,))
    env = gen_env(spec)
    with pytest.raises(ConfigError, match="temperature"):
        gen_dataset(env, 50)


def test_logged_propensities_recompute_bit_exact(small_env, tmp_path):
    train, _, _ = gen_dataset(small_env, 60)
    path = tmp_path / "logger.npz"
    policy.save_checkpoint(small_env.logging_params, path,
                           fingerprint=small_env.fingerprint)
    loaded, fp = policy.load_checkpoint(path)
    assert fp == small_env.fingerprint
    for i in range(len(train)):
        s = train[i]
        cs = policy.CandidateSet(context=s.context, features=s.candidates)
        again = policy.propensities(loaded, cs)
        assert np.array_equal(again, s.propensities)


def test_domain_frequencies_match_prior(small_env):
    train, _, _ = gen_dataset(small_env, 20000)
    n = len(train)
    freq = np.bincount(train.domains, minlength=3) / n
    sigma = np.sqrt(small_env.prior * (1 - small_env.prior) / n)
    assert (np.abs(freq - small_env.prior) <= 3 * sigma).all()


def test_true_value_uniform_policy_matches_enumeration(small_env):
    uniform = policy.init_policy(0, (6, 4, 1))
    for w in uniform.weights:
        w[:] = 0.0
    n_mc = 4000
    est, se = true_policy_value(small_env, uniform, n_mc, mc_seed=1)
    # enumeration oracle: expected success prob under uniform action choice
    from cobex.synthenv import MC_KEY_OFFSET, _sample_rng

    vals = []
    for j in range(n_mc):
        rng = _sample_rng(small_env.spec.seed, MC_KEY_OFFSET + 1 * n_mc + j)
        _, x, cands = small_env.draw_context(rng)
        vals.append(small_env.success_prob(x, cands).mean())
    oracle = float(np.mean(vals))
    oracle_se = float(np.std(vals, ddof=1) / np.sqrt(n_mc))
    assert abs(est - oracle) <= 4 * np.sqrt(se**2 + oracle_se**2)


def test_true_value_greedy_policy_beats_uniform(small_env):
    greedy = small_env.logging_params.copy()
    greedy.weights[-1] *= 50.0  # sharpen toward the argmax of the score
    greedy.biases[-1] *= 50.0
    v_greedy, _ = true_policy_value(small_env, greedy, 2000)
    uniform = policy.init_policy(0, (6, 4, 1))
    for w in uniform.weights:
        w[:] = 0.0
    v_uniform, _ = true_policy_value(small_env, uniform, 2000)
    assert v_greedy > v_uniform


def test_replication_profile_identity(small_env):
    means, counts = true_replication_profile(small_env, small_env.logging_params, 600)
    present = counts > 0
    assert present.any()
    assert np.allclose(means[present], 1.0)


def test_replication_profile_random_policy(small_env):
    rand = policy.init_policy(123, (6, 4, 1))
    means, counts = true_replication_profile(small_env, rand, 600)
    present = counts > 0
    assert ((means[present] > 0) & (means[present] < 1)).all()


def test_replication_profile_matches_dataset_estimate(small_env):
    rand = policy.init_policy(9, (6, 4, 1))
    n = 4000
    means, counts = true_replication_profile(small_env, rand, n)
    train, _, _ = gen_dataset(small_env, n, (1.0, 0.0, 0.0))
    repl = np.zeros(len(train))
    for i in range(len(train)):
        s = train[i]
        cs = policy.CandidateSet(context=s.context, features=s.candidates)
        p = policy.propensities(rand, cs)
        repl[i] = 1.0 - 0.5 * np.abs(p - s.propensities).sum()
    for k in range(3):
        sel = train.domains == k
        if counts[k] == 0 or sel.sum() < 30:
            continue
        se = np.sqrt(repl[sel].var(ddof=1) / sel.sum() + 0.25 / counts[k])
        assert abs(repl[sel].mean() - means[k]) <= 4 * se + 1e-3


def test_ips_estimate_consistent_with_oracle(small_env):
    perturbed = small_env.logging_params.copy()
    rng = np.random.default_rng(5)
    for w in perturbed.flat():
        w += 0.05 * rng.standard_normal(w.shape)
    train, _, _ = gen_dataset(small_env, 20000, (1.0, 0.0, 0.0))
    est, est_se = evaluation.expected_reward(train, perturbed)
    oracle, oracle_se = true_policy_value(small_env, perturbed, 20000)
    assert abs(est - oracle) <= 4 * np.sqrt(est_se**2 + oracle_se**2)

"""Logged samples, dataset packing, JSONL round-trips, batch assembly."""

import numpy as np
import pytest

from cobex import constraints
from cobex.data import (
    PROPENSITY_FLOOR,
    Dataset,
    LoggedSample,
    empirical_prior,
    load_dataset,
    make_batch,
    save_dataset,
)
from cobex.errors import ConfigError, PropensityFloorError


def _sample(p0=(0.5, 0.5), action=0, reward=1.0, domain=0):
    p0 = np.asarray(p0, dtype=np.float64)
    n = p0.size
    return LoggedSample(
        context=np.zeros(3),
        candidates=np.zeros((n, 2)),
        propensities=p0,
        action=action,
        reward=reward,
        domain=domain,
    )


def test_sample_validation_passes():
    _sample().validate(n_domains=2)


def test_sample_floor_rejected():
    s = _sample(p0=(PROPENSITY_FLOOR / 2, 1 - PROPENSITY_FLOOR / 2), action=0)
    with pytest.raises(PropensityFloorError):
        s.validate()


def test_sample_invariant_errors():
    with pytest.raises(ConfigError):
        _sample(p0=(0.7, 0.7)).validate()
    with pytest.raises(ConfigError):
        _sample(action=5).validate()
    with pytest.raises(ConfigError):
        _sample(reward=1.5).validate()
    with pytest.raises(ConfigError):
        _sample(domain=9).validate(n_domains=2)


def test_dataset_pack_and_views():
    samples = [
        _sample(p0=(0.25, 0.25, 0.5), action=2, reward=0.0, domain=1),
        _sample(p0=(0.5, 0.5), action=1, reward=1.0, domain=0),
    ]
    ds = Dataset.from_samples(samples, ["a", "b"], split="train", fingerprint="fp")
    assert len(ds) == 2
    assert ds.max_candidates == 3
    assert ds.mask.tolist() == [[1, 1, 1], [1, 1, 0]]
    back = ds[0]
    assert back.action == 2
    assert back.propensities.tolist() == [0.25, 0.25, 0.5]
    assert ds[1].candidates.shape == (2, 2)
    sub = ds.subset([1], split="test")
    assert len(sub) == 1 and sub.split == "test"
    assert sub[0].action == 1


def test_jsonl_roundtrip_bit_exact(tmp_path, small_splits):
    train = small_splits[0]
    path = tmp_path / "train.jsonl"
    save_dataset(train, path)
    loaded = load_dataset(path)
    assert loaded.fingerprint == train.fingerprint
    assert loaded.split == train.split
    assert loaded.domain_names == train.domain_names
    for name in ("contexts", "candidates", "propensities", "rewards"):
        assert np.array_equal(getattr(loaded, name), getattr(train, name)), name
    for name in ("n_candidates", "actions", "domains"):
        assert np.array_equal(getattr(loaded, name), getattr(train, name)), name


def test_load_rejects_floor_violation(tmp_path):
    ds = Dataset.from_samples([_sample()], ["a"], fingerprint="x")
    path = tmp_path / "bad.jsonl"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    rec = lines[1].replace("0.5, 0.5", "1e-06, 0.999999")
    import json

    doc = json.loads(lines[1])
    doc["p0"] = [1e-6, 1 - 1e-6]
    lines[1] = json.dumps(doc)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(PropensityFloorError):
        load_dataset(path)


def test_load_rejects_wrong_format(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text('{"format": "other"}\n')
    with pytest.raises(ConfigError):
        load_dataset(path)


def test_empirical_prior_smoothing():
    ds = Dataset.from_samples(
        [_sample(domain=0), _sample(domain=0), _sample(domain=1)],
        ["a", "b", "c"],
    )
    prior = empirical_prior(ds)
    assert prior.shape == (3,)
    assert (prior > 0).all()
    assert abs(prior.sum() - 1.0) < 1e-12
    assert prior[0] > prior[1] > prior[2]


def test_make_batch_fields(small_train):
    bench = constraints.load_benchmark("global")
    bounds = constraints.resolve_bounds(bench, small_train.domain_names)
    idx = np.arange(8)
    batch = make_batch(small_train, idx, bounds)
    assert batch.size == 8
    assert batch.flat_input.shape == (8 * small_train.max_candidates,
                                      small_train.d_context + small_train.d_candidate)
    assert batch.c_min.shape == (8, 1)
    assert (batch.c_min == 0.99).all() and (batch.c_max == 1.0).all()
    rows = np.arange(8)
    expected = -small_train.rewards[idx] / small_train.propensities[idx, :][
        rows, small_train.actions[idx]]
    assert np.allclose(batch.ips_coeff[:, 0], expected)
    # flat input rows interleave context|candidate per slot
    i, j = 3, 2
    row = batch.flat_input[i * small_train.max_candidates + j]
    assert np.array_equal(row[: small_train.d_context], small_train.contexts[idx[i]])
    assert np.array_equal(row[small_train.d_context:], small_train.candidates[idx[i], j])

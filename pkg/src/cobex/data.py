"""Logged bandit interactions and their on-disk format.

A dataset is stored packed (padded candidate axes) for fast minibatching;
individual records materialize as :class:`LoggedSample` views. The file
format is line-delimited JSON with one header line (environment fingerprint,
dims, domain names) followed by one record per sample; floats survive the
round trip bit-exactly via repr-based JSON encoding.

Samples whose chosen-action propensity is below ``PROPENSITY_FLOOR`` are
rejected at load time rather than clipped, keeping the IPS estimator
unbiased on the retained data.
"""

import json
from dataclasses import dataclass

import numpy as np

from cobex.errors import ConfigError, PropensityFloorError, ShapeError

PROPENSITY_FLOOR = 1e-4
FORMAT_NAME = "cobex-dataset"
FORMAT_VERSION = 1
SIMPLEX_TOL = 1e-8


@dataclass
class LoggedSample:
    """One logged interaction under the current production policy."""

    context: np.ndarray      # (d_x,)
    candidates: np.ndarray   # (n_candidates, d_c)
    propensities: np.ndarray  # logging-policy probabilities over candidates
    action: int
    reward: float
    domain: int

    def validate(self, n_domains=None):
        n = self.candidates.shape[0]
        if self.propensities.shape != (n,):
            raise ShapeError("propensity vector length != candidate count")
        if not (np.isfinite(self.context).all() and np.isfinite(self.candidates).all()):
            raise ConfigError("non-finite features in logged sample")
        if abs(float(self.propensities.sum()) - 1.0) > SIMPLEX_TOL or (self.propensities < 0).any():
            raise ConfigError("logged propensities are not a probability vector")
        if not 0 <= self.action < n:
            raise ConfigError(f"action {self.action} outside candidate set of size {n}")
        if self.propensities[self.action] < PROPENSITY_FLOOR:
            raise PropensityFloorError(
                f"chosen-action propensity {self.propensities[self.action]:.3g} "
                f"below floor {PROPENSITY_FLOOR}"
            )
        if not 0.0 <= self.reward <= 1.0:
            raise ConfigError(f"reward {self.reward} outside [0, 1]")
        if n_domains is not None and not 0 <= self.domain < n_domains:
            raise ConfigError(f"domain id {self.domain} outside [0, {n_domains})")


class Dataset:
    """Packed logged samples plus split tag and environment fingerprint."""

    def __init__(self, contexts, candidates, n_candidates, propensities,
                 actions, rewards, domains, domain_names, split="train",
                 fingerprint=""):
        self.contexts = np.ascontiguousarray(contexts, dtype=np.float64)
        self.candidates = np.ascontiguousarray(candidates, dtype=np.float64)
        self.n_candidates = np.ascontiguousarray(n_candidates, dtype=np.int64)
        self.propensities = np.ascontiguousarray(propensities, dtype=np.float64)
        self.actions = np.ascontiguousarray(actions, dtype=np.int64)
        self.rewards = np.ascontiguousarray(rewards, dtype=np.float64)
        self.domains = np.ascontiguousarray(domains, dtype=np.int64)
        self.domain_names = list(domain_names)
        self.split = split
        self.fingerprint = fingerprint
        slots = np.arange(self.candidates.shape[1])
        self.mask = (slots[None, :] < self.n_candidates[:, None]).astype(np.uint8)

    def __len__(self):
        return self.contexts.shape[0]

    @property
    def d_context(self):
        return self.contexts.shape[1]

    @property
    def d_candidate(self):
        return self.candidates.shape[2]

    @property
    def max_candidates(self):
        return self.candidates.shape[1]

    @property
    def n_domains(self):
        return len(self.domain_names)

    def __getitem__(self, i):
        n = int(self.n_candidates[i])
        return LoggedSample(
            context=self.contexts[i],
            candidates=self.candidates[i, :n],
            propensities=self.propensities[i, :n],
            action=int(self.actions[i]),
            reward=float(self.rewards[i]),
            domain=int(self.domains[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices, split=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.contexts[indices],
            self.candidates[indices],
            self.n_candidates[indices],
            self.propensities[indices],
            self.actions[indices],
            self.rewards[indices],
            self.domains[indices],
            self.domain_names,
            split=self.split if split is None else split,
            fingerprint=self.fingerprint,
        )

    def validate(self):
        for i in range(len(self)):
            try:
                self[i].validate(n_domains=self.n_domains)
            except Exception as exc:
                raise type(exc)(f"sample {i}: {exc}") from exc

    @classmethod
    def from_samples(cls, samples, domain_names, split="train", fingerprint="",
                     max_candidates=None):
        n = len(samples)
        if n == 0:
            raise ConfigError("cannot pack an empty sample list without dims")
        d_x = samples[0].context.size
        d_c = samples[0].candidates.shape[1]
        width = max_candidates or max(s.candidates.shape[0] for s in samples)
        contexts = np.zeros((n, d_x))
        candidates = np.zeros((n, width, d_c))
        ncs = np.zeros(n, dtype=np.int64)
        props = np.zeros((n, width))
        actions = np.zeros(n, dtype=np.int64)
        rewards = np.zeros(n)
        domains = np.zeros(n, dtype=np.int64)
        for i, s in enumerate(samples):
            k = s.candidates.shape[0]
            contexts[i] = s.context
            candidates[i, :k] = s.candidates
            ncs[i] = k
            props[i, :k] = s.propensities
            actions[i] = s.action
            rewards[i] = s.reward
            domains[i] = s.domain
        return cls(contexts, candidates, ncs, props, actions, rewards, domains,
                   domain_names, split=split, fingerprint=fingerprint)


def empirical_prior(dataset, smoothing=1.0):
    """Per-domain frequency with additive smoothing so every entry is > 0."""
    counts = np.bincount(dataset.domains, minlength=dataset.n_domains).astype(np.float64)
    counts += smoothing
    return counts / counts.sum()


def save_dataset(dataset, path):
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "fingerprint": dataset.fingerprint,
        "split": dataset.split,
        "domains": dataset.domain_names,
        "d_context": dataset.d_context,
        "d_candidate": dataset.d_candidate,
        "max_candidates": dataset.max_candidates,
        "n": len(dataset),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in dataset:
            rec = {
                "context": s.context.tolist(),
                "candidates": s.candidates.tolist(),
                "p0": s.propensities.tolist(),
                "action": s.action,
                "reward": s.reward,
                "domain": dataset.domain_names[s.domain],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path, validate=True):
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise ConfigError(f"{path}: empty dataset file")
        header = json.loads(header_line)
        if header.get("format") != FORMAT_NAME:
            raise ConfigError(f"{path}: not a {FORMAT_NAME} file")
        if header.get("version") != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported version {header.get('version')}")
        domain_names = list(header["domains"])
        name_to_id = {name: i for i, name in enumerate(domain_names)}
        n = int(header["n"])
        width = int(header["max_candidates"])
        contexts = np.zeros((n, int(header["d_context"])))
        candidates = np.zeros((n, width, int(header["d_candidate"])))
        ncs = np.zeros(n, dtype=np.int64)
        props = np.zeros((n, width))
        actions = np.zeros(n, dtype=np.int64)
        rewards = np.zeros(n)
        domains = np.zeros(n, dtype=np.int64)
        for i in range(n):
            line = fh.readline()
            if not line:
                raise ConfigError(f"{path}: expected {n} records, found {i}")
            rec = json.loads(line)
            cand = np.asarray(rec["candidates"], dtype=np.float64)
            k = cand.shape[0]
            contexts[i] = rec["context"]
            candidates[i, :k] = cand
            ncs[i] = k
            props[i, :k] = rec["p0"]
            actions[i] = rec["action"]
            rewards[i] = rec["reward"]
            domains[i] = name_to_id[rec["domain"]]
    ds = Dataset(contexts, candidates, ncs, props, actions, rewards, domains,
                 domain_names, split=header.get("split", "train"),
                 fingerprint=header.get("fingerprint", ""))
    if validate:
        ds.validate()
    return ds


@dataclass
class PackedBatch:
    """Minibatch arrays ready for graph building; bounds already resolved."""

    flat_input: np.ndarray   # (B * N, d_x + d_c)
    mask: np.ndarray         # (B, N) uint8
    p0: np.ndarray           # (B, N) padded logging propensities
    actions: np.ndarray      # (B,)
    rewards: np.ndarray      # (B,)
    domains: np.ndarray      # (B,)
    c_min: np.ndarray        # (B, 1)
    c_max: np.ndarray        # (B, 1)
    ips_coeff: np.ndarray    # (B, 1): -reward / p0[action]

    @property
    def size(self):
        return self.actions.shape[0]

    @property
    def n_slots(self):
        return self.p0.shape[1]


def make_batch(dataset, indices, bounds):
    """Assemble a PackedBatch; ``bounds`` is the (M, 2) per-domain array."""
    indices = np.asarray(indices, dtype=np.int64)
    b = indices.size
    n = dataset.max_candidates
    ctx = dataset.contexts[indices]
    cand = dataset.candidates[indices]
    flat_ctx = np.repeat(ctx[:, None, :], n, axis=1)
    flat = np.concatenate([flat_ctx, cand], axis=2).reshape(b * n, -1)
    actions = dataset.actions[indices]
    rewards = dataset.rewards[indices]
    domains = dataset.domains[indices]
    p0 = dataset.propensities[indices]
    p0_chosen = p0[np.arange(b), actions]
    per_sample = bounds[domains]
    return PackedBatch(
        flat_input=np.ascontiguousarray(flat),
        mask=np.ascontiguousarray(dataset.mask[indices]),
        p0=np.ascontiguousarray(p0),
        actions=actions,
        rewards=rewards,
        domains=domains,
        c_min=np.ascontiguousarray(per_sample[:, 0:1]),
        c_max=np.ascontiguousarray(per_sample[:, 1:2]),
        ips_coeff=np.ascontiguousarray((-rewards / p0_chosen).reshape(b, 1)),
    )

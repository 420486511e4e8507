"""Held-out evaluation metrics and method comparison reports.

A sample violates its constraint iff its replication falls strictly outside
the resolved [c_min, c_max] interval (boundary values are feasible). Micro
rates average over samples, macro rates average per-domain rates over the
domains present in the split. Violation reduction compares rates against a
baseline method's mean rate; it is undefined (None) when the baseline rate
is zero.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from cobex import constraints as constraints_mod
from cobex import policy as policy_mod
from cobex.errors import ConfigError, ReportError

EVAL_CHUNK = 8192


def _scan(dataset, params, chunk=EVAL_CHUNK):
    """Per-sample replication and propensity ratio of the chosen action."""
    n = len(dataset)
    repl = np.zeros(n)
    ratio = np.zeros(n)
    for s in range(0, n, chunk):
        sl = slice(s, min(s + chunk, n))
        p = policy_mod.propensity_matrix(
            params, dataset.contexts[sl], dataset.candidates[sl], dataset.mask[sl]
        )
        p0 = dataset.propensities[sl]
        repl[sl] = 1.0 - 0.5 * np.abs(p - p0).sum(axis=1)
        rows = np.arange(p.shape[0])
        acts = dataset.actions[sl]
        ratio[sl] = p[rows, acts] / p0[rows, acts]
    return repl, ratio


def violation_rates(dataset, params, bench):
    """(micro, macro, per-domain map) violation rates on a dataset."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    bounds = constraints_mod.resolve_bounds(bench, dataset.domain_names)
    repl, _ = _scan(dataset, params)
    per_sample = bounds[dataset.domains]
    viol = (repl < per_sample[:, 0]) | (repl > per_sample[:, 1])
    micro = float(viol.mean())
    per_domain = {}
    for k in np.unique(dataset.domains):
        sel = dataset.domains == k
        per_domain[dataset.domain_names[k]] = float(viol[sel].mean())
    macro = float(np.mean(list(per_domain.values())))
    return micro, macro, per_domain


def expected_reward(dataset, params):
    """IPS estimate of the policy's expected reward, with its standard error."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    _, ratio = _scan(dataset, params)
    terms = dataset.rewards * ratio
    est = float(terms.mean())
    se = float(terms.std(ddof=1) / np.sqrt(terms.size)) if terms.size > 1 else 0.0
    return est, se


def replication_rate(dataset, params):
    """Mean replication of the policy against the logged propensities."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    repl, _ = _scan(dataset, params)
    return float(repl.mean())


@dataclass
class EvalResult:
    method: str
    seed: int
    n_samples: int
    reward: float
    reward_stderr: float
    micro_violation: float
    macro_violation: float
    replication: float
    per_domain_violation: dict = field(default_factory=dict)
    domain_counts: dict = field(default_factory=dict)
    fingerprint: str = ""
    fingerprint_mismatch: bool = False

    def to_dict(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "reward": self.reward,
            "reward_stderr": self.reward_stderr,
            "micro_violation": self.micro_violation,
            "macro_violation": self.macro_violation,
            "replication": self.replication,
            "per_domain_violation": self.per_domain_violation,
            "domain_counts": self.domain_counts,
            "fingerprint": self.fingerprint,
            "fingerprint_mismatch": self.fingerprint_mismatch,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def evaluate(dataset, params, bench, method="", seed=0, fingerprint="",
             fingerprint_mismatch=False):
    micro, macro, per_domain = violation_rates(dataset, params, bench)
    reward, stderr = expected_reward(dataset, params)
    counts = {
        dataset.domain_names[k]: int((dataset.domains == k).sum())
        for k in np.unique(dataset.domains)
    }
    return EvalResult(
        method=method,
        seed=seed,
        n_samples=len(dataset),
        reward=reward,
        reward_stderr=stderr,
        micro_violation=micro,
        macro_violation=macro,
        replication=replication_rate(dataset, params),
        per_domain_violation=per_domain,
        domain_counts=counts,
        fingerprint=fingerprint,
        fingerprint_mismatch=fingerprint_mismatch,
    )


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


@dataclass
class MethodSummary:
    method: str
    n_runs: int
    reward_mean: float
    reward_std: float
    micro_mean: float
    micro_std: float
    macro_mean: float
    macro_std: float
    replication_mean: float
    replication_std: float
    # percent reduction vs the baseline's mean rate; None if baseline rate is 0
    micro_reduction_mean: float = None
    micro_reduction_std: float = None
    macro_reduction_mean: float = None
    macro_reduction_std: float = None


@dataclass
class ComparisonReport:
    baseline: str
    benchmark: str
    methods: list  # MethodSummary, fixed order

    def to_json(self):
        doc = {
            "baseline": self.baseline,
            "benchmark": self.benchmark,
            "methods": [vars(m) for m in self.methods],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    CSV_COLUMNS = (
        "method,runs,reward_mean,reward_std,"
        "macro_violation_mean,macro_violation_std,"
        "micro_violation_mean,micro_violation_std,"
        "macro_reduction_mean,macro_reduction_std,"
        "micro_reduction_mean,micro_reduction_std,"
        "replication_mean,replication_std"
    )

    def to_csv(self):
        def fmt(x):
            return "n/a" if x is None else repr(x)

        lines = [self.CSV_COLUMNS]
        for m in self.methods:
            lines.append(
                ",".join(
                    [m.method, str(m.n_runs)]
                    + [
                        fmt(v)
                        for v in (
                            m.reward_mean, m.reward_std,
                            m.macro_mean, m.macro_std,
                            m.micro_mean, m.micro_std,
                            m.macro_reduction_mean, m.macro_reduction_std,
                            m.micro_reduction_mean, m.micro_reduction_std,
                            m.replication_mean, m.replication_std,
                        )
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def compare(results_by_method, baseline="ips", benchmark=""):
    """Aggregate per-seed EvalResults into a comparison report.

    ``results_by_method`` maps method name -> list of EvalResult over seeds.
    Reductions are percentages relative to the baseline's mean rate:
    100 * (1 - rate / baseline_mean_rate).
    """
    if baseline not in results_by_method:
        raise ReportError(f"baseline method {baseline!r} missing from results")
    base_micro = np.mean([r.micro_violation for r in results_by_method[baseline]])
    base_macro = np.mean([r.macro_violation for r in results_by_method[baseline]])
    summaries = []
    for method, results in results_by_method.items():
        if not results:
            raise ReportError(f"no results for method {method!r}")
        reward_mean, reward_std = _mean_std([r.reward for r in results])
        micro_mean, micro_std = _mean_std([r.micro_violation for r in results])
        macro_mean, macro_std = _mean_std([r.macro_violation for r in results])
        repl_mean, repl_std = _mean_std([r.replication for r in results])
        summary = MethodSummary(
            method=method,
            n_runs=len(results),
            reward_mean=reward_mean,
            reward_std=reward_std,
            micro_mean=micro_mean,
            micro_std=micro_std,
            macro_mean=macro_mean,
            macro_std=macro_std,
            replication_mean=repl_mean,
            replication_std=repl_std,
        )
        if base_micro > 0:
            reds = [100.0 * (1.0 - r.micro_violation / base_micro) for r in results]
            summary.micro_reduction_mean, summary.micro_reduction_std = _mean_std(reds)
        if base_macro > 0:
            reds = [100.0 * (1.0 - r.macro_violation / base_macro) for r in results]
            summary.macro_reduction_mean, summary.macro_reduction_std = _mean_std(reds)
        summaries.append(summary)
    return ComparisonReport(baseline=baseline, benchmark=benchmark, methods=summaries)

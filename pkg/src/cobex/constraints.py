"""Per-domain replication constraint benchmarks.

A benchmark is a named list of (domain, min_replication, max_replication)
records, optionally with a DEFAULT record applying to every domain without an
explicit one. Lookups fall back DEFAULT -> (0, 1). Three benchmark files ship
with the package: ``global``, ``critical`` and ``explore``.
"""

import importlib.resources
from dataclasses import dataclass

import numpy as np
import yaml

from cobex.errors import BenchmarkParseError, BenchmarkValidationError

DEFAULT_SCOPE = "DEFAULT"
BUILTIN_NAMES = ("global", "critical", "explore")
UNCONSTRAINED = (0.0, 1.0)


def normalize_domain(name):
    """Domain names are case-normalized identifiers; DEFAULT is special."""
    name = str(name).strip()
    if name.upper() == DEFAULT_SCOPE:
        return DEFAULT_SCOPE
    return name.lower()


@dataclass(frozen=True)
class ConstraintSpec:
    description: str
    domain: str  # normalized domain name, or DEFAULT
    min_replication: float
    max_replication: float

    def validate(self):
        if not 0.0 <= self.min_replication <= self.max_replication <= 1.0:
            raise BenchmarkValidationError(
                f"spec for {self.domain!r}: bounds "
                f"[{self.min_replication}, {self.max_replication}] must satisfy "
                "0 <= min <= max <= 1"
            )


@dataclass(frozen=True)
class ConstraintBenchmark:
    name: str
    specs: tuple

    def validate(self):
        seen = set()
        for spec in self.specs:
            spec.validate()
            if spec.domain in seen:
                kind = "DEFAULT spec" if spec.domain == DEFAULT_SCOPE else f"domain {spec.domain!r}"
                raise BenchmarkValidationError(f"duplicate {kind} in benchmark {self.name!r}")
            seen.add(spec.domain)

    def resolve(self, domain):
        """Bounds for a domain: exact match, else DEFAULT, else (0, 1)."""
        domain = normalize_domain(domain)
        default = UNCONSTRAINED
        for spec in self.specs:
            if spec.domain == domain:
                return (spec.min_replication, spec.max_replication)
            if spec.domain == DEFAULT_SCOPE:
                default = (spec.min_replication, spec.max_replication)
        return default


def resolve(benchmark, domain):
    return benchmark.resolve(domain)


def resolve_bounds(benchmark, domain_names):
    """(M, 2) array of per-domain (min, max) bounds, in domain-id order."""
    return np.asarray([benchmark.resolve(d) for d in domain_names], dtype=np.float64)


def parse_benchmark(source, name=None):
    """Parse benchmark config text; raises with a line number on bad syntax."""
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark is not None else ""
        raise BenchmarkParseError(f"invalid benchmark config{line}: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise BenchmarkParseError("benchmark config must be a mapping")
    bench_name = name if name is not None else str(doc.get("name", "unnamed"))
    records = doc.get("constraints", [])
    if records is None:
        records = []
    if not isinstance(records, list):
        raise BenchmarkParseError("'constraints' must be a list of records")
    specs = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise BenchmarkParseError(f"constraint record {i} is not a mapping")
        missing = {"domain", "min_replication", "max_replication"} - rec.keys()
        if missing:
            raise BenchmarkParseError(
                f"constraint record {i} missing fields: {sorted(missing)}"
            )
        try:
            lo = float(rec["min_replication"])
            hi = float(rec["max_replication"])
        except (TypeError, ValueError) as exc:
            raise BenchmarkParseError(f"constraint record {i}: non-numeric bound") from exc
        specs.append(
            ConstraintSpec(
                description=str(rec.get("description", "")),
                domain=normalize_domain(rec["domain"]),
                min_replication=lo,
                max_replication=hi,
            )
        )
    bench = ConstraintBenchmark(name=bench_name, specs=tuple(specs))
    bench.validate()
    return bench


def serialize_benchmark(benchmark):
    doc = {
        "name": benchmark.name,
        "constraints": [
            {
                "description": s.description,
                "domain": s.domain,
                "min_replication": s.min_replication,
                "max_replication": s.max_replication,
            }
            for s in benchmark.specs
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def _builtin_text(name):
    return (
        importlib.resources.files("cobex")
        .joinpath("benchmarks", name)
        .read_text(encoding="utf-8")
    )


def builtin_benchmarks():
    """The shipped global / critical / explore benchmarks."""
    return [parse_benchmark(_builtin_text(n), name=n) for n in BUILTIN_NAMES]


def load_benchmark(name_or_path):
    """A builtin benchmark by name, or any benchmark config file by path."""
    if name_or_path in BUILTIN_NAMES:
        return parse_benchmark(_builtin_text(name_or_path), name=name_or_path)
    with open(name_or_path, "r", encoding="utf-8") as fh:
        return parse_benchmark(fh.read())

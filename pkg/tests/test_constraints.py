"""Constraint benchmark parsing, resolution, builtins, round-trips."""

import numpy as np
import pytest

from cobex import constraints
from cobex.errors import BenchmarkParseError, BenchmarkValidationError


def test_empty_benchmark_is_valid():
    bench = constraints.parse_benchmark("name: empty\nconstraints: []\n")
    assert bench.specs == ()
    assert bench.resolve("anything") == (0.0, 1.0)


def test_duplicate_domain_rejected():
    text = """
name: dup
constraints:
  - {description: a, domain: music, min_replication: 0.9, max_replication: 1.0}
  - {description: b, domain: music, min_replication: 0.8, max_replication: 1.0}
"""
    with pytest.raises(BenchmarkValidationError, match="music"):
        constraints.parse_benchmark(text)


def test_duplicate_default_rejected():
    text = """
constraints:
  - {description: a, domain: DEFAULT, min_replication: 0.9, max_replication: 1.0}
  - {description: b, domain: DEFAULT, min_replication: 0.8, max_replication: 1.0}
"""
    with pytest.raises(BenchmarkValidationError, match="DEFAULT"):
        constraints.parse_benchmark(text)


def test_invalid_range_rejected():
    text = """
constraints:
  - {description: a, domain: music, min_replication: 0.9, max_replication: 0.5}
"""
    with pytest.raises(BenchmarkValidationError):
        constraints.parse_benchmark(text)
    text2 = """
constraints:
  - {description: a, domain: music, min_replication: -0.1, max_replication: 0.5}
"""
    with pytest.raises(BenchmarkValidationError):
        constraints.parse_benchmark(text2)


def test_parse_error_reports_line():
    with pytest.raises(BenchmarkParseError, match="line"):
        constraints.parse_benchmark("constraints:\n  - {unbalanced\n")


def test_missing_fields_rejected():
    with pytest.raises(BenchmarkParseError, match="missing"):
        constraints.parse_benchmark("constraints:\n  - {domain: music}\n")


def test_builtin_global():
    bench = constraints.load_benchmark("global")
    assert bench.name == "global"
    assert len(bench.specs) == 1
    spec = bench.specs[0]
    assert spec.domain == constraints.DEFAULT_SCOPE
    assert spec.min_replication == 0.99
    assert spec.max_replication == 1.0


def test_builtin_critical_resolution():
    bench = constraints.load_benchmark("critical")
    assert bench.resolve("shopping") == (0.995, 1.0)
    assert bench.resolve("home_automation") == (0.995, 1.0)
    assert bench.resolve("notifications") == (0.995, 1.0)
    assert bench.resolve("music") == (0.99, 1.0)  # falls back to DEFAULT


def test_builtin_explore_resolution():
    bench = constraints.load_benchmark("explore")
    assert bench.resolve("knowledge") == (0.0, 0.95)
    assert bench.resolve("music") == (0.0, 0.95)
    assert bench.resolve("shopping") == (0.995, 1.0)
    assert bench.resolve("weather") == (0.99, 1.0)


def test_builtin_benchmarks_listing():
    benches = constraints.builtin_benchmarks()
    assert [b.name for b in benches] == list(constraints.BUILTIN_NAMES)


def test_resolve_fallback_unconstrained():
    bench = constraints.parse_benchmark(
        "constraints:\n"
        "  - {description: x, domain: music, min_replication: 0.9, max_replication: 1.0}\n"
    )
    assert bench.resolve("weather") == (0.0, 1.0)


def test_resolve_is_total_and_specific():
    bench = constraints.load_benchmark("critical")
    rng = np.random.default_rng(0)
    for _ in range(50):
        name = "".join(chr(97 + c) for c in rng.integers(0, 26, 8))
        lo, hi = bench.resolve(name)
        assert 0.0 <= lo <= hi <= 1.0
    # explicit spec always wins over DEFAULT
    assert bench.resolve("SHOPPING") == (0.995, 1.0)


def test_case_normalization():
    bench = constraints.parse_benchmark(
        "constraints:\n"
        "  - {description: x, domain: MusIC, min_replication: 0.5, max_replication: 0.9}\n"
    )
    assert bench.resolve("MUSIC") == (0.5, 0.9)
    assert bench.specs[0].domain == "music"


def test_serialize_roundtrip():
    for name in constraints.BUILTIN_NAMES:
        bench = constraints.load_benchmark(name)
        again = constraints.parse_benchmark(constraints.serialize_benchmark(bench))
        assert again == bench


def test_load_benchmark_from_path(tmp_path):
    path = tmp_path / "custom.yaml"
    path.write_text(
        "name: custom\nconstraints:\n"
        "  - {description: c, domain: video, min_replication: 0.8, max_replication: 0.9}\n"
    )
    bench = constraints.load_benchmark(str(path))
    assert bench.name == "custom"
    assert bench.resolve("video") == (0.8, 0.9)


def test_resolve_bounds_array():
    bench = constraints.load_benchmark("critical")
    bounds = constraints.resolve_bounds(bench, ["music", "shopping", "unknown"])
    assert bounds.shape == (3, 2)
    assert bounds[0].tolist() == [0.99, 1.0]
    assert bounds[1].tolist() == [0.995, 1.0]
    assert bounds[2].tolist() == [0.99, 1.0]  # DEFAULT applies

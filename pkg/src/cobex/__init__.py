"""Constrained off-policy contextual bandit training.

Trains softmax MLP policies from logged bandit feedback under user-defined
per-domain replication budgets, via quadratic penalties, minimax primal-dual
ascent, or meta-gradient penalty adaptation, with a synthetic logged-bandit
environment for verification.
"""

__version__ = "0.1.0"

from cobex.autodiff import Tape, Value
from cobex.constraints import (
    ConstraintBenchmark,
    ConstraintSpec,
    builtin_benchmarks,
    load_benchmark,
    parse_benchmark,
    resolve,
    serialize_benchmark,
)
from cobex.data import Dataset, LoggedSample, load_dataset, save_dataset
from cobex.errors import (
    BenchmarkParseError,
    BenchmarkValidationError,
    CobexError,
    ConfigError,
    ContractError,
    DivergenceError,
    InvalidCandidateSetError,
    MathDomainError,
    PropensityFloorError,
    ReportError,
    ShapeError,
)
from cobex.evaluation import (
    ComparisonReport,
    EvalResult,
    compare,
    evaluate,
    expected_reward,
    replication_rate,
    violation_rates,
)
from cobex.objectives import (
    DomainPrior,
    PenaltyWeights,
    hinge_penalties,
    inner_loss,
    ips_loss,
    max_player_loss,
    meta_loss,
    quadratic_loss,
    replication,
)
from cobex.policy import (
    CandidateSet,
    PolicyParams,
    init_policy,
    load_checkpoint,
    propensities,
    sample_action,
    save_checkpoint,
)
from cobex.synthenv import (
    Environment,
    EnvSpec,
    gen_dataset,
    gen_env,
    true_policy_value,
    true_replication_profile,
)
from cobex.trainers import (
    MetaGradConfig,
    MinimaxConfig,
    Optimizer,
    TrainReport,
    metagrad_uv_gradient,
    select_best,
    train_ips,
    train_metagrad,
    train_minimax,
    train_quadratic,
)

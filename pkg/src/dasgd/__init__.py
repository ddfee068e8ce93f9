"""Deterministic multi-worker SGD simulator with delayed averaging, a
convergence-bound calculator, and an analytical cluster time model."""

from .core import (
    Constant,
    HyperParams,
    OneCycle,
    RngStream,
    StepKind,
    lr_at,
    schedule_kind,
)
from .engine import (
    Diverged,
    PendingAverage,
    Trajectory,
    WorkerSet,
    all_reduce_average,
    local_step,
    merge,
    mu_recursion_check,
    run_dasgd,
    run_local_sgd,
    run_minibatch,
)
from .objectives import (
    LogisticObjective,
    NoisyQuadratic,
    Objective,
    TinyMlpObjective,
    estimate_L,
    estimate_variance,
    grad_check,
)
from .perfmodel import (
    CATALOG,
    CatalogEntry,
    PerfInputs,
    TimeBreakdown,
    catalog_inputs,
    comm_time,
    compute_time,
    feasibility_report,
    recommend,
    select_delay,
    select_tau,
    speedup_curve,
    total_time,
)
from .theory import (
    AssumptionParams,
    BoundInapplicable,
    BoundReport,
    CapUndefined,
    LrCaps,
    corollary_bound,
    empirical_vs_bound,
    lr_caps,
    theorem_bound,
    warmup_gradient_term,
)

__version__ = "0.1.0"

"""Analytical execution-time model for distributed training.

Per-iteration compute cost is B/(p*m) forward+backward passes plus local
aggregation; communication cost per global sync follows a log2-hop bandwidth
model in which a tree all-reduce costs exactly twice a butterfly all-reduce.
Fully synchronous SGD exposes the whole sync cost every iteration, periodic
averaging amortizes it over tau iterations, and delayed averaging hides it
behind d local iterations entirely whenever t_c < d * t_iter (any residual
is amortized over the period, an extension beyond the hidden-communication
regime).

A small catalog of model/hardware presets ships with the module: per-model
parameter counts plus measured per-iteration compute time and all-reduce
times at 256 workers with local batch 64, which makes delay selection on
those rows exact. Because the measured values fold in effects a pure
bandwidth model does not capture, curves derived from catalog entries scale
the measured communication time by the hop-count ratio rather than
recomputing it from bandwidth.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Sequence

from .engine import _atomic_write

__all__ = [
    "SCHEMES",
    "ALGORITHMS",
    "PerfInputs",
    "TimeBreakdown",
    "CatalogEntry",
    "CATALOG",
    "FeasibilityReport",
    "Recommendation",
    "compute_time",
    "comm_time",
    "select_delay",
    "select_tau",
    "total_time",
    "speedup_curve",
    "feasibility_report",
    "get_catalog_entry",
    "catalog_inputs",
    "recommend",
    "perf_table",
    "perf_table_csv",
    "write_perf_csv",
    "write_recommendation_json",
]

SCHEMES = ("tree", "butterfly")
ALGORITHMS = ("minibatch", "local", "dasgd")


@dataclass(frozen=True)
class CatalogEntry:
    """One model/hardware preset: parameter count, measured per-iteration
    compute time and all-reduce times (ms, 256 workers, local batch 64),
    plus the published delay/tau recommendation for that row."""

    model: str
    hardware: str
    n_params: int
    t_p: float
    t_c_tree: float
    t_c_butterfly: float
    delay: int
    tau: int

    def t_c(self, scheme: str) -> float:
        _check_scheme(scheme)
        return self.t_c_tree if scheme == "tree" else self.t_c_butterfly


CATALOG: tuple[CatalogEntry, ...] = (
    CatalogEntry("nin", "titan", 7_595_176, 119.08, 132.91, 66.45, 2, 3),
    CatalogEntry("nin", "k80", 7_595_176, 129.80, 254.43, 127.21, 2, 3),
    CatalogEntry("vgg16", "titan", 138_357_544, 2164.32, 2421.25, 1210.62, 2, 3),
    CatalogEntry("vgg16", "k80", 138_357_544, 2361.61, 4634.97, 2317.48, 2, 3),
    CatalogEntry("vgg19", "titan", 143_667_240, 2684.73, 2514.17, 1257.08, 1, 2),
    CatalogEntry("vgg19", "k80", 143_667_240, 2932.49, 4812.85, 2406.42, 2, 3),
    CatalogEntry("resnet50", "titan", 25_530_472, 526.05, 446.78, 223.39, 1, 2),
    CatalogEntry("resnet50", "k80", 25_530_472, 575.29, 855.27, 427.63, 2, 3),
    CatalogEntry("resnext50", "titan", 167_153_128, 1640.05, 2925.17, 1462.58, 2, 3),
    CatalogEntry("resnext50", "k80", 167_153_128, 1795.83, 5599.62, 2799.81, 4, 5),
    CatalogEntry("densenet121", "titan", 7_905_448, 358.23, 138.34, 69.17, 1, 2),
    CatalogEntry("densenet121", "k80", 7_905_448, 390.73, 264.83, 132.41, 1, 2),
    CatalogEntry("densenet201", "titan", 17_900_106, 538.06, 313.25, 156.62, 1, 2),
    CatalogEntry("densenet201", "k80", 17_900_106, 587.64, 599.65, 299.82, 2, 3),
)

_MODEL_ALIASES = {"networkinnetwork": "nin", "titanx": "titan"}


def _normalize(name: str) -> str:
    key = "".join(ch for ch in name.lower() if ch.isalnum())
    return _MODEL_ALIASES.get(key, key)


def _check_scheme(scheme: str):
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")


def get_catalog_entry(model: str, hardware: str) -> CatalogEntry:
    model_key, hw_key = _normalize(model), _normalize(hardware)
    for entry in CATALOG:
        if entry.model == model_key and entry.hardware == hw_key:
            return entry
    known = sorted({e.model for e in CATALOG})
    raise KeyError(
        f"no catalog entry for model={model!r}, hardware={hardware!r}; "
        f"models: {known}, hardware: ['titan', 'k80']"
    )


@dataclass(frozen=True)
class PerfInputs:
    """Model/hardware parameters feeding the time model.

    Per-sample times t_f/t_b may be given directly or derived from FLOP
    counts (flop_per_sample / flops_peak). The global batch B defaults to
    m * B_l. When ``t_c_ref`` is set (catalog mode) it is the measured
    per-sync communication time at ``m_ref`` workers and is rescaled by the
    hop-count ratio for other worker counts; otherwise communication time
    comes from the bandwidth model.
    """

    n_p: int
    m: int
    B_l: int
    n_s: int
    bytes_per_param: int = 4
    p: int = 1
    B: int | None = None
    flop_per_sample: float | None = None
    flops_peak: float | None = None
    bw: float | None = None
    t_f: float | None = None
    t_b: float | None = None
    t_l: float = 0.0
    scheme: str = "tree"
    t_c_ref: float | None = None
    m_ref: int = 256

    def __post_init__(self):
        _check_scheme(self.scheme)
        for name in ("n_p", "m", "B_l", "n_s", "bytes_per_param", "p", "m_ref"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.B is not None and self.B != self.m * self.B_l:
            raise ValueError(
                f"B must equal m * B_l ({self.m * self.B_l}), got {self.B}"
            )
        for name in ("flop_per_sample", "flops_peak", "bw", "t_f", "t_b",
                     "t_c_ref"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.t_l < 0:
            raise ValueError("t_l must be >= 0")
        if self.t_f is None and self.t_b is None:
            if self.flop_per_sample is None or self.flops_peak is None:
                raise ValueError(
                    "need either t_f/t_b or flop_per_sample and flops_peak"
                )

    @property
    def global_batch(self) -> int:
        return self.B if self.B is not None else self.m * self.B_l

    @property
    def t_fb(self) -> float:
        """Per-sample forward+backward time."""
        if self.t_f is not None or self.t_b is not None:
            return (self.t_f or 0.0) + (self.t_b or 0.0)
        return self.flop_per_sample / self.flops_peak

    @property
    def t_iter(self) -> float:
        """Compute time of one iteration: B/(p*m) * (t_f+t_b) + t_l."""
        return self.global_batch / (self.p * self.m) * self.t_fb + self.t_l

    @property
    def t_comm(self) -> float:
        """Per-sync communication time at this worker count."""
        if self.m == 1:
            return 0.0
        if self.t_c_ref is not None:
            return self.t_c_ref * _hops(self.m) / _hops(self.m_ref)
        if self.bw is None:
            raise ValueError("bandwidth required when no measured t_c is set")
        return comm_time(self.n_p, self.bytes_per_param, self.bw, self.m,
                         self.scheme)

    def at_workers(self, m: int) -> "PerfInputs":
        """Weak-scaling variant: same per-worker shape at m workers."""
        return dataclasses.replace(self, m=m, B=None)


def catalog_inputs(model: str, hardware: str, scheme: str = "tree",
                   m: int = 256, B_l: int = 64,
                   n_s: int = 50_000) -> PerfInputs:
    """PerfInputs backed by a catalog row.

    Per-sample time is chosen so one iteration costs exactly the measured
    t_p, and communication time reproduces the measured all-reduce cost at
    the reference worker count.
    """
    entry = get_catalog_entry(model, hardware)
    _check_scheme(scheme)
    return PerfInputs(
        n_p=entry.n_params,
        m=m,
        B_l=B_l,
        n_s=n_s,
        t_f=0.0,
        t_b=entry.t_p / B_l,
        t_l=0.0,
        scheme=scheme,
        t_c_ref=entry.t_c(scheme),
        m_ref=256,
    )


def _hops(m: int) -> int:
    return math.ceil(math.log2(m)) if m > 1 else 0


def compute_time(flop_per_sample: float, flops_peak: float, B_l: int) -> float:
    """Compute time of one local update: B_l * FLOP / FLOPS."""
    if flop_per_sample <= 0 or flops_peak <= 0 or B_l < 1:
        raise ValueError("flop_per_sample, flops_peak and B_l must be positive")
    return B_l * flop_per_sample / flops_peak


def comm_time(n_p: int, bytes_per_param: int, bw: float, m: int,
              scheme: str = "tree") -> float:
    """All-reduce time under the log2-hop bandwidth model.

    A butterfly all-reduce moves the payload over ceil(log2 m) hops; a tree
    all-reduce costs exactly twice that. One worker needs no transfer.
    """
    _check_scheme(scheme)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if bw <= 0:
        raise ValueError(f"bw must be > 0, got {bw}")
    if m == 1:
        return 0.0
    base = _hops(m) * n_p * bytes_per_param / bw
    return 2.0 * base if scheme == "tree" else base


def select_delay(t_c: float, t_p: float) -> int:
    """Smallest integer delay strictly greater than t_c / t_p."""
    if t_p <= 0:
        raise ValueError(f"t_p must be > 0, got {t_p}")
    if t_c < 0:
        raise ValueError(f"t_c must be >= 0, got {t_c}")
    return int(math.floor(t_c / t_p)) + 1


def select_tau(d: int) -> int:
    """Local steps per sync: one more than the delay."""
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    return d + 1


@dataclass(frozen=True)
class TimeBreakdown:
    t_compute_per_iter: float
    t_c: float
    t_exposed: float
    t_total: float
    comm_fraction: float


def total_time(algorithm: str, inputs: PerfInputs, tau: int = 1,
               d: int = 0) -> TimeBreakdown:
    """Epoch time decomposition for one algorithm.

    Exposed communication per iteration is t_c for fully synchronous SGD,
    t_c/tau for periodic averaging, and max(0, t_c - d*t_iter)/tau for
    delayed averaging (zero whenever the sync hides behind d iterations).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    t_it = inputs.t_iter
    if t_it <= 0:
        raise ValueError(f"per-iteration compute time must be > 0, got {t_it}")
    t_c = inputs.t_comm
    if algorithm == "minibatch":
        exposed = t_c
    elif algorithm == "local":
        exposed = t_c / tau
    else:
        if not 0 <= d < tau:
            raise ValueError(f"need 0 <= d < tau, got d={d}, tau={tau}")
        exposed = max(0.0, t_c - d * t_it) / tau
    iters = inputs.n_s / inputs.global_batch
    t_total = (t_it + exposed) * iters
    return TimeBreakdown(
        t_compute_per_iter=t_it,
        t_c=t_c,
        t_exposed=exposed,
        t_total=t_total,
        comm_fraction=exposed / (t_it + exposed),
    )


def speedup_curve(inputs: PerfInputs, algorithm: str, m_values: Sequence[int],
                  tau: int = 1, d: int = 0) -> list[tuple[int, float]]:
    """Weak-scaling speedup against the single-worker run.

    The global batch grows with m (B = m * B_l) so per-worker work stays
    fixed; communication time is recomputed at every m. Speedup is the
    throughput ratio t_total(1) / t_total(m).
    """
    base = total_time(algorithm, inputs.at_workers(1), tau, d).t_total
    curve = []
    for m in m_values:
        tm = total_time(algorithm, inputs.at_workers(m), tau, d).t_total
        curve.append((m, base / tm))
    return curve


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    slack: float


def feasibility_report(inputs: PerfInputs, d: int) -> FeasibilityReport:
    """Can d local iterations hide one sync? slack = d * t_iter - t_c."""
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    slack = d * inputs.t_iter - inputs.t_comm
    return FeasibilityReport(feasible=slack > 0, slack=slack)


@dataclass(frozen=True)
class Recommendation:
    model: str
    hardware: str
    scheme: str
    d: int
    tau: int
    feasible: bool
    slack: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def recommend(model: str, hardware: str, scheme: str = "tree") -> Recommendation:
    """Delay/tau recommendation for a catalog row under a given scheme."""
    entry = get_catalog_entry(model, hardware)
    t_c = entry.t_c(scheme)
    d = select_delay(t_c, entry.t_p)
    slack = d * entry.t_p - t_c
    return Recommendation(
        model=entry.model,
        hardware=entry.hardware,
        scheme=scheme,
        d=d,
        tau=select_tau(d),
        feasible=slack > 0,
        slack=slack,
    )


def perf_table(inputs: PerfInputs, m_values: Sequence[int], tau: int,
               d: int, algorithms: Sequence[str] = ALGORITHMS) -> list[dict]:
    """One row per (m, algorithm): timings, speedup, exposed-comm share."""
    rows = []
    for algorithm in algorithms:
        base = total_time(algorithm, inputs.at_workers(1), tau, d).t_total
        for m in m_values:
            tb = total_time(algorithm, inputs.at_workers(m), tau, d)
            rows.append({
                "m": m,
                "algorithm": algorithm,
                "t_compute": tb.t_compute_per_iter,
                "t_comm_exposed": tb.t_exposed,
                "t_total": tb.t_total,
                "speedup": base / tb.t_total,
                "comm_fraction": tb.comm_fraction,
            })
    return rows


def perf_table_csv(rows: Sequence[dict]) -> str:
    header = "m,algorithm,t_compute,t_comm_exposed,t_total,speedup,comm_fraction"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['m']},{r['algorithm']},{float(r['t_compute'])!r},"
            f"{float(r['t_comm_exposed'])!r},{float(r['t_total'])!r},"
            f"{float(r['speedup'])!r},{float(r['comm_fraction'])!r}"
        )
    return "\n".join(lines) + "\n"


def write_perf_csv(rows: Sequence[dict], path) -> None:
    _atomic_write(path, perf_table_csv(rows))


def write_recommendation_json(rec: Recommendation, path) -> None:
    _atomic_write(path, json.dumps(rec.to_dict(), indent=2, sort_keys=True) + "\n")

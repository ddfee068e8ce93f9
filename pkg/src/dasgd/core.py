"""Foundation types: run configuration, step scheduling, and RNG streams.

The step calculus here decides, for every 0-based local step ``k``, whether a
worker only takes a plain local update, additionally publishes an all-reduced
snapshot of the post-update weights, or folds a previously published snapshot
back into its local weights (a "merge"). Everything downstream (the engine,
the bound calculator) keys off this schedule, so it is kept pure and heavily
unit-tested.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Constant",
    "OneCycle",
    "HyperParams",
    "StepKind",
    "RngStream",
    "schedule_kind",
    "lr_at",
]


@dataclass(frozen=True)
class Constant:
    """Fixed learning rate for every step."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"learning rate must be >= 0, got {self.value}")


@dataclass(frozen=True)
class OneCycle:
    """Triangular schedule: linear ramp lo -> hi, peak at ``up_fraction`` of
    the run, then linear decay back to lo at the final step."""

    lo: float
    hi: float
    up_fraction: float

    def __post_init__(self):
        if not (0.0 < self.up_fraction < 1.0):
            raise ValueError(
                f"up_fraction must be in (0, 1), got {self.up_fraction}"
            )
        if self.lo < 0 or self.hi < self.lo:
            raise ValueError(
                f"need 0 <= lo <= hi, got lo={self.lo}, hi={self.hi}"
            )


LrSchedule = Constant | OneCycle


def lr_at(schedule: LrSchedule, k: int, K: int) -> float:
    """Learning rate applied at step ``k`` of a ``K``-step run."""
    if not 0 <= k < K:
        raise ValueError(f"step index {k} outside [0, {K})")
    if isinstance(schedule, Constant):
        return schedule.value
    peak = schedule.up_fraction * K
    if k <= peak:
        return schedule.lo + (schedule.hi - schedule.lo) * (k / peak)
    down_span = (K - 1) - peak
    if down_span <= 0:
        return schedule.hi
    return schedule.hi - (schedule.hi - schedule.lo) * ((k - peak) / down_span)


@dataclass(frozen=True)
class HyperParams:
    """Full configuration of one delayed-averaging run.

    eta    learning rate (used directly unless ``lr_schedule`` overrides it)
    tau    local steps between global averages, >= 1
    d      local steps the merged average lags its snapshot, 0 <= d < tau
    xi     weight of the local model vs. the stale average at merge time
    M      worker count
    B_l    local batch size per worker per step
    K      total local steps per worker
    seed   root seed all per-worker sampling streams derive from
    """

    eta: float
    tau: int
    d: int
    xi: float
    M: int
    B_l: int
    K: int
    seed: int = 0
    lr_schedule: LrSchedule | None = None

    def __post_init__(self):
        # eta == 0 is degenerate but well-defined (constant trajectory); the
        # bound calculator reports it as such rather than rejecting it here.
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not 0 <= self.d < self.tau:
            raise ValueError(
                f"delay must satisfy 0 <= d < tau, got d={self.d}, tau={self.tau}"
            )
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError(f"xi must be in [0, 1], got {self.xi}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.B_l < 1:
            raise ValueError(f"B_l must be >= 1, got {self.B_l}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def effective_schedule(self) -> LrSchedule:
        return self.lr_schedule if self.lr_schedule is not None else Constant(self.eta)


class StepKind(enum.Enum):
    PLAIN = "plain"
    SNAPSHOT = "snapshot"
    MERGE = "merge"
    SNAPSHOT_AND_MERGE = "snapshot_and_merge"


def schedule_kind(k: int, tau: int, d: int) -> StepKind:
    """Classify 0-based step ``k`` under period ``tau`` and delay ``d``.

    A snapshot is published whenever ``(k+1) % tau == 0``; the matching merge
    lands ``d`` steps later, i.e. when ``(k+1-d) % tau == 0``. With ``d == 0``
    both land on the same step. Merge slots earlier than ``tau + d`` steps
    into the run are plain: no snapshot exists yet to consume.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    if not 0 <= d < tau:
        raise ValueError(f"delay must satisfy 0 <= d < tau, got d={d}, tau={tau}")
    if k < 0:
        raise ValueError(f"step index must be >= 0, got {k}")
    snapshot = (k + 1) % tau == 0
    merge = (k + 1 - d) % tau == 0 and (k + 1) >= tau + d
    if snapshot and merge:
        # Only possible when d == 0: take the average and apply it in place.
        return StepKind.SNAPSHOT_AND_MERGE
    if snapshot:
        return StepKind.SNAPSHOT
    if merge:
        return StepKind.MERGE
    return StepKind.PLAIN


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, worker, purpose).

    Streams with distinct keys are statistically independent, and a stream
    replayed from the same key reproduces the identical sequence, no matter
    how many other streams were consumed in between. Concurrency therefore
    cannot perturb sampling order.
    """

    seed: int
    worker_id: int = 0
    purpose: str = "sampling"

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(
            entropy=self.seed,
            spawn_key=(self.worker_id, zlib.crc32(self.purpose.encode())),
        )
        return np.random.Generator(np.random.Philox(ss))

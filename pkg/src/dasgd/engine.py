"""Lockstep multi-worker simulator for the three SGD variants.

All M workers advance one local step per simulated tick. Delayed averaging
publishes an all-reduced snapshot of the post-update weights on snapshot
steps and folds it back into every worker ``d`` steps later, weighted by
``xi`` against the worker's own progress. Periodic averaging is the ``d=0,
xi=0`` special case and is implemented as exactly that delegation; fully
synchronous SGD keeps a single shared weight vector and averages the M local
batch gradients every step.

Determinism contract: a run is a pure function of (params, objective). Each
worker samples from its own counter-based stream, the reduction is performed
in a fixed pairwise order, and worker computations are independent, so the
results do not depend on how many threads execute the per-worker work.

Trajectory rows record the state *after* each step: row k holds the worker
average, loss, squared gradient norm and dispersion once step k's update
(including any merge) has been applied. The pre-run state is kept separately
in ``mu0``/``loss0``/``grad_norm_sq0``.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import HyperParams, RngStream, StepKind, lr_at, schedule_kind
from .objectives import Objective

__all__ = [
    "Diverged",
    "PendingAverage",
    "WorkerSet",
    "Trajectory",
    "local_step",
    "all_reduce_average",
    "merge",
    "run_dasgd",
    "run_local_sgd",
    "run_minibatch",
    "mu_recursion_check",
    "trajectory_to_csv",
    "write_trajectory_csv",
    "summary_dict",
    "write_summary_json",
]


class Diverged(RuntimeError):
    """Weights became non-finite; carries the offending step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite weights at step {step}")
        self.step = step


@dataclass(frozen=True)
class PendingAverage:
    """An all-reduced snapshot in flight: taken at ``taken_at``, merged into
    the workers during step ``due_at`` (= taken_at + d)."""

    payload: np.ndarray
    taken_at: int
    due_at: int


@dataclass
class WorkerSet:
    """All M local weight vectors plus their sampling streams.

    Confined to the engine while a run is in progress; every worker starts
    from the identical point and the rows of ``X`` advance in lockstep.
    """

    X: np.ndarray                         # (M, dim)
    rngs: list[np.random.Generator]
    step: int = 0

    @classmethod
    def initialize(cls, params: HyperParams, x0: np.ndarray) -> "WorkerSet":
        return cls(
            X=np.tile(x0, (params.M, 1)),
            rngs=[RngStream(params.seed, m, "sampling").generator()
                  for m in range(params.M)],
        )


@dataclass(frozen=True)
class Trajectory:
    """Per-step record of a run plus the pre-run state.

    ``mu[k]``/``loss[k]``/... describe the state after step k completed;
    ``gbar[k]`` is the across-worker average of the stochastic gradients
    sampled at step k and ``lr[k]`` the learning rate that step applied.
    Instances are immutable outputs; do not mutate the arrays.
    """

    algorithm: str
    params: HyperParams
    mu0: np.ndarray
    loss0: float
    grad_norm_sq0: float
    step: np.ndarray
    loss: np.ndarray
    grad_norm_sq: np.ndarray
    dispersion: np.ndarray
    lr: np.ndarray
    mu: np.ndarray
    gbar: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.step)

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    @property
    def avg_grad_norm_sq(self) -> float:
        """Mean squared gradient norm over the recorded steps."""
        return float(self.grad_norm_sq.mean())

    def mu_at(self, weight_index: int) -> np.ndarray:
        """Averaged weights after ``weight_index`` updates (0 = initial)."""
        if weight_index == 0:
            return self.mu0
        return self.mu[weight_index - 1]


def local_step(x: np.ndarray, objective: Objective, eta: float, batch,
               step: int | None = None) -> np.ndarray:
    """One plain local update x - eta * g(x, batch)."""
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    with np.errstate(over="ignore", invalid="ignore"):
        v = x - eta * objective.stoch_grad(x, batch)
    if not np.all(np.isfinite(v)):
        raise Diverged(-1 if step is None else step)
    return v


def all_reduce_average(payloads) -> np.ndarray:
    """Mean of the payload vectors in a fixed pairwise-tree order.

    Partial sums are combined in worker-id order with power-of-two pairing
    and divided by M once at the end, so the result is identical no matter
    how the underlying computation is parallelized.
    """
    vecs = [np.array(p, dtype=float) for p in payloads]
    if not vecs:
        raise ValueError("need at least one payload")
    dim = vecs[0].shape
    for v in vecs[1:]:
        if v.shape != dim:
            raise ValueError(f"payload shape mismatch: {v.shape} vs {dim}")
    n = len(vecs)
    stride = 1
    while stride < n:
        for i in range(0, n - stride, 2 * stride):
            vecs[i] = vecs[i] + vecs[i + stride]
        stride *= 2
    return vecs[0] / n


def merge(v_local: np.ndarray, payload: np.ndarray, xi: float) -> np.ndarray:
    """Blend a worker's post-update weights with a stale global average."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"xi must be in [0, 1], got {xi}")
    return xi * v_local + (1.0 - xi) * payload


def _record(objective, X, mu):
    loss = objective.full_loss(mu)
    g = objective.full_grad(mu)
    disp = float(np.sum((X - mu) ** 2))
    return loss, float(g @ g), disp


def run_dasgd(params: HyperParams, objective: Objective,
              n_threads: int = 1, algorithm: str = "dasgd") -> Trajectory:
    """Simulate K lockstep steps of delayed averaging.

    Every step each worker draws its own batch and takes a local update; on
    snapshot steps the post-update weights are all-reduced into a pending
    average due ``d`` steps later; on merge steps each worker blends its
    post-update weights with that payload using ``xi``.
    """
    x0 = objective.initial_point()
    if x0.shape != (objective.dim,):
        raise ValueError("objective initial point has wrong shape")
    M, K = params.M, params.K
    schedule = params.effective_schedule()
    workers = WorkerSet.initialize(params, x0)
    pending: PendingAverage | None = None

    loss = np.empty(K)
    grad_norm_sq = np.empty(K)
    dispersion = np.empty(K)
    lr = np.empty(K)
    mu_hist = np.empty((K, objective.dim))
    gbar_hist = np.empty((K, objective.dim))

    mu0 = x0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        loss0, gns0, _ = _record(objective, workers.X, mu0)

    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    try:
        # overflow to inf is reported through Diverged, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(K):
                eta_k = lr_at(schedule, k, K)
                kind = schedule_kind(k, params.tau, params.d)
                workers.step = k
                X = workers.X

                def worker_update(m):
                    batch = objective.draw_batch(workers.rngs[m], params.B_l)
                    g = objective.stoch_grad(X[m], batch)
                    return X[m] - eta_k * g, g

                if pool is not None:
                    results = list(pool.map(worker_update, range(M)))
                else:
                    results = [worker_update(m) for m in range(M)]
                V = np.stack([r[0] for r in results])
                G = np.stack([r[1] for r in results])

                if kind in (StepKind.SNAPSHOT, StepKind.SNAPSHOT_AND_MERGE):
                    pending = PendingAverage(
                        payload=all_reduce_average(V),
                        taken_at=k,
                        due_at=k + params.d,
                    )
                if kind in (StepKind.MERGE, StepKind.SNAPSHOT_AND_MERGE):
                    assert pending is not None and pending.due_at == k
                    workers.X = merge(V, pending.payload, params.xi)
                    pending = None
                else:
                    workers.X = V

                if not np.all(np.isfinite(workers.X)):
                    raise Diverged(k)

                mu = all_reduce_average(workers.X)
                loss[k], grad_norm_sq[k], dispersion[k] = _record(
                    objective, workers.X, mu)
                lr[k] = eta_k
                mu_hist[k] = mu
                gbar_hist[k] = all_reduce_average(G)
    finally:
        if pool is not None:
            pool.shutdown()

    return Trajectory(
        algorithm=algorithm,
        params=params,
        mu0=mu0,
        loss0=loss0,
        grad_norm_sq0=gns0,
        step=np.arange(K),
        loss=loss,
        grad_norm_sq=grad_norm_sq,
        dispersion=dispersion,
        lr=lr,
        mu=mu_hist,
        gbar=gbar_hist,
    )


def run_local_sgd(params: HyperParams, objective: Objective,
                  n_threads: int = 1) -> Trajectory:
    """Periodic averaging: average all local models every tau steps.

    Structurally the d=0, xi=0 case of delayed averaging, and implemented as
    exactly that delegation so the equivalence is bitwise by construction.
    """
    reduced = dataclasses.replace(params, d=0, xi=0.0)
    return run_dasgd(reduced, objective, n_threads=n_threads, algorithm="local")


def run_minibatch(params: HyperParams, objective: Objective,
                  n_threads: int = 1) -> Trajectory:
    """Fully synchronous SGD with global batch B = M * B_l.

    One shared weight vector; the M local-batch gradients are averaged in the
    same fixed tree order every step. tau and d are ignored.
    """
    x = objective.initial_point()
    M, K = params.M, params.K
    schedule = params.effective_schedule()
    gens = [RngStream(params.seed, m, "sampling").generator() for m in range(M)]

    loss = np.empty(K)
    grad_norm_sq = np.empty(K)
    dispersion = np.zeros(K)
    lr = np.empty(K)
    mu_hist = np.empty((K, objective.dim))
    gbar_hist = np.empty((K, objective.dim))

    with np.errstate(over="ignore", invalid="ignore"):
        loss0 = objective.full_loss(x)
        g0 = objective.full_grad(x)
    mu0 = x.copy()

    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(K):
                eta_k = lr_at(schedule, k, K)

                def worker_grad(m):
                    batch = objective.draw_batch(gens[m], params.B_l)
                    return objective.stoch_grad(x, batch)

                if pool is not None:
                    grads = list(pool.map(worker_grad, range(M)))
                else:
                    grads = [worker_grad(m) for m in range(M)]
                gbar = all_reduce_average(grads)
                x = x - eta_k * gbar
                if not np.all(np.isfinite(x)):
                    raise Diverged(k)
                loss[k] = objective.full_loss(x)
                g = objective.full_grad(x)
                grad_norm_sq[k] = float(g @ g)
                lr[k] = eta_k
                mu_hist[k] = x
                gbar_hist[k] = gbar
    finally:
        if pool is not None:
            pool.shutdown()

    return Trajectory(
        algorithm="minibatch",
        params=params,
        mu0=mu0,
        loss0=loss0,
        grad_norm_sq0=float(g0 @ g0),
        step=np.arange(K),
        loss=loss,
        grad_norm_sq=grad_norm_sq,
        dispersion=dispersion,
        lr=lr,
        mu=mu_hist,
        gbar=gbar_hist,
    )


def mu_recursion_check(trajectory: Trajectory) -> float:
    """Verify the closed-form recursion of the averaged weights.

    Over each complete averaging period the worker average must satisfy
    mu[tau*(p+1)+d] = mu[tau*p+d] - sum of per-step lr * gbar, where the d
    steps from the snapshot to the merge enter with weight xi and the rest
    with weight 1. Returns the max over periods of the deviation normalized
    by (1 + ||mu||); the two sides are computed along independent paths.
    """
    p = trajectory.params
    tau, d, xi = p.tau, p.d, p.xi
    K = trajectory.steps
    worst = 0.0
    period = 0
    while tau * (period + 1) + d <= K:
        start = tau * period + d
        acc = np.zeros_like(trajectory.mu0)
        for i in range(tau):
            s = start + i
            weight = xi if i >= tau - d else 1.0
            acc = acc + weight * trajectory.lr[s] * trajectory.gbar[s]
        predicted = trajectory.mu_at(start) - acc
        direct = trajectory.mu_at(tau * (period + 1) + d)
        dev = float(np.linalg.norm(direct - predicted))
        worst = max(worst, dev / (1.0 + float(np.linalg.norm(direct))))
        period += 1
    return worst


def trajectory_to_csv(trajectory: Trajectory) -> str:
    """Render the per-step records as CSV text.

    Floats use shortest round-trip formatting with '.' decimals, so equal
    trajectories always serialize to identical bytes.
    """
    lines = ["step,loss,grad_norm_sq,dispersion,lr"]
    for k in range(trajectory.steps):
        lines.append(
            f"{int(trajectory.step[k])},{float(trajectory.loss[k])!r},"
            f"{float(trajectory.grad_norm_sq[k])!r},"
            f"{float(trajectory.dispersion[k])!r},{float(trajectory.lr[k])!r}"
        )
    return "\n".join(lines) + "\n"


def _atomic_write(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    _atomic_write(path, trajectory_to_csv(trajectory))


def _schedule_dict(params: HyperParams):
    sched = params.effective_schedule()
    out = {"kind": type(sched).__name__.lower()}
    out.update(dataclasses.asdict(sched))
    return out


def params_dict(params: HyperParams) -> dict:
    out = dataclasses.asdict(params)
    out["lr_schedule"] = _schedule_dict(params)
    return out


def summary_dict(trajectory: Trajectory) -> dict:
    return {
        "algorithm": trajectory.algorithm,
        "params": params_dict(trajectory.params),
        "final_loss": trajectory.final_loss,
        "avg_grad_norm_sq": trajectory.avg_grad_norm_sq,
        "steps": trajectory.steps,
    }


def write_summary_json(trajectory: Trajectory, path) -> None:
    _atomic_write(path, json.dumps(summary_dict(trajectory), indent=2,
                                   sort_keys=True) + "\n")

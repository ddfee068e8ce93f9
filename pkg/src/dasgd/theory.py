"""Learning-rate caps and convergence-bound evaluation.

The guarantee on delayed averaging bounds the expected average squared
gradient norm at the worker-averaged weights after K steps, provided the
learning rate stays below caps derived from the smoothness constant L, the
gradient-noise model (beta, sigma^2), and the run shape (tau, d, xi, M, K).
This module evaluates those caps and the bound itself, and compares the
bound against seed-averaged measurements from the simulator.

Conventions baked in here:

* K is the total number of local steps per worker, exactly as configured on
  the run; it is substituted for the step count appearing inside the cap
  denominators.
* The warm-up gradient term (nonzero only for d >= 2) is an explicit input
  G0; ``warmup_gradient_term`` measures it from the first steps of a seeded
  run, and G0 = 0 is the conservative choice since the term only adds.
* xi = 1 leaves the caps undefined (workers never interact, the averaging
  analysis collapses); xi = 0 zeroes cap b, in which case cap a alone is
  used and flagged.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine
from .core import HyperParams, RngStream, lr_at
from .engine import Trajectory, params_dict
from .objectives import NoisyQuadratic, Objective

__all__ = [
    "AssumptionParams",
    "CapUndefined",
    "BoundInapplicable",
    "LrCaps",
    "BoundReport",
    "lr_caps",
    "theorem_bound",
    "corollary_bound",
    "empirical_vs_bound",
    "warmup_gradient_term",
    "seed_averaged_trajectories",
]


class CapUndefined(ValueError):
    """Raised when xi = 1: the learning-rate caps are not defined there."""


class BoundInapplicable(UserWarning):
    """The requested eta exceeds the caps; the bound value is still computed
    but carries no guarantee."""


@dataclass(frozen=True)
class AssumptionParams:
    """Constants of the smoothness/noise model a bound evaluation rests on.

    L         gradient Lipschitz constant
    beta      relative gradient-noise coefficient
    sigma_sq  absolute gradient-noise floor
    F1        objective value at the common starting point
    F_inf     lower bound of the objective
    G0        squared Frobenius norm of the warm-up gradient sum (d >= 2)
    """

    L: float
    beta: float
    sigma_sq: float
    F1: float
    F_inf: float
    G0: float = 0.0

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError(f"L must be > 0, got {self.L}")
        if self.beta < 0 or self.sigma_sq < 0 or self.G0 < 0:
            raise ValueError("beta, sigma_sq and G0 must be >= 0")
        if self.F1 < self.F_inf:
            raise ValueError(
                f"F1 must be >= F_inf, got F1={self.F1}, F_inf={self.F_inf}"
            )

    @classmethod
    def from_quadratic(cls, objective: NoisyQuadratic,
                       x0: np.ndarray | None = None,
                       G0: float = 0.0) -> "AssumptionParams":
        """All constants of a noisy quadratic in closed form (beta = 0)."""
        start = objective.initial_point() if x0 is None else np.asarray(x0, float)
        return cls(
            L=objective.L,
            beta=0.0,
            sigma_sq=objective.sigma_sq,
            F1=objective.full_loss(start),
            F_inf=objective.f_inf_hint,
            G0=G0,
        )


@dataclass(frozen=True)
class LrCaps:
    a: float
    b: float
    eta_max: float
    xi_zero_fallback: bool


def _cap_denom_common(ap: AssumptionParams, p: HyperParams) -> tuple[float, float]:
    # shared pieces of both cap denominators
    L, beta = ap.L, ap.beta
    head = 2.0 * L * p.xi ** 2 * (beta + 1.0) * (1.0 - p.xi)
    inner = (beta + p.K * p.tau) + (beta + 1.0) * (1.0 - p.xi)
    return head, inner


def lr_caps(ap: AssumptionParams, params: HyperParams) -> LrCaps:
    """The two learning-rate caps and their minimum.

    Cap b vanishes identically at xi = 0 even though that limit (pure
    periodic averaging) is perfectly valid, so there eta_max falls back to
    sqrt(a) and the result is flagged.
    """
    if params.xi >= 1.0:
        raise CapUndefined("learning-rate caps are undefined at xi = 1")
    L = ap.L
    tau, d, xi, M, K = params.tau, params.d, params.xi, params.M, params.K
    head, inner = _cap_denom_common(ap, params)
    a = 1.0 / (head + 6.0 * L ** 2 * (d * xi + tau - d) * inner)
    den_b = (head
             + 3.0 * L ** 2 * M * (tau - d) * (2.0 * ap.beta + 2.0 * K * tau)
             + 6.0 * d * M * xi * L ** 2 * inner)
    b = xi * M * (1.0 - xi) / den_b
    if b == 0.0:
        return LrCaps(a=a, b=0.0, eta_max=math.sqrt(a), xi_zero_fallback=True)
    return LrCaps(a=a, b=b, eta_max=min(math.sqrt(a), math.sqrt(b)),
                  xi_zero_fallback=False)


def _bound_terms(ap: AssumptionParams, params: HyperParams,
                 eta: float) -> tuple[float, float, float]:
    if params.xi >= 1.0:
        raise CapUndefined("bound is undefined at xi = 1")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    L, sigma_sq = ap.L, ap.sigma_sq
    tau, d, xi, M, K = params.tau, params.d, params.xi, params.M, params.K
    s = xi * d + tau - d
    if eta == 0.0:
        return math.inf, 0.0, 0.0
    geo = xi ** 2 / (1.0 - xi ** 2)
    t1 = (2.0 * M * (ap.F1 - ap.F_inf)
          + 2.0 * M * K * L * eta ** 2 * sigma_sq * (xi ** 2 * d + tau - d)
          ) / (eta * M * K * s)
    t2 = (3.0 * eta ** 4 * xi * L ** 2 * (tau - d + d * xi)
          / (M * K * s)) * geo * ap.G0
    t3 = (6.0 * eta ** 4 * L ** 2 * sigma_sq / s) * (
        tau * geo * (tau - d + xi * d) + (tau - d) ** 2 + xi * d * (tau - 1))
    return t1, t2, t3


def theorem_bound(ap: AssumptionParams, params: HyperParams, eta: float) -> float:
    """Evaluate the convergence bound at a fixed learning rate.

    If eta exceeds the caps the value is still returned but a
    ``BoundInapplicable`` warning is emitted: outside the caps the inequality
    carries no guarantee.
    """
    caps = lr_caps(ap, params)
    if eta > caps.eta_max:
        warnings.warn(
            f"eta={eta} exceeds eta_max={caps.eta_max}; bound not guaranteed",
            BoundInapplicable,
            stacklevel=2,
        )
    t1, t2, t3 = _bound_terms(ap, params, eta)
    return t1 + t2 + t3


def corollary_bound(ap: AssumptionParams, params: HyperParams,
                    A: float) -> tuple[float, float]:
    """Bound under the scaling eta = A / sqrt(K).

    Returns (full, asymptotic): the full three-term value, whose tail terms
    decay as 1/K^3 and 1/K^2, and the leading 1/sqrt(K) term alone.
    """
    if A <= 0:
        raise ValueError(f"A must be > 0, got {A}")
    if params.xi >= 1.0:
        raise CapUndefined("bound is undefined at xi = 1")
    L, sigma_sq = ap.L, ap.sigma_sq
    tau, d, xi, M, K = params.tau, params.d, params.xi, params.M, params.K
    s = xi * d + tau - d
    geo = xi ** 2 / (1.0 - xi ** 2)
    c1 = (2.0 * M * (ap.F1 - ap.F_inf)
          + 2.0 * M * L * A ** 2 * sigma_sq * (xi ** 2 * d + tau - d)
          ) / (A * M * math.sqrt(K) * s)
    c2 = (3.0 * A ** 4 * xi * L ** 2 * (tau - d + d * xi)
          / (M * K ** 3 * s)) * geo * ap.G0
    c3 = (6.0 * A ** 4 * L ** 2 * sigma_sq / (K ** 2 * s)) * (
        tau * geo * (tau - d + xi * d) + (tau - d) ** 2 + xi * d * (tau - 1))
    return c1 + c2 + c3, c1


@dataclass(frozen=True)
class BoundReport:
    empirical: float
    bound: float
    eta: float
    eta_max: float
    satisfied: bool
    seeds: int
    degenerate: bool = False

    def to_dict(self, ap: AssumptionParams, params: HyperParams) -> dict:
        return {
            "params": params_dict(params),
            "assumption_params": dataclasses.asdict(ap),
            "eta": self.eta,
            "eta_max": self.eta_max,
            "empirical": self.empirical,
            "bound": self.bound,
            "satisfied": self.satisfied,
            "seeds": self.seeds,
        }


def empirical_vs_bound(trajectories: Trajectory | Sequence[Trajectory],
                       ap: AssumptionParams, params: HyperParams,
                       eta: float) -> BoundReport:
    """Compare the seed-averaged measured gradient norm against the bound.

    The bound constrains an expectation, so the measurement should average
    at least 16 independently seeded runs; fewer are accepted with a warning.
    eta = 0 makes the bound infinite and the comparison degenerate.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    if not trajectories:
        raise ValueError("need at least one trajectory")
    if len(trajectories) < 16:
        warnings.warn(
            f"only {len(trajectories)} seeds; the bound constrains an "
            "expectation and may be exceeded by a small sample",
            stacklevel=2,
        )
    empirical = float(np.mean([t.avg_grad_norm_sq for t in trajectories]))
    caps = lr_caps(ap, params)
    if eta == 0.0:
        return BoundReport(empirical=empirical, bound=math.inf, eta=0.0,
                           eta_max=caps.eta_max, satisfied=True,
                           seeds=len(trajectories), degenerate=True)
    bound = theorem_bound(ap, params, eta)
    return BoundReport(empirical=empirical, bound=bound, eta=eta,
                       eta_max=caps.eta_max,
                       satisfied=bool(empirical <= bound),
                       seeds=len(trajectories))


def warmup_gradient_term(params: HyperParams, objective: Objective) -> float:
    """Measure the warm-up gradient term G0 from a seeded run prefix.

    Taken literally, the term accumulates the step-(d-1) gradient matrix
    (d-1) times, so G0 = (d-1)^2 * ||G(X_{d-1})||_F^2 with the gradients the
    run actually samples at that step. Zero whenever d <= 1.
    """
    d = params.d
    if d <= 1:
        return 0.0
    x0 = objective.initial_point()
    X = np.tile(x0, (params.M, 1))
    gens = [RngStream(params.seed, m, "sampling").generator()
            for m in range(params.M)]
    schedule = params.effective_schedule()
    for k in range(d - 1):
        eta_k = lr_at(schedule, k, params.K)
        for m in range(params.M):
            batch = objective.draw_batch(gens[m], params.B_l)
            X[m] = X[m] - eta_k * objective.stoch_grad(X[m], batch)
    frob_sq = 0.0
    for m in range(params.M):
        batch = objective.draw_batch(gens[m], params.B_l)
        g = objective.stoch_grad(X[m], batch)
        frob_sq += float(g @ g)
    return (d - 1) ** 2 * frob_sq


def seed_averaged_trajectories(params: HyperParams, objective: Objective,
                               seeds: Sequence[int],
                               algorithm: str = "dasgd") -> list[Trajectory]:
    """Run the same configuration under several seeds.

    The expectation in the bound is approximated by averaging these runs.
    """
    runner = {
        "dasgd": engine.run_dasgd,
        "local": engine.run_local_sgd,
        "minibatch": engine.run_minibatch,
    }[algorithm]
    return [
        runner(dataclasses.replace(params, seed=s), objective) for s in seeds
    ]

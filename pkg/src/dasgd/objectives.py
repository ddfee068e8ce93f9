"""Stochastic objectives with verifiable gradients and measurable noise.

Three families are provided:

* ``NoisyQuadratic`` -- every constant the bound calculator needs (curvature,
  noise level, optimum value) is available in closed form, which makes exact
  end-to-end checks of the convergence bound possible.
* ``LogisticObjective`` -- binary logistic regression on a synthetic dataset.
* ``TinyMlpObjective`` -- one-hidden-layer tanh regressor; smooth activation
  so the Lipschitz-gradient requirement actually holds (ReLU would not).

All objectives are immutable after construction and safe to evaluate from
multiple threads. Batches are drawn i.i.d. with replacement, except that a
batch size covering the whole dataset returns the full dataset (so the
full-batch gradient is exactly deterministic).
"""

from __future__ import annotations

import csv

import numpy as np

from .core import RngStream

__all__ = [
    "Objective",
    "NoisyQuadratic",
    "LogisticObjective",
    "TinyMlpObjective",
    "grad_check",
    "estimate_L",
    "estimate_variance",
    "load_dataset_csv",
]


class Objective:
    """Interface shared by all objectives.

    ``stoch_grad`` over a batch is the mean of per-sample gradients and is an
    unbiased estimate of ``full_grad``. ``f_inf_hint`` is a known lower bound
    of the full objective when one is available, else None.
    """

    name: str = "objective"
    dim: int
    f_inf_hint: float | None = None

    def full_loss(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss(self, x: np.ndarray, batch) -> float:
        raise NotImplementedError

    def stoch_grad(self, x: np.ndarray, batch) -> np.ndarray:
        raise NotImplementedError

    def draw_batch(self, rng: np.random.Generator, batch_size: int):
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        raise NotImplementedError


class NoisyQuadratic(Objective):
    """F(x) = 0.5 x'Ax - b'x with additive Gaussian gradient noise.

    A "batch" is the realized noise vector of the batch gradient:
    ``stoch_grad(x, eps) = Ax - b + eps`` with ``eps ~ N(0, noise_sigma^2 I)``
    per coordinate, independent of x and of the batch size. Consequently
    E||g - grad F||^2 = dim * noise_sigma^2 exactly, with no relative term.
    """

    name = "quadratic"

    def __init__(self, A: np.ndarray, b: np.ndarray, noise_sigma: float = 0.0,
                 x0: np.ndarray | None = None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T):
            raise ValueError("A must be symmetric")
        eigs = np.linalg.eigvalsh(A)
        if eigs.min() <= 0:
            raise ValueError("A must be positive definite")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.A = A
        self.b = b
        self.noise_sigma = float(noise_sigma)
        self.dim = A.shape[0]
        self.x_star = np.linalg.solve(A, b)
        self.L = float(eigs.max())
        self.f_inf_hint = self.full_loss(self.x_star)
        self.sigma_sq = self.dim * self.noise_sigma ** 2
        self._x0 = (np.asarray(x0, dtype=float) if x0 is not None
                    else self.x_star + np.ones(self.dim) / np.sqrt(self.dim))

    @classmethod
    def diagonal(cls, eigenvalues, noise_sigma: float = 0.0,
                 x0: np.ndarray | None = None) -> "NoisyQuadratic":
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        return cls(np.diag(eigenvalues), np.zeros(len(eigenvalues)),
                   noise_sigma=noise_sigma, x0=x0)

    def full_loss(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.A @ x - self.b @ x)

    def full_grad(self, x):
        return self.A @ np.asarray(x, dtype=float) - self.b

    def loss(self, x, batch):
        return self.full_loss(x) + float(np.asarray(batch) @ x)

    def stoch_grad(self, x, batch):
        return self.full_grad(x) + batch

    def draw_batch(self, rng, batch_size):
        # batch_size does not rescale the noise: noise_sigma is defined as
        # the noise level of the batch gradient itself.
        return self.noise_sigma * rng.standard_normal(self.dim)

    def initial_point(self):
        return self._x0.copy()

    def gap(self, x) -> float:
        """F(x) - F(x*), computed through the quadratic form."""
        delta = np.asarray(x, dtype=float) - self.x_star
        return float(0.5 * delta @ self.A @ delta)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log1pexp(z):
    # log(1 + e^z) without overflow
    return np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))),
                    np.log1p(np.exp(-np.abs(z))))


class LogisticObjective(Objective):
    """L2-regularized logistic regression on a synthetic binary dataset."""

    name = "logistic"

    def __init__(self, dim: int = 10, n_samples: int = 512, reg: float = 1e-2,
                 dataset_seed: int = 0,
                 features: np.ndarray | None = None,
                 labels: np.ndarray | None = None):
        if features is not None:
            features = np.asarray(features, dtype=float)
            labels = np.asarray(labels, dtype=float)
            dim = features.shape[1]
            n_samples = features.shape[0]
        else:
            gen = RngStream(dataset_seed, purpose="dataset").generator()
            features = gen.standard_normal((n_samples, dim))
            w_true = gen.standard_normal(dim)
            probs = _sigmoid(features @ w_true)
            labels = (gen.random(n_samples) < probs).astype(float)
        if reg < 0:
            raise ValueError("reg must be >= 0")
        self.X = features
        self.y = labels
        self.reg = float(reg)
        self.dim = dim
        self.n_samples = n_samples
        self.f_inf_hint = 0.0  # log-loss and the L2 term are both nonnegative

    def _loss_on(self, x, idx) -> float:
        z = self.X[idx] @ x
        data = float(np.mean(_log1pexp(z) - self.y[idx] * z))
        return data + 0.5 * self.reg * float(x @ x)

    def _grad_on(self, x, idx) -> np.ndarray:
        z = self.X[idx] @ x
        resid = _sigmoid(z) - self.y[idx]
        return self.X[idx].T @ resid / len(idx) + self.reg * x

    def full_loss(self, x):
        return self._loss_on(np.asarray(x, dtype=float), np.arange(self.n_samples))

    def full_grad(self, x):
        return self._grad_on(np.asarray(x, dtype=float), np.arange(self.n_samples))

    def loss(self, x, batch):
        return self._loss_on(np.asarray(x, dtype=float), batch)

    def stoch_grad(self, x, batch):
        return self._grad_on(np.asarray(x, dtype=float), batch)

    def draw_batch(self, rng, batch_size):
        if batch_size >= self.n_samples:
            return np.arange(self.n_samples)
        return rng.integers(0, self.n_samples, size=batch_size)

    def initial_point(self):
        return np.zeros(self.dim)


class TinyMlpObjective(Objective):
    """One-hidden-layer tanh regressor, mean squared error, L2 penalty.

    The parameter vector packs W1 (hidden x in), b1, w2, b2 in that order.
    """

    name = "mlp"

    def __init__(self, in_dim: int = 4, hidden: int = 8, n_samples: int = 256,
                 reg: float = 1e-3, dataset_seed: int = 0):
        gen = RngStream(dataset_seed, purpose="dataset").generator()
        self.X = gen.standard_normal((n_samples, in_dim))
        w_ref = gen.standard_normal(in_dim)
        self.y = np.tanh(self.X @ w_ref) + 0.1 * gen.standard_normal(n_samples)
        self.in_dim = in_dim
        self.hidden = hidden
        self.n_samples = n_samples
        self.reg = float(reg)
        self.dim = hidden * in_dim + hidden + hidden + 1
        self.f_inf_hint = 0.0
        self._x0 = 0.1 * gen.standard_normal(self.dim)

    def _unpack(self, x):
        h, i = self.hidden, self.in_dim
        W1 = x[: h * i].reshape(h, i)
        b1 = x[h * i : h * i + h]
        w2 = x[h * i + h : h * i + 2 * h]
        b2 = x[-1]
        return W1, b1, w2, b2

    def _loss_on(self, x, idx) -> float:
        W1, b1, w2, b2 = self._unpack(x)
        hid = np.tanh(self.X[idx] @ W1.T + b1)
        pred = hid @ w2 + b2
        data = 0.5 * float(np.mean((pred - self.y[idx]) ** 2))
        return data + 0.5 * self.reg * float(x @ x)

    def _grad_on(self, x, idx) -> np.ndarray:
        W1, b1, w2, b2 = self._unpack(x)
        Xb = self.X[idx]
        n = len(idx)
        pre = Xb @ W1.T + b1            # (n, hidden)
        hid = np.tanh(pre)
        resid = (hid @ w2 + b2) - self.y[idx]   # (n,)
        g_w2 = hid.T @ resid / n
        g_b2 = float(np.mean(resid))
        back = (resid[:, None] * w2) * (1.0 - hid ** 2)   # (n, hidden)
        g_W1 = back.T @ Xb / n
        g_b1 = back.sum(axis=0) / n
        grad = np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])
        return grad + self.reg * x

    def full_loss(self, x):
        return self._loss_on(np.asarray(x, dtype=float), np.arange(self.n_samples))

    def full_grad(self, x):
        return self._grad_on(np.asarray(x, dtype=float), np.arange(self.n_samples))

    def loss(self, x, batch):
        return self._loss_on(np.asarray(x, dtype=float), batch)

    def stoch_grad(self, x, batch):
        return self._grad_on(np.asarray(x, dtype=float), batch)

    def draw_batch(self, rng, batch_size):
        if batch_size >= self.n_samples:
            return np.arange(self.n_samples)
        return rng.integers(0, self.n_samples, size=batch_size)

    def initial_point(self):
        return self._x0.copy()


def grad_check(objective: Objective, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient vs. central differences.

    Error per coordinate is |analytic - numeric| / max(1, |analytic|); the
    numeric side differentiates the deterministic full objective.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    x = np.asarray(x, dtype=float)
    analytic = objective.full_grad(x)
    worst = 0.0
    for j in range(objective.dim):
        e = np.zeros_like(x)
        e[j] = h
        numeric = (objective.full_loss(x + e) - objective.full_loss(x - e)) / (2 * h)
        err = abs(analytic[j] - numeric) / max(1.0, abs(analytic[j]))
        worst = max(worst, err)
    return worst


def estimate_L(objective: Objective, n_pairs: int = 1000, radius: float = 1.0,
               rng: np.random.Generator | None = None) -> float:
    """Empirical curvature bound: max of ||grad F(x) - grad F(y)|| / ||x - y||
    over random pairs drawn within ``radius`` of the origin. Approaches the
    true constant from below as n_pairs grows."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if rng is None:
        rng = RngStream(0, purpose="lipschitz").generator()
    best = 0.0
    done = 0
    while done < n_pairs:
        x = radius * rng.standard_normal(objective.dim)
        y = radius * rng.standard_normal(objective.dim)
        gap = np.linalg.norm(x - y)
        if gap == 0.0:    # degenerate pair: resample
            continue
        ratio = np.linalg.norm(objective.full_grad(x) - objective.full_grad(y)) / gap
        best = max(best, float(ratio))
        done += 1
    return best


def estimate_variance(objective: Objective, points, n_samples: int = 64,
                      batch_size: int = 1,
                      rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Fit measured gradient variance to a + b * ||grad F||^2 across probes.

    Returns (sigma_sq, beta), both clamped to be nonnegative. If all probe
    points share the same ||grad F||^2 the slope is unidentifiable; beta is
    then 0 and sigma_sq the mean measured variance.
    """
    points = [np.asarray(p, dtype=float) for p in points]
    if len(points) < 2:
        raise ValueError("need at least 2 probe points")
    if n_samples < 2:
        raise ValueError("need at least 2 samples per probe point")
    if rng is None:
        rng = RngStream(0, purpose="variance").generator()
    g_norms = []
    variances = []
    for x in points:
        ref = objective.full_grad(x)
        sq = [
            float(np.sum((objective.stoch_grad(x, objective.draw_batch(rng, batch_size)) - ref) ** 2))
            for _ in range(n_samples)
        ]
        g_norms.append(float(ref @ ref))
        variances.append(float(np.mean(sq)))
    g = np.array(g_norms)
    v = np.array(variances)
    if np.ptp(g) == 0.0:
        return max(float(v.mean()), 0.0), 0.0
    design = np.stack([np.ones_like(g), g], axis=1)
    (sigma_sq, beta), *_ = np.linalg.lstsq(design, v, rcond=None)
    if beta < 0.0:
        beta = 0.0
        sigma_sq = float(v.mean())
    if sigma_sq < 0.0:
        sigma_sq = 0.0
        beta = max(float((g @ v) / (g @ g)), 0.0)
    return float(sigma_sq), float(beta)


def load_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a dataset with columns feature_0..feature_{d-1}, label."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        feat_cols = sorted(
            (c for c in fields if c.startswith("feature_")),
            key=lambda c: int(c.split("_", 1)[1]),
        )
        if not feat_cols or "label" not in fields:
            raise ValueError(
                "dataset CSV needs feature_0..feature_{d-1} and label columns"
            )
        feats, labels = [], []
        for row in reader:
            feats.append([float(row[c]) for c in feat_cols])
            labels.append(float(row["label"]))
    return np.array(feats), np.array(labels)

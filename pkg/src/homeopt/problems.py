"""Desk-scale differentiable test problems and synthetic dataset generation.

The empirical objective is always a mean of per-sample losses over a finite
dataset; sampling an index uniformly per step makes that dataset the data
distribution itself, so measured gradient-noise and smoothness constants are
exact for the objective being optimized.

Problem suite:

* ``quadratic`` — f(theta; z) = 0.5 * sum_j curv_j (theta_j - x_j)^2 where the
  sample targets x are centered perturbations of a planted optimum, so the
  planted optimum is the exact empirical minimizer at every dataset size.
* ``rosenbrock`` — the classic valley as a single-sample deterministic
  problem (zero gradient noise).
* ``logistic`` — binary cross-entropy on Gaussian features with labels from
  a planted separator plus 5% label flips; per-sample gradient norms are
  bounded by the feature norms.
* ``tiny_mlp`` — one-hidden-layer tanh network regressing targets produced
  by a fixed teacher of the same shape; backprop is hand-coded.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericBlowupError, ValidationError
from .numkit import as_vec, derive_seed

_FLIP_RATE = 0.05
_DEFAULT_HIDDEN = 8


class ProblemKind(str, Enum):
    QUADRATIC = "quadratic"
    ROSENBROCK = "rosenbrock"
    LOGISTIC = "logistic"
    TINY_MLP = "tiny_mlp"


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class Dataset:
    """Immutable sample container with its generation recipe attached.

    ``family`` keys the planted structure (separator, teacher, optimum) that
    defines the sampling distribution; ``seed`` keys the draws themselves.
    Datasets sharing a family are i.i.d. from one distribution.
    """

    kind: ProblemKind
    dim: int            # feature dimension of each sample
    seed: int
    family: int
    scale: float
    X: np.ndarray       # (n, dim)
    y: np.ndarray       # (n,)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def sample(self, i: int) -> Sample:
        if not 0 <= i < self.n:
            raise ValidationError(f"sample index {i} out of range [0, {self.n})")
        return Sample(x=self.X[i], y=float(self.y[i]))

    @property
    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(self.n)]


@dataclass(frozen=True)
class Problem:
    """A per-sample loss family and its parameter dimension."""

    kind: ProblemKind
    dim: int                      # parameter dimension
    feature_dim: int
    curvature: np.ndarray | None = None   # quadratic only
    hidden: int = _DEFAULT_HIDDEN         # tiny_mlp only


def make_problem(kind, dim: int, curvature=None,
                 hidden: int = _DEFAULT_HIDDEN) -> Problem:
    """Build a problem; ``dim`` is the feature/input dimension.

    For ``tiny_mlp`` the parameter dimension is derived from the widths
    (input ``dim``, ``hidden`` units, scalar output).
    """
    kind = ProblemKind(kind)
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")
    if kind is ProblemKind.QUADRATIC:
        curv = np.ones(dim) if curvature is None else as_vec(curvature)
        if curv.shape[0] != dim:
            raise DimensionError("curvature length must equal dim")
        if (curv <= 0).any():
            raise ValidationError("curvature must be positive element-wise")
        return Problem(kind, dim, dim, curvature=curv)
    if kind is ProblemKind.ROSENBROCK:
        if dim < 2:
            raise ValidationError("rosenbrock needs dim >= 2")
        return Problem(kind, dim, 0)
    if kind is ProblemKind.LOGISTIC:
        return Problem(kind, dim, dim)
    # tiny_mlp: W1 (hidden x dim), b1 (hidden), w2 (hidden), b2 (1)
    if hidden < 1:
        raise ValidationError(f"hidden width must be >= 1, got {hidden}")
    param_dim = hidden * dim + 2 * hidden + 1
    return Problem(kind, param_dim, dim, hidden=hidden)


def _gen(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *tags)))


def _teacher(dim: int, hidden: int, seed: int):
    rng = _gen(seed, 11)
    w1 = rng.standard_normal((hidden, dim)) / np.sqrt(dim)
    w2 = rng.standard_normal(hidden) / np.sqrt(hidden)
    return w1, w2


def _planted_separator(dim: int, seed: int) -> np.ndarray:
    return _gen(seed, 12).standard_normal(dim)


def _planted_optimum(dim: int, seed: int) -> np.ndarray:
    return _gen(seed, 13).standard_normal(dim)


def _draw_samples(kind: ProblemKind, dim: int, seed: int, family: int,
                  scale: float, count: int, tag: int):
    """Draw ``count`` samples: draws keyed by ``seed``, plant by ``family``."""
    rng = _gen(seed, 20, tag)
    if kind is ProblemKind.LOGISTIC:
        w_star = _planted_separator(dim, family)
        X = scale * rng.standard_normal((count, dim))
        clean = (X @ w_star > 0).astype(np.float64)
        flips = rng.random(count) < _FLIP_RATE
        y = np.where(flips, 1.0 - clean, clean)
        return X, y
    if kind is ProblemKind.QUADRATIC:
        opt = _planted_optimum(dim, family)
        X = opt + scale * rng.standard_normal((count, dim))
        return X, np.zeros(count)
    if kind is ProblemKind.TINY_MLP:
        w1, w2 = _teacher(dim, _DEFAULT_HIDDEN, family)
        X = scale * rng.standard_normal((count, dim))
        y = np.tanh(X @ w1.T) @ w2
        return X, y
    # rosenbrock: the sample carries no information
    return np.zeros((count, 0)), np.zeros(count)


def make_dataset(kind, n: int, dim: int, seed: int, scale: float = 1.0,
                 family_seed: int | None = None) -> Dataset:
    """Generate a dataset deterministically from its arguments.

    ``family_seed`` pins the planted structure; omit it and the dataset is
    self-contained (plant keyed by ``seed``). Pass one family seed to many
    datasets to draw them all from a single distribution.
    """
    kind = ProblemKind(kind)
    if n < 1:
        raise ValidationError(f"dataset size must be >= 1, got {n}")
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    if kind is ProblemKind.ROSENBROCK and n != 1:
        raise ValidationError("rosenbrock is a deterministic single-sample "
                              f"problem; got n={n}")
    family = seed if family_seed is None else family_seed
    X, y = _draw_samples(kind, dim, seed, family, scale, n, tag=0)
    if kind is ProblemKind.QUADRATIC:
        # Center the perturbations so the planted optimum is the exact
        # empirical minimizer for every n (for n=1 the draw collapses onto it).
        X = X - X.mean(axis=0) + _planted_optimum(dim, family)
    return Dataset(kind=kind, dim=dim, seed=seed, family=family, scale=scale,
                   X=X, y=y)


def fresh_sample(S: Dataset, perturb_seed: int) -> Sample:
    """One new i.i.d. draw from the distribution that produced ``S``."""
    X, y = _draw_samples(S.kind, S.dim, S.seed, S.family, S.scale, 1,
                         tag=derive_seed(perturb_seed, 21))
    return Sample(x=X[0], y=float(y[0]))


def _sigmoid(a):
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _unpack_mlp(p: Problem, theta: np.ndarray):
    h, d = p.hidden, p.feature_dim
    w1 = theta[:h * d].reshape(h, d)
    b1 = theta[h * d:h * d + h]
    w2 = theta[h * d + h:h * d + 2 * h]
    b2 = theta[-1]
    return w1, b1, w2, b2


def loss_grad(p: Problem, theta, z: Sample):
    """Per-sample loss and analytic gradient."""
    theta = as_vec(theta)
    if theta.shape[0] != p.dim:
        raise DimensionError(f"theta dim {theta.shape[0]} != problem dim {p.dim}")
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grad = _loss_grad_impl(p, theta, z)
    if not (np.isfinite(loss) and np.isfinite(grad).all()):
        raise NumericBlowupError("non-finite loss or gradient")
    return loss, grad


def _loss_grad_impl(p: Problem, theta: np.ndarray, z: Sample):
    if p.kind is ProblemKind.QUADRATIC:
        r = theta - z.x
        loss = 0.5 * float(np.dot(p.curvature * r, r))
        grad = p.curvature * r
    elif p.kind is ProblemKind.ROSENBROCK:
        t0, t1 = theta[:-1], theta[1:]
        gap = t1 - t0 * t0
        loss = float(np.sum(100.0 * gap * gap + (1.0 - t0) ** 2))
        grad = np.zeros_like(theta)
        grad[:-1] = -400.0 * t0 * gap - 2.0 * (1.0 - t0)
        grad[1:] += 200.0 * gap
    elif p.kind is ProblemKind.LOGISTIC:
        a = float(np.dot(theta, z.x))
        loss = float(np.logaddexp(0.0, a) - z.y * a)
        s = float(_sigmoid(np.array([a]))[0])
        grad = (s - z.y) * z.x
    else:
        w1, b1, w2, b2 = _unpack_mlp(p, theta)
        act = w1 @ z.x + b1
        hid = np.tanh(act)
        out = float(np.dot(w2, hid) + b2)
        r = out - z.y
        loss = 0.5 * r * r
        d_act = r * w2 * (1.0 - hid * hid)
        grad = np.concatenate([np.outer(d_act, z.x).ravel(), d_act,
                               r * hid, np.array([r])])
    return loss, grad


def batch_losses(p: Problem, theta, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample losses for every row of (X, y), vectorized.

    Overflow is not an error here; callers check finiteness where it matters.
    """
    theta = as_vec(theta)
    with np.errstate(over="ignore", invalid="ignore"):
        if p.kind is ProblemKind.QUADRATIC:
            r = theta[None, :] - X
            return 0.5 * (r * r) @ p.curvature
        if p.kind is ProblemKind.ROSENBROCK:
            loss, _ = loss_grad(p, theta, Sample(x=np.zeros(0), y=0.0))
            return np.full(X.shape[0], loss)
        if p.kind is ProblemKind.LOGISTIC:
            a = X @ theta
            return np.logaddexp(0.0, a) - y * a
        w1, b1, w2, b2 = _unpack_mlp(p, theta)
        out = np.tanh(X @ w1.T + b1) @ w2 + b2
        return 0.5 * (out - y) ** 2


def empirical_risk(p: Problem, theta, S: Dataset) -> float:
    """Mean per-sample loss over the dataset."""
    if S.n < 1:
        raise ValidationError("empirical risk of an empty dataset")
    risk = float(batch_losses(p, theta, S.X, S.y).mean())
    if not np.isfinite(risk):
        raise NumericBlowupError("non-finite empirical risk")
    return risk


def full_gradient(p: Problem, theta, S: Dataset) -> np.ndarray:
    """Gradient of the empirical risk, vectorized over samples."""
    theta = as_vec(theta)
    n = S.n
    with np.errstate(over="ignore", invalid="ignore"):
        if p.kind is ProblemKind.QUADRATIC:
            return p.curvature * (theta - S.X.mean(axis=0))
        if p.kind is ProblemKind.ROSENBROCK:
            return _loss_grad_impl(p, theta, Sample(x=np.zeros(0), y=0.0))[1]
        if p.kind is ProblemKind.LOGISTIC:
            resid = _sigmoid(S.X @ theta) - S.y
            return (resid @ S.X) / n
        w1, b1, w2, b2 = _unpack_mlp(p, theta)
        act = S.X @ w1.T + b1
        hid = np.tanh(act)
        resid = hid @ w2 + b2 - S.y
        d_act = (resid[:, None] * w2[None, :]) * (1.0 - hid * hid)
        g_w1 = d_act.T @ S.X / n
        g_b1 = d_act.mean(axis=0)
        g_w2 = hid.T @ resid / n
        return np.concatenate([g_w1.ravel(), g_b1, g_w2,
                               np.array([resid.mean()])])


class GradStats(NamedTuple):
    G_hat: float
    L_hat: float
    sigma_hat: float


def grad_stats(p: Problem, S: Dataset, theta_samples) -> GradStats:
    """Measure gradient-bound, smoothness, and noise constants at probe points.

    ``G_hat`` is the largest per-sample gradient norm seen, ``sigma_hat`` the
    largest root-mean-square deviation of per-sample gradients from the
    full-batch gradient, and ``L_hat`` the largest secant slope of the
    full-batch gradient over distinct probe pairs. For quadratics the exact
    curvature is known; the secant estimate is checked against it and the
    exact value is returned.
    """
    probes = [as_vec(t) for t in theta_samples]
    if len(probes) < 2:
        raise ValidationError("grad_stats needs at least 2 probe points")
    g_hat = 0.0
    sigma_hat = 0.0
    full = []
    for theta in probes:
        grads = np.stack([loss_grad(p, theta, S.sample(i))[1]
                          for i in range(S.n)])
        mean_grad = grads.mean(axis=0)
        full.append(mean_grad)
        g_hat = max(g_hat, float(np.linalg.norm(grads, axis=1).max()))
        dev = grads - mean_grad
        sigma_hat = max(sigma_hat,
                        float(np.sqrt((dev * dev).sum(axis=1).mean())))

    l_hat = 0.0
    any_pair = False
    for a in range(len(probes)):
        for b in range(a + 1, len(probes)):
            gap = float(np.linalg.norm(probes[a] - probes[b]))
            if gap == 0.0:
                continue
            any_pair = True
            slope = float(np.linalg.norm(full[a] - full[b])) / gap
            l_hat = max(l_hat, slope)
    if not any_pair:
        raise ValidationError("all probe pairs coincide; cannot estimate L")

    if p.kind is ProblemKind.QUADRATIC:
        exact = float(p.curvature.max())
        if l_hat > exact * (1.0 + 1e-9):
            raise ValidationError(
                f"secant estimate {l_hat} exceeds known curvature {exact}")
        l_hat = exact
    return GradStats(G_hat=g_hat, L_hat=l_hat, sigma_hat=sigma_hat)


def write_dataset(S: Dataset, path) -> None:
    """One sample per line: features comma-separated, tab, target."""
    with open(path, "w") as fh:
        for i in range(S.n):
            feats = ",".join(f"{x:.17g}" for x in S.X[i])
            fh.write(f"{feats}\t{S.y[i]:.17g}\n")


def read_dataset(path):
    """Parse the line format back into (X, y) arrays."""
    X_rows, y_rows = [], []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            feats, _, target = line.partition("\t")
            row = [float(v) for v in feats.split(",")] if feats else []
            X_rows.append(row)
            y_rows.append(float(target))
    if not X_rows:
        raise ValidationError(f"no samples found in {path}")
    return np.array(X_rows, dtype=np.float64), np.array(y_rows, dtype=np.float64)

"""Single-trajectory training loop shared by the CLI and the analysis tools."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericBlowupError, ValidationError
from .numkit import RngStream, as_vec, draw_index
from .optim import HyperParams, OptimizerKind, init_state, step
from .problems import Dataset, Problem, Sample, empirical_risk, full_gradient, loss_grad


@dataclass
class TrainTrace:
    """Per-step training record; row 0 is the starting point."""

    t: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    rho: np.ndarray
    switched_home: np.ndarray
    step_norm: np.ndarray

    def rows(self):
        for k in range(self.t.shape[0]):
            yield (int(self.t[k]), self.loss[k], self.grad_norm[k],
                   self.rho[k], self.switched_home[k], self.step_norm[k])


@dataclass
class TrainResult:
    trace: TrainTrace
    theta: np.ndarray
    theta_snapshots: list = field(default_factory=list)
    blowup_step: int | None = None

    @property
    def mean_grad_norm(self) -> float:
        """Running average of the full-gradient norm over t = 0..T."""
        return float(self.trace.grad_norm.mean())


def _batch_gradient(p: Problem, theta, S: Dataset, stream: RngStream,
                    t: int, batch_size: int):
    """Mean of ``batch_size`` per-sample gradients drawn at step t."""
    total_loss = 0.0
    total_grad = np.zeros(p.dim)
    for b in range(batch_size):
        j = draw_index(stream, t, S.n, salt=b)
        loss, grad = loss_grad(p, theta, S.sample(j))
        total_loss += loss
        total_grad += grad
    return total_loss / batch_size, total_grad / batch_size


def train_run(p: Problem, S: Dataset, kind: OptimizerKind, hp: HyperParams,
              T: int, stream: RngStream, theta0, batch_size: int = 1,
              snapshot_every: int = 0) -> TrainResult:
    """Run ``T`` optimizer steps on the empirical risk of ``S``.

    A numeric blow-up stops the run; the partial trace is returned with
    ``blowup_step`` set instead of raising, so callers can report it.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    theta = as_vec(theta0).copy()
    state = init_state(p.dim)

    t_col = [0]
    loss_col = [empirical_risk(p, theta, S)]
    grad_col = [float(np.linalg.norm(full_gradient(p, theta, S)))]
    rho_col = [0.0]
    switched_col = [0.0]
    stepn_col = [0.0]
    snapshots = []
    blowup = None

    for t in range(1, T + 1):
        try:
            if batch_size == 1:
                j = draw_index(stream, t, S.n)
                _, g = loss_grad(p, theta, S.sample(j))
            else:
                _, g = _batch_gradient(p, theta, S, stream, t, batch_size)
            theta_next, state, rec = step(kind, hp, state, theta, g)
            risk = empirical_risk(p, theta_next, S)
            grad_norm = float(np.linalg.norm(full_gradient(p, theta_next, S)))
            if not np.isfinite(grad_norm):
                raise NumericBlowupError("non-finite gradient norm", step=t)
        except NumericBlowupError:
            blowup = t
            break
        theta = theta_next
        t_col.append(t)
        loss_col.append(risk)
        grad_col.append(grad_norm)
        rho_col.append(rec.rho)
        switched_col.append(rec.switched_home)
        stepn_col.append(rec.step_norm)
        if snapshot_every and t % snapshot_every == 0:
            snapshots.append(theta.copy())

    trace = TrainTrace(t=np.array(t_col, dtype=np.int64),
                       loss=np.array(loss_col),
                       grad_norm=np.array(grad_col),
                       rho=np.array(rho_col),
                       switched_home=np.array(switched_col),
                       step_norm=np.array(stepn_col))
    return TrainResult(trace=trace, theta=theta, theta_snapshots=snapshots,
                       blowup_step=blowup)

"""Twin-trajectory stability probes.

The protocol: build a second dataset differing from the first in exactly one
sample, run the same optimizer on both with one shared sample-index stream,
and record how far the two parameter trajectories drift apart. Averaged over
replicates, the drift estimates the uniform-stability constant, which upper
bounds the generalization gap.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericBlowupError, ValidationError
from .numkit import RngStream, as_vec, derive_seed, draw_index
from .optim import HyperParams, OptimizerKind, init_state, step
from .problems import (Dataset, Problem, ProblemKind, batch_losses,
                       empirical_risk, fresh_sample, make_dataset, make_problem)

_PROBE_TAG = 31
_HELDOUT_TAG = 32
_FAMILY_TAG = 30
_INDEX_STREAM_ID = 1
_REPLACE_STREAM_ID = 101


@dataclass(frozen=True)
class TwinRun:
    """Configuration of one synchronized pair of trainings."""

    problem: Problem
    base: Dataset
    perturbed: Dataset
    replaced_index: int
    index_stream: RngStream
    kind: OptimizerKind
    hp: HyperParams
    T: int
    theta0: np.ndarray


@dataclass
class DivergenceTrace:
    """Per-step divergence between the twin trajectories."""

    t: np.ndarray
    div_l2: np.ndarray
    div_m: np.ndarray
    div_v: np.ndarray
    rho: np.ndarray
    hit_replaced: np.ndarray
    switched_home: np.ndarray

    CSV_HEADER = ("t", "div_l2", "div_m", "div_v", "rho_t",
                  "hit_replaced", "switched_home")

    def rows(self):
        for k in range(self.t.shape[0]):
            yield (int(self.t[k]), self.div_l2[k], self.div_m[k],
                   self.div_v[k], self.rho[k], int(self.hit_replaced[k]),
                   self.switched_home[k])


@dataclass
class TwinResult:
    trace: DivergenceTrace
    theta_base: np.ndarray
    theta_twin: np.ndarray


@dataclass
class StabilityEstimate:
    n_pairs: int
    eps_hat: float
    gap_hat: float


def make_twin(S: Dataset, i: int, perturb_seed: int) -> Dataset:
    """Copy of S with sample i replaced by a fresh draw from S's generator."""
    if not 0 <= i < S.n:
        raise ValidationError(f"replace index {i} out of range [0, {S.n})")
    z = fresh_sample(S, perturb_seed)
    X = S.X.copy()
    y = S.y.copy()
    X[i] = z.x
    y[i] = z.y
    return replace(S, X=X, y=y)


def _check_twin_pair(cfg: TwinRun) -> None:
    a, b = cfg.base, cfg.perturbed
    if a.n != b.n:
        raise ValidationError("twin datasets must have equal size")
    if not 0 <= cfg.replaced_index < a.n:
        raise ValidationError("replaced_index out of range")
    same = np.all(a.X == b.X, axis=1) & (a.y == b.y)
    differing = np.flatnonzero(~same)
    if differing.size != 1 or differing[0] != cfg.replaced_index:
        raise ValidationError(
            f"twin datasets must differ in exactly the replaced sample; "
            f"differing rows: {differing.tolist()}")


def _partial_trace(cols, upto: int) -> DivergenceTrace:
    return DivergenceTrace(
        t=np.array(cols["t"][:upto], dtype=np.int64),
        div_l2=np.array(cols["div_l2"][:upto]),
        div_m=np.array(cols["div_m"][:upto]),
        div_v=np.array(cols["div_v"][:upto]),
        rho=np.array(cols["rho"][:upto]),
        hit_replaced=np.array(cols["hit"][:upto], dtype=bool),
        switched_home=np.array(cols["switched"][:upto]))


def run_twin(cfg: TwinRun) -> TwinResult:
    """Step both trajectories for T steps on one shared index stream."""
    _check_twin_pair(cfg)
    theta0 = as_vec(cfg.theta0)
    if theta0.shape[0] != cfg.problem.dim:
        raise ValidationError("theta0 dimension does not match the problem")
    from .problems import loss_grad  # local import to keep module load light

    th_a = theta0.copy()
    th_b = theta0.copy()
    st_a = init_state(cfg.problem.dim)
    st_b = init_state(cfg.problem.dim)
    n = cfg.base.n
    cols = {k: [] for k in ("t", "div_l2", "div_m", "div_v", "rho",
                            "hit", "switched")}

    for t in range(1, cfg.T + 1):
        j = draw_index(cfg.index_stream, t, n)
        try:
            _, g_a = loss_grad(cfg.problem, th_a, cfg.base.sample(j))
            _, g_b = loss_grad(cfg.problem, th_b, cfg.perturbed.sample(j))
            th_a, st_a, rec = step(cfg.kind, cfg.hp, st_a, th_a, g_a)
            th_b, st_b, _ = step(cfg.kind, cfg.hp, st_b, th_b, g_b)
        except NumericBlowupError as exc:
            raise NumericBlowupError(
                "twin run blew up", step=t,
                partial=_partial_trace(cols, len(cols["t"]))) from exc
        div = float(np.linalg.norm(th_a - th_b))
        div_m = float(np.linalg.norm(st_a.m - st_b.m))
        div_v = float(np.linalg.norm(st_a.v - st_b.v))
        if not (math.isfinite(div) and math.isfinite(div_m)
                and math.isfinite(div_v)):
            raise NumericBlowupError(
                "non-finite twin divergence", step=t,
                partial=_partial_trace(cols, len(cols["t"])))
        cols["t"].append(t)
        cols["div_l2"].append(div)
        cols["div_m"].append(div_m)
        cols["div_v"].append(div_v)
        cols["rho"].append(rec.rho)
        cols["hit"].append(j == cfg.replaced_index)
        cols["switched"].append(rec.switched_home)

    return TwinResult(trace=_partial_trace(cols, cfg.T),
                      theta_base=th_a, theta_twin=th_b)


def generalization_gap(p: Problem, theta, S: Dataset,
                       S_heldout: Dataset) -> float:
    """|empirical risk on held-out data - empirical risk on training data|."""
    if S.n < 1 or S_heldout.n < 1:
        raise ValidationError("generalization gap needs non-empty datasets")
    return abs(empirical_risk(p, theta, S_heldout) - empirical_risk(p, theta, S))


@dataclass
class EnsembleResult:
    """Aggregates over the finite replicates of one (N, optimizer) cell."""

    N: int
    n_pairs: int
    blowups: int
    mean_div: np.ndarray          # per-step mean div_l2 over finite replicates
    final_divs: np.ndarray
    eps_hat: float
    gap_hat: float


def sweep_family(seed: int) -> int:
    """The family seed fixing one sampling distribution for a whole sweep."""
    return derive_seed(seed, _FAMILY_TAG)


def _probe_sets(problem_kind: ProblemKind, dim: int, seed: int, scale: float,
                probe_points: int, heldout_n: int):
    family = sweep_family(seed)
    probe = make_dataset(problem_kind, probe_points, dim,
                         derive_seed(seed, _PROBE_TAG), scale=scale,
                         family_seed=family)
    heldout = make_dataset(problem_kind, heldout_n, dim,
                           derive_seed(seed, _HELDOUT_TAG), scale=scale,
                           family_seed=family)
    return probe, heldout


def _one_replicate(problem: Problem, problem_kind: ProblemKind, dim: int,
                   N: int, kind: OptimizerKind, hp: HyperParams, T: int,
                   seed: int, r: int, scale: float, probe: Dataset,
                   heldout: Dataset):
    rseed = derive_seed(seed, N, r)
    S = make_dataset(problem_kind, N, dim, rseed, scale=scale,
                     family_seed=sweep_family(seed))
    i = draw_index(RngStream(rseed, _REPLACE_STREAM_ID), 0, N)
    S_i = make_twin(S, i, perturb_seed=derive_seed(rseed, 7))
    cfg = TwinRun(problem=problem, base=S, perturbed=S_i, replaced_index=i,
                  index_stream=RngStream(rseed, _INDEX_STREAM_ID),
                  kind=kind, hp=hp, T=T, theta0=np.zeros(problem.dim))
    try:
        res = run_twin(cfg)
    except NumericBlowupError:
        return None
    loss_a = batch_losses(problem, res.theta_base, probe.X, probe.y)
    loss_b = batch_losses(problem, res.theta_twin, probe.X, probe.y)
    eps = float(np.abs(loss_a - loss_b).max())
    gap = generalization_gap(problem, res.theta_base, S, heldout)
    return res.trace.div_l2, eps, gap


def _replicate_worker(args):
    return _one_replicate(*args)


def run_twin_ensemble(problem_kind, dim: int, N: int, kind: OptimizerKind,
                      hp: HyperParams, T: int, n_pairs: int, seed: int,
                      scale: float = 1.0, probe_points: int = 100,
                      heldout_n: int = 200, jobs: int = 1) -> EnsembleResult:
    """Average ``n_pairs`` independent twin runs at one dataset size.

    Each replicate draws its own dataset, replaced index, and index stream
    from seeds derived from (seed, N, replicate). Blown-up replicates are
    counted, not dropped silently; means are over the finite ones.
    """
    problem_kind = ProblemKind(problem_kind)
    if N < 2:
        raise ValidationError(f"twin protocol needs N >= 2, got {N}")
    if n_pairs < 1:
        raise ValidationError(f"n_pairs must be >= 1, got {n_pairs}")
    problem = make_problem(problem_kind, dim)
    probe, heldout = _probe_sets(problem_kind, dim, seed, scale,
                                 probe_points, heldout_n)
    tasks = [(problem, problem_kind, dim, N, kind, hp, T, seed, r, scale,
              probe, heldout) for r in range(n_pairs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_replicate_worker, tasks))
    else:
        outcomes = [_replicate_worker(t) for t in tasks]

    finite = [o for o in outcomes if o is not None]
    blowups = len(outcomes) - len(finite)
    if not finite:
        raise NumericBlowupError(
            f"all {n_pairs} replicates blew up at N={N}")
    divs = np.stack([o[0] for o in finite])
    eps_vals = np.array([o[1] for o in finite])
    gap_vals = np.array([o[2] for o in finite])
    return EnsembleResult(N=N, n_pairs=n_pairs, blowups=blowups,
                          mean_div=divs.mean(axis=0),
                          final_divs=divs[:, -1],
                          eps_hat=float(eps_vals.mean()),
                          gap_hat=float(gap_vals.mean()))


@dataclass
class SweepRow:
    N: int
    mean_final_div: float
    eps_hat: float
    gap_hat: float
    blowups: int


@dataclass
class SweepResult:
    rows: list
    slope: float
    mean_traces: dict

    def estimate(self, n_pairs: int) -> StabilityEstimate:
        return StabilityEstimate(n_pairs=n_pairs,
                                 eps_hat=float(np.mean([r.eps_hat
                                                        for r in self.rows])),
                                 gap_hat=float(np.mean([r.gap_hat
                                                        for r in self.rows])))


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    lx = lx - lx.mean()
    return float((lx * (ly - ly.mean())).sum() / (lx * lx).sum())


def stability_sweep(kind: OptimizerKind, hp: HyperParams, problem_kind,
                    dim: int, Ns, T: int, n_pairs: int, seed: int,
                    scale: float = 1.0, probe_points: int = 100,
                    heldout_n: int = 200, jobs: int = 1) -> SweepResult:
    """Replicate twin runs across dataset sizes and fit the eps-vs-N slope."""
    Ns = sorted(int(N) for N in Ns)
    if any(N < 2 for N in Ns):
        raise ValidationError("all sweep sizes must be >= 2")
    if n_pairs < 10:
        raise ValidationError(f"sweeps need n_pairs >= 10, got {n_pairs}")
    rows = []
    traces = {}
    for N in Ns:
        ens = run_twin_ensemble(problem_kind, dim, N, kind, hp, T, n_pairs,
                                seed, scale=scale, probe_points=probe_points,
                                heldout_n=heldout_n, jobs=jobs)
        rows.append(SweepRow(N=N, mean_final_div=float(ens.final_divs.mean()),
                             eps_hat=ens.eps_hat, gap_hat=ens.gap_hat,
                             blowups=ens.blowups))
        traces[N] = ens.mean_div
    slope = loglog_slope([r.N for r in rows], [r.eps_hat for r in rows]) \
        if len(rows) >= 2 else float("nan")
    return SweepResult(rows=rows, slope=slope, mean_traces=traces)

"""Config-driven experiment commands producing CSV/JSON artifacts.

Subcommands: train, stability, bounds, plotdata, presets. Every run echoes
its fully resolved config into the output directory, and rerunning from that
echo reproduces the CSV outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bounds import (AnalysisConstants, bound_preconditions,
                     compare_trace_to_bound, theorem_bound_rhs,
                     trace_recursion)
from .config import ExperimentConfig, fmt_float, load_config
from .errors import (ConfigError, HomeoptError, NumericBlowupError,
                     RecursionOverflowError, ValidationError)
from .numkit import RngStream, derive_seed
from .optim import HOME_KINDS, OptimizerKind, preset, preset_names
from .problems import ProblemKind, grad_stats, make_dataset, make_problem
from .runner import train_run
from .stability import loglog_slope, run_twin_ensemble

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_LONG_HEADER = ("series", "t", "value")


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return fmt_float(float(value))


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_csv(path: Path):
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln]
    header = tuple(lines[0].split(","))
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _prepare_out(cfg: ExperimentConfig, out_override: str | None) -> Path:
    out = Path(out_override) if out_override else Path(cfg.out_dir())
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.echo())
    return out


def _theta0(cfg: ExperimentConfig, dim: int) -> np.ndarray:
    s = cfg["run.theta0_scale"]
    if s == 0.0:
        return np.zeros(dim)
    gen = np.random.Generator(np.random.Philox(
        key=derive_seed(cfg["run.seed"], 41)))
    return s * gen.standard_normal(dim)


def _build_problem(cfg: ExperimentConfig):
    kind = ProblemKind(cfg["problem.kind"])
    problem = make_problem(kind, cfg["problem.dim"])
    dataset = make_dataset(kind, cfg["problem.n"], cfg["problem.dim"],
                           cfg["problem.seed"], scale=cfg["problem.scale"])
    return problem, dataset


def _measured_constants(cfg: ExperimentConfig, problem, dataset, result):
    """Estimate (G, L, sigma) from trajectory + random probe points."""
    probes = list(result.theta_snapshots)
    gen = np.random.Generator(np.random.Philox(
        key=derive_seed(cfg["run.seed"], 42)))
    for _ in range(8):
        probes.append(gen.standard_normal(problem.dim))
    probes.append(np.zeros(problem.dim))
    probes.append(result.theta)
    return grad_stats(problem, dataset, probes)


def cmd_train(cfg: ExperimentConfig, out_override: str | None,
              jobs: int) -> int:
    problem, dataset = _build_problem(cfg)
    out = _prepare_out(cfg, out_override)
    hp = cfg.hyperparams()
    kind = cfg.kind()
    t0 = time.perf_counter()
    result = train_run(problem, dataset, kind, hp, cfg["run.T"],
                       RngStream(cfg["run.seed"], 1), _theta0(cfg, problem.dim),
                       batch_size=cfg["run.batch_size"],
                       snapshot_every=max(1, cfg["run.T"] // 16))
    wall = time.perf_counter() - t0

    write_csv(out / "trace.csv",
              ("t", "loss", "grad_norm", "rho_t", "switched_home", "step_norm"),
              result.trace.rows())
    stats = _measured_constants(cfg, problem, dataset, result)
    trace = result.trace
    summary = {
        "name": cfg.name,
        "kind": kind.value,
        "final_risk": float(trace.loss[-1]),
        "final_grad_norm": float(trace.grad_norm[-1]),
        "mean_grad_norm": result.mean_grad_norm,
        "min_rho": float(trace.rho[1:].min()) if trace.rho.size > 1 else 0.0,
        "mean_rho": float(trace.rho[1:].mean()) if trace.rho.size > 1 else 0.0,
        "switch_events": int((trace.switched_home > 0).sum()),
        "wall_time_s": wall,
        "constants": {"G_hat": stats.G_hat, "L_hat": stats.L_hat,
                      "sigma_hat": stats.sigma_hat},
        "blowup_step": result.blowup_step,
    }

    if kind in HOME_KINDS:
        k = AnalysisConstants(
            G=stats.G_hat, L=stats.L_hat, sigma=stats.sigma_hat,
            eta=hp.eta, beta1=hp.beta1, beta2=hp.beta2, eps=hp.eps,
            lam=hp.lam, tau=hp.tau, T=cfg["run.T"], gamma=hp.gamma,
            d=problem.dim,
            F0_minus_Fstar=float(trace.loss[0] - trace.loss.min()))
        violations = bound_preconditions("thm4_home", k)
        verdict = {"preconditions_violated": violations}
        if not violations:
            rhs = theorem_bound_rhs("thm4_home", k)
            verdict["rhs"] = rhs
            verdict["mean_grad_norm_below_rhs"] = bool(
                result.mean_grad_norm <= rhs)
        summary["bound_verdict"] = verdict

    _write_json(out / "summary.json", summary)
    if result.blowup_step is not None:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_stability(cfg: ExperimentConfig, out_override: str | None,
                  jobs: int) -> int:
    out = _prepare_out(cfg, out_override)
    problem = make_problem(ProblemKind(cfg["problem.kind"]), cfg["problem.dim"])
    hp = cfg.hyperparams()
    kind = cfg.kind()
    t0 = time.perf_counter()

    rows = []
    comparisons = {}
    for N in cfg["run.Ns"]:
        ens = run_twin_ensemble(cfg["problem.kind"], cfg["problem.dim"], N,
                                kind, hp, cfg["run.T"], cfg["run.n_pairs"],
                                cfg["run.seed"], scale=cfg["problem.scale"],
                                probe_points=cfg["run.probe_points"],
                                heldout_n=cfg["run.heldout_n"], jobs=jobs)
        rows.append((N, float(ens.final_divs.mean()), ens.eps_hat,
                     ens.gap_hat, ens.blowups))
        ndir = out / f"N_{N}"
        ndir.mkdir(exist_ok=True)
        write_csv(ndir / "mean_div.csv", ("t", "mean_div_l2"),
                  [(t + 1, v) for t, v in enumerate(ens.mean_div)])

        # compare the mean divergence against the switching-regime recursion
        from .stability import sweep_family
        S = make_dataset(cfg["problem.kind"], N, cfg["problem.dim"],
                         derive_seed(cfg["run.seed"], N, 0),
                         scale=cfg["problem.scale"],
                         family_seed=sweep_family(cfg["run.seed"]))
        res = train_run(problem, S, kind, hp, min(cfg["run.T"], 200),
                        RngStream(cfg["run.seed"], 9), np.zeros(problem.dim),
                        snapshot_every=16)
        stats = _measured_constants(cfg, problem, S, res)
        k = AnalysisConstants(G=stats.G_hat, L=stats.L_hat,
                              sigma=stats.sigma_hat, eta=hp.eta,
                              beta1=hp.beta1, beta2=hp.beta2, eps=hp.eps,
                              lam=hp.lam,
                              tau=hp.tau if hp.tau is not None else None,
                              rho=float(res.trace.rho[1:].min()),
                              d=problem.dim, N=N)
        regime = "home" if kind in HOME_KINDS and (hp.tau or 0) >= 1 else "srf"
        try:
            states = trace_recursion(k, regime, cfg["run.T"])
            report = compare_trace_to_bound(ens.mean_div, states, N=N)
            comparisons[str(N)] = {
                "regime": regime,
                "all_hold": report.all_hold,
                "max_ratio": report.max_ratio,
                "first_violation": report.first_violation,
                "vacuous_from": report.vacuous_from,
            }
        except RecursionOverflowError as exc:
            comparisons[str(N)] = {"regime": regime,
                                   "overflow_step": exc.step}
        except ValidationError as exc:
            comparisons[str(N)] = {"regime": regime, "skipped": str(exc)}

    write_csv(out / "sweep.csv",
              ("N", "mean_final_div_l2", "eps_hat", "gap_hat", "blowups"),
              rows)
    slope = loglog_slope([r[0] for r in rows], [r[2] for r in rows]) \
        if len(rows) >= 2 else None
    summary = {
        "name": cfg.name,
        "kind": kind.value,
        "slope_eps_vs_N": slope,
        "rows": [{"N": r[0], "mean_final_div_l2": r[1], "eps_hat": r[2],
                  "gap_hat": r[3], "blowups": r[4]} for r in rows],
        "bound_comparisons": comparisons,
        "wall_time_s": time.perf_counter() - t0,
    }
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def _constants_from_config(cfg: ExperimentConfig):
    """Use supplied constants when complete, else measure from the problem."""
    names = ("G", "L", "sigma", "rho", "F0_minus_Fstar")
    given = {n: cfg[f"constants.{n}"] for n in names}
    hp = cfg.hyperparams()
    base = dict(eta=hp.eta, beta1=hp.beta1, beta2=hp.beta2, eps=hp.eps,
                lam=hp.lam, tau=hp.tau, c=hp.c, gamma=hp.gamma,
                d=cfg["problem.dim"], N=cfg["problem.n"], T=cfg["run.T"])
    if all(given[n] != "" for n in ("G", "L", "sigma", "rho")):
        gap = given["F0_minus_Fstar"]
        return AnalysisConstants(G=given["G"], L=given["L"],
                                 sigma=given["sigma"], rho=given["rho"],
                                 F0_minus_Fstar=gap if gap != "" else None,
                                 **base), {"measured": False}

    problem, dataset = _build_problem(cfg)
    res = train_run(problem, dataset, cfg.kind(), hp,
                    min(cfg["run.T"], 200), RngStream(cfg["run.seed"], 1),
                    _theta0(cfg, problem.dim), snapshot_every=16)
    stats = _measured_constants(cfg, problem, dataset, res)
    rho = float(res.trace.rho[1:].min()) if res.trace.rho.size > 1 else 0.0
    gap = float(res.trace.loss[0] - res.trace.loss.min())
    info = {"measured": True, "G": stats.G_hat, "L": stats.L_hat,
            "sigma": stats.sigma_hat, "rho": rho, "F0_minus_Fstar": gap,
            "calibration_blowup_step": res.blowup_step}
    return AnalysisConstants(G=stats.G_hat, L=stats.L_hat,
                             sigma=stats.sigma_hat, rho=rho,
                             F0_minus_Fstar=gap, **base), info


def cmd_bounds(cfg: ExperimentConfig, out_override: str | None,
               jobs: int) -> int:
    out = _prepare_out(cfg, out_override)
    k, info = _constants_from_config(cfg)
    T = cfg["run.T"]
    verdicts = {"constants": info}

    for regime in ("srf", "home"):
        try:
            states = trace_recursion(k, regime, T)
            write_csv(out / f"recursion_{regime}.csv",
                      ("t", "phi", "psi", "varphi"),
                      [(s.t, s.phi, s.psi, s.varphi) for s in states])
            verdicts[f"recursion_{regime}"] = {
                "steps": len(states), "final_varphi": states[-1].varphi}
        except RecursionOverflowError as exc:
            write_csv(out / f"recursion_{regime}.csv",
                      ("t", "phi", "psi", "varphi"),
                      [(s.t, s.phi, s.psi, s.varphi) for s in exc.partial])
            verdicts[f"recursion_{regime}"] = {"overflow_step": exc.step}
        except ValidationError as exc:
            verdicts[f"recursion_{regime}"] = {"skipped": str(exc)}

    t_grid = cfg["run.T_grid"] or (T,)
    grid_rows = []
    for which in ("thm3_srf", "thm4_home", "appF_ew"):
        for T_i in t_grid:
            ki = replace(k, T=int(T_i))
            violations = bound_preconditions(which, ki)
            rhs = theorem_bound_rhs(which, ki, enforce=False)
            grid_rows.append((which, int(T_i), rhs, len(violations)))
            verdicts.setdefault(which, {})[str(T_i)] = {
                "rhs": rhs, "preconditions_violated": violations}
    write_csv(out / "bound_rhs.csv",
              ("which", "T", "rhs", "n_violations"), grid_rows)
    _write_json(out / "summary.json", verdicts)
    return EXIT_OK


def cmd_plotdata(run_dirs, out_path: str | None) -> int:
    rows = []
    for run_dir in run_dirs:
        rd = Path(run_dir)
        if not rd.is_dir():
            raise ConfigError(f"not a run directory: {run_dir}")
        csvs = sorted(p for p in rd.glob("*.csv"))
        if not csvs:
            raise ConfigError(f"no trace CSVs found in {run_dir}")
        prefix = rd.name
        for path in csvs:
            header, data = read_csv(path)
            if header == _LONG_HEADER:
                raise ConfigError(
                    f"{path} is already in long format; refusing to reshape")
            if len(header) < 2:
                raise ConfigError(f"{path}: not a trace CSV")
            for col_idx in range(1, len(header)):
                series = f"{prefix}.{path.stem}.{header[col_idx]}"
                for row in data:
                    rows.append((series, row[0], row[col_idx]))
    lines = [",".join(_LONG_HEADER)]
    lines.extend(",".join(r) for r in rows)
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_presets() -> int:
    cols = ("preset", "kind", "eta", "beta1", "beta2", "eps", "lambda", "tau")
    print("\t".join(cols))
    for name in preset_names():
        for kind in OptimizerKind:
            hp = preset(name, kind)
            tau = "" if hp.tau is None else fmt_float(hp.tau)
            print("\t".join([name, kind.value, fmt_float(hp.eta),
                             fmt_float(hp.beta1), fmt_float(hp.beta2),
                             fmt_float(hp.eps), fmt_float(hp.lam), tau]))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homeopt",
        description="Optimizer experiments: training runs, twin-trajectory "
                    "stability sweeps, and theoretical bound traces.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "stability", "bounds"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel replicates for sweeps")
    p = sub.add_parser("plotdata")
    p.add_argument("run_dirs", nargs="+", help="run directories to merge")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    sub.add_parser("presets")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            return cmd_presets()
        if args.command == "plotdata":
            return cmd_plotdata(args.run_dirs, args.out)
        overrides = {}
        if args.seed is not None:
            overrides["run.seed"] = args.seed
        cfg = load_config(args.config, overrides)
        handler = {"train": cmd_train, "stability": cmd_stability,
                   "bounds": cmd_bounds}[args.command]
        return handler(cfg, args.out, max(1, args.jobs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericBlowupError as exc:
        print(f"numeric blow-up: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HomeoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Theoretical recursions, inequality audits, and closed-form rate bounds.

Three coupled sequences (phi, psi, varphi) bound the momentum, second-moment
and parameter divergence between twin trajectories; their growth separates
the square-root-free regime (denominators carry inverse powers of the
second-moment floor, so varphi explodes geometrically) from the switching
regime (unit denominators, polynomial growth). The closed-form rate bounds
evaluate the stated right-hand sides for the average full-gradient norm.

All constants are supplied explicitly; nothing here runs an optimizer except
the Monte-Carlo momentum-error audit, which replays trajectories to compare
realized means against the claimed recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (PreconditionError, RecursionOverflowError,
                     ValidationError)
from .numkit import RngStream, as_vec, derive_seed, draw_index
from .optim import HyperParams, OptimizerKind, init_state, step
from .problems import Dataset, Problem, full_gradient, grad_stats, loss_grad

_FLOAT_MAX = np.finfo(np.float64).max


@dataclass(frozen=True)
class AnalysisConstants:
    """Measured or assumed constants feeding the recursions and rate bounds.

    ``rho`` is the realized floor of the bias-corrected second moment,
    ``tau`` the switch threshold, ``F0_minus_Fstar`` the loss gap from the
    start point, and ``d`` the parameter dimension.
    """

    G: float
    L: float
    sigma: float
    eta: float
    beta1: float
    beta2: float
    eps: float
    lam: float = 0.0
    rho: float | None = None
    tau: float | None = None
    N: int | None = None
    T: int | None = None
    c: float | None = None
    gamma: float = 0.75
    F0_minus_Fstar: float | None = None
    d: int = 1

    def __post_init__(self):
        for name in ("G", "L", "sigma", "eta", "eps"):
            val = getattr(self, name)
            if val < 0:
                raise ValidationError(f"{name} must be nonnegative, got {val}")
        if not 0 < self.beta1 < 1:
            raise ValidationError(f"beta1 must lie in (0,1), got {self.beta1}")
        if not 0 < self.beta2 < 1:
            raise ValidationError(f"beta2 must lie in (0,1), got {self.beta2}")
        if self.lam < 0:
            raise ValidationError(f"lam must be nonnegative, got {self.lam}")
        if self.d < 1:
            raise ValidationError(f"d must be >= 1, got {self.d}")

    def _need(self, name: str) -> float:
        val = getattr(self, name)
        if val is None:
            raise ValidationError(f"analysis constant {name!r} is required here")
        return val

    def momentum_rate(self) -> float:
        return self.c if self.c is not None else (1.0 - self.beta1) / self.eta

    # derived quantities, named after their roles
    def rho_hat(self) -> float:
        return self._need("rho") + self.eps

    def rho_breve(self) -> float:
        return (1.0 - self.beta1) * (self._need("rho")
                                     + (1.0 - self.beta2) * self.eps)

    def tau_hat(self) -> float:
        return (1.0 - self.beta1) * (self._need("tau")
                                     + (1.0 - self.beta2) * self.eps)

    def tau_breve(self) -> float:
        return min(1.0 - self.beta1, self.tau_hat())

    def g_hat(self) -> float:
        return (self.G ** 2 + self.eps) / (1.0 - self.beta2)

    def g_breve(self) -> float:
        return max(1.0, self.g_hat())

    def g_bar(self) -> float:
        return self.G / ((1.0 - self.beta1) * self.rho_hat())

    def g_tilde(self) -> float:
        return max(self.G / self.tau_hat(), self.G / (1.0 - self.beta1))

    def nu(self) -> float:
        return min(1.0 - self.beta1,
                   (self._need("tau") + self.eps) * (1.0 - self.beta1))

    def r_const(self) -> float:
        return max(1.0, self.G ** 2 + self.eps)

    def g_hat_ew(self) -> float:
        return max(self.G / (1.0 - self.beta1),
                   self.G / ((1.0 - self.beta1) * (self._need("tau") + self.eps)))

    def delta(self) -> float:
        gap = self._need("F0_minus_Fstar")
        if self.L == 0:
            raise ValidationError("delta needs L > 0")
        return gap + (self.sigma ** 2 + self.beta1 ** 2 * self.G ** 2) / self.L


@dataclass(frozen=True)
class RecursionState:
    t: int
    phi: float
    psi: float
    varphi: float


def trace_recursion(k: AnalysisConstants, regime: str, T: int):
    """Evolve the coupled divergence recursion for ``T`` steps.

    ``regime='srf'`` divides the two coupling terms by (rho+eps) and
    (rho+eps)^2; ``regime='home'`` uses unit denominators (and requires
    tau >= 1, the convention under which those denominators were dropped).
    Overflow raises with the step index and the finite prefix attached.
    """
    if regime not in ("srf", "home"):
        raise ValidationError(f"unknown regime {regime!r}")
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    eta, b1, b2 = k.eta, k.beta1, k.beta2
    G, L, sigma, lam = k.G, k.L, k.sigma, k.lam
    sqrt_d = math.sqrt(k.d)
    if lam >= 1.0 / eta:
        raise ValidationError("recursion requires lam < 1/eta")

    if regime == "srf":
        den1 = k.rho_hat()
        if not den1 > 0:
            raise ValidationError("srf regime needs rho + eps > 0")
        den2 = den1 * den1
    else:
        tau = k._need("tau")
        if tau < 1.0:
            raise ValidationError("home regime assumes tau >= 1")
        den1 = den2 = 1.0

    phi = 2.0 * (1.0 - b1) * sigma
    psi = 2.0 * (1.0 - b2) * G * G
    varphi = (2.0 * eta * sqrt_d * sigma / den1
              + 2.0 * eta * sqrt_d * G ** 3 / ((1.0 - b1) * den2))
    states = [RecursionState(t=1, phi=phi, psi=psi, varphi=varphi)]

    for t in range(1, T):
        t_next = t + 1
        phi_next = b1 * phi + 2.0 * (1.0 - b1) * sigma + (1.0 - b1) * L * varphi
        psi_next = (b2 * psi + 4.0 * (1.0 - b2) * G * sigma
                    + 2.0 * (1.0 - b2) * G * L * varphi)
        bc1 = 1.0 - b1 ** t_next
        bc2 = 1.0 - b2 ** t_next
        varphi_next = ((1.0 - eta * lam) * varphi
                       + eta * sqrt_d * phi_next / (bc1 * den1)
                       + eta * G * sqrt_d * psi_next / (bc1 * bc2 * den2))
        if not (math.isfinite(phi_next) and math.isfinite(psi_next)
                and math.isfinite(varphi_next)):
            raise RecursionOverflowError(
                f"{regime} recursion exceeded float range", step=t_next,
                partial=states)
        phi, psi, varphi = phi_next, psi_next, varphi_next
        states.append(RecursionState(t=t_next, phi=phi, psi=psi, varphi=varphi))
    return states


def check_lemma1(m, m_i, v, v_i, k: AnalysisConstants, t: int):
    """Evaluate both sides of the momentum-ratio inequality on raw moments.

    The floor rho_t is taken over BOTH twins' bias-corrected second moments
    (the safer reading). Returns (lhs, rhs, holds).
    """
    m, m_i, v, v_i = as_vec(m), as_vec(m_i), as_vec(v), as_vec(v_i)
    d = m.shape[0]
    if not (m_i.shape[0] == v.shape[0] == v_i.shape[0] == d):
        raise ValidationError("lemma 1 inputs must share one dimension")
    if t < 1:
        raise ValidationError(f"t must be >= 1, got {t}")
    G = k.G
    tol = 1e-9 * max(1.0, G)
    if np.linalg.norm(m) > G + tol or np.linalg.norm(m_i) > G + tol:
        raise ValidationError("momentum norm exceeds G; not an admissible state")
    if (v < 0).any() or (v_i < 0).any():
        raise ValidationError("second moments must be nonnegative")
    if v.max(initial=0.0) > G * G + tol or v_i.max(initial=0.0) > G * G + tol:
        raise ValidationError("second moment exceeds G^2; not admissible")

    bc1 = 1.0 - k.beta1 ** t
    bc2 = 1.0 - k.beta2 ** t
    m_hat, mi_hat = m / bc1, m_i / bc1
    v_hat, vi_hat = v / bc2, v_i / bc2
    rho_t = float(min(v_hat.min(), vi_hat.min()))
    if rho_t + k.eps <= 0:
        raise ValidationError("lemma 1 needs rho_t + eps > 0")

    lhs = float(np.linalg.norm(m_hat / (v_hat + k.eps)
                               - mi_hat / (vi_hat + k.eps)))
    sqrt_d = math.sqrt(d)
    rhs = (sqrt_d / ((rho_t + k.eps) * bc1) * float(np.linalg.norm(m - m_i))
           + G * sqrt_d / (bc1 * bc2 * (rho_t + k.eps) ** 2)
           * float(np.linalg.norm(v - v_i)))
    return lhs, rhs, lhs <= rhs + 1e-12 * rhs


@dataclass
class Lemma2Report:
    t: np.ndarray
    lhs_mean: np.ndarray
    rhs_mean: np.ndarray
    holds: np.ndarray
    slack: float
    constants: dict

    @property
    def all_hold(self) -> bool:
        return bool(self.holds.all())


def check_lemma2_mc(p: Problem, S: Dataset, kind: OptimizerKind,
                    hp: HyperParams, T: int, n_seeds: int,
                    seed: int = 0) -> Lemma2Report:
    """Monte-Carlo audit of the momentum-error recursion.

    Replays ``n_seeds`` trajectories and checks, per step, that the mean
    squared momentum error obeys the claimed contraction with measured
    smoothness/noise constants, up to a 3/sqrt(n_seeds) sampling slack.
    """
    if n_seeds < 30:
        raise ValidationError(
            f"the expectation claim needs n_seeds >= 30, got {n_seeds}")
    if T < 2:
        raise ValidationError(f"T must be >= 2, got {T}")
    c = hp.momentum_rate()
    if not 0 < 1.0 - c * hp.eta < 1:
        raise ValidationError("beta1 = 1 - c*eta must lie in (0,1)")

    D = np.empty((n_seeds, T + 1))      # D[s, t] = ||grad F(theta_{t-1}) - m_t||^2
    Q = np.empty((n_seeds, T + 1))      # Q[s, t] = ||theta_t - theta_{t-1}||^2
    probes = []
    for s in range(n_seeds):
        stream = RngStream(derive_seed(seed, s), 1)
        theta = np.zeros(p.dim)
        state = init_state(p.dim)
        for t in range(1, T + 1):
            grad_full_prev = full_gradient(p, theta, S)
            j = draw_index(stream, t, S.n)
            _, g = loss_grad(p, theta, S.sample(j))
            theta_next, state, _ = step(kind, hp, state, theta, g)
            D[s, t] = float(np.sum((grad_full_prev - state.m) ** 2))
            Q[s, t] = float(np.sum((theta_next - theta) ** 2))
            if s < 8 and t % max(1, T // 4) == 0:
                probes.append(theta_next.copy())
            theta = theta_next

    probes.append(np.zeros(p.dim))
    stats = grad_stats(p, S, probes)
    slack = 3.0 / math.sqrt(n_seeds)
    ts = np.arange(1, T)
    lhs_mean = D[:, 2:].mean(axis=0)
    rhs_mean = ((1.0 - c * hp.eta) * D[:, 1:-1].mean(axis=0)
                + (2.0 / (c * hp.eta)) * stats.L_hat ** 2 * Q[:, 1:-1].mean(axis=0)
                + (c * hp.eta * stats.sigma_hat) ** 2)
    holds = lhs_mean <= rhs_mean * (1.0 + slack)
    return Lemma2Report(t=ts, lhs_mean=lhs_mean, rhs_mean=rhs_mean,
                        holds=holds, slack=slack,
                        constants={"G_hat": stats.G_hat, "L_hat": stats.L_hat,
                                   "sigma_hat": stats.sigma_hat, "c": c})


_BOUND_KINDS = ("thm3_srf", "thm4_home", "appF_ew")


def bound_preconditions(which: str, k: AnalysisConstants) -> list[str]:
    """Stated step-size/momentum conditions the bound assumes; [] when met."""
    if which not in _BOUND_KINDS:
        raise ValidationError(f"unknown bound {which!r}; one of {_BOUND_KINDS}")
    out = []
    c = k.momentum_rate()
    beta1_from_c = 1.0 - c * k.eta
    if not 0.0 < beta1_from_c < 1.0:
        out.append(f"beta1 = 1 - c*eta = {beta1_from_c:.6g} outside (0,1)")
    if k.lam >= 1.0 / k.eta:
        out.append(f"lam = {k.lam:.6g} not below 1/eta = {1.0 / k.eta:.6g}")
    T = k._need("T")
    gam = k.gamma

    def cap(denom: float) -> float:
        return math.inf if denom == 0.0 else 1.0 / denom

    if which == "thm3_srf":
        floor, cmin = k.rho_breve(), 16.0
        lam_cap = cap(k.eta * T ** gam * k.g_bar() * k.g_hat())
        names = ("rho_breve", "rho_breve")
    elif which == "thm4_home":
        floor, cmin = k.tau_breve(), 32.0
        lam_cap = cap(k.eta * T ** gam * k.g_tilde() * k.g_hat())
        names = ("tau_hat", "tau_breve")
    else:
        floor, cmin = k.nu(), 16.0
        lam_cap = cap(k.eta * T ** gam * math.sqrt(k.d)
                      * k.r_const() * k.g_hat_ew())
        names = ("nu", "nu")
    eta_cap_floor = k.tau_hat() if which == "thm4_home" else floor
    if k.eta > eta_cap_floor / (4.0 * k.L):
        out.append(f"eta = {k.eta:.6g} exceeds {names[0]}/(4L) = "
                   f"{eta_cap_floor / (4.0 * k.L):.6g}")
    if c < cmin * k.L / floor:
        out.append(f"c = {c:.6g} below {cmin:.0f}*L/{names[1]} = "
                   f"{cmin * k.L / floor:.6g}")
    if k.lam > lam_cap:
        out.append(f"lam = {k.lam:.6g} exceeds its T^gamma cap {lam_cap:.6g}")
    return out


def theorem_bound_rhs(which: str, k: AnalysisConstants,
                      enforce: bool = True) -> float:
    """Closed-form right-hand side for the average full-gradient norm.

    The polynomial tail terms decay like T^(gamma-1); with eta = 1/sqrt(T)
    and gamma = 3/4 every term is proportional to T^(-1/4).
    """
    violations = bound_preconditions(which, k)
    if violations and enforce:
        raise PreconditionError(violations)
    T = float(k._need("T"))
    eta, c, sigma, L = k.eta, k.momentum_rate(), k.sigma, k.L
    delta = k.delta()
    t_poly = T ** (1.0 - k.gamma)
    if which == "thm3_srf":
        gh, fl = k.g_hat(), k.rho_breve()
        return (4.0 * math.sqrt(2.0 * delta) * gh / math.sqrt(T * eta * fl)
                + 4.0 * math.sqrt(2.0) * gh / (t_poly * fl)
                + 4.0 * c * sigma * math.sqrt(eta) * gh / math.sqrt(L * fl)
                + 1.0 / t_poly)
    if which == "thm4_home":
        gb, fl = k.g_breve(), k.tau_breve()
        return (8.0 * math.sqrt(delta) * gb / math.sqrt(T * eta * fl)
                + 8.0 * gb / (fl * t_poly)
                + 4.0 * math.sqrt(2.0 * eta) * c * sigma * gb / math.sqrt(L * fl)
                + gb / (k.g_hat() * t_poly))
    r, fl = k.r_const(), k.nu()
    return (r * (4.0 * math.sqrt(2.0 * delta) / math.sqrt(T * eta * fl)
                 + 4.0 * math.sqrt(2.0) / (t_poly * fl)
                 + 4.0 * c * sigma * math.sqrt(eta) / math.sqrt(L * fl))
            + 1.0 / t_poly)


@dataclass
class TraceBoundReport:
    """Per-step verdicts of an empirical trace against a prediction."""

    holds: np.ndarray
    max_ratio: float
    first_violation: int | None
    compared_steps: int
    vacuous_from: int | None

    @property
    def all_hold(self) -> bool:
        return bool(self.holds.all())


def compare_trace_to_bound(empirical, predicted, N: int = 1) -> TraceBoundReport:
    """Check mean empirical values against predicted/N, step by step.

    ``predicted`` may be shorter than ``empirical`` (an overflowed
    recursion); the comparison then covers only the finite prefix and
    ``vacuous_from`` marks where the bound stops saying anything.
    """
    emp = np.asarray(empirical, dtype=np.float64)
    pred = np.asarray([getattr(s, "varphi", s) for s in predicted],
                      dtype=np.float64)
    if emp.size == 0 or pred.size == 0:
        raise ValidationError("nothing to compare")
    if N < 1:
        raise ValidationError(f"N must be >= 1, got {N}")
    if pred.size > emp.size:
        raise ValidationError(
            f"misaligned horizons: prediction has {pred.size} steps, "
            f"trace has {emp.size}")
    vacuous_from = pred.size + 1 if pred.size < emp.size else None
    m = pred.size
    bound = pred / N
    holds = emp[:m] <= bound
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bound > 0, emp[:m] / bound,
                          np.where(emp[:m] > 0, np.inf, 0.0))
    viol = np.flatnonzero(~holds)
    return TraceBoundReport(holds=holds, max_ratio=float(ratios.max()),
                            first_violation=int(viol[0]) + 1 if viol.size else None,
                            compared_steps=m, vacuous_from=vacuous_from)

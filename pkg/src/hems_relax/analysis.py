"""Certificates that a solved schedule never charges and discharges at once.

The battery rows of the stationarity conditions are combined so the SoC
multipliers cancel; what remains at step ``k`` is

    dt*v_e*(1 - eta) + v_r(ch) + eta*v_r(dch)
        + (lam_ch_ub - lam_ch_lb) + eta*(lam_dch_ub - lam_dch_lb) = 0

with ``eta = eta_ch*eta_dch``, ``v_e`` a subgradient of the bill in price
units and ``v_r`` the derivatives of the regularization cost. When the
efficiency product is below one and both controls are positive, the lower
bound multipliers vanish and every remaining term is nonnegative with the
first strictly positive, which is impossible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import nnls

from .model import BatteryParams, ConditionReport, HouseholdScenario, theorem_condition
from .program import QuadraticProgram, ScheduleSolution, build_qp, primal_from_schedule
from .qp import QPResult, ResidualReport, Residuals, Status, kkt_residuals

G_ZERO = 1e-9
STATIONARITY_TOL = 1e-6


class CertificateRefused(ValueError):
    pass


def default_eps_c(battery: BatteryParams) -> float:
    return max(1e-6 * max(battery.u_ch_max, battery.u_dch_max, 1.0), 1e-9)


def check_complementarity(sol: ScheduleSolution, eps_c: float) -> tuple[np.ndarray, bool]:
    """Per-step ``min(u_ch, u_dch)`` and whether all of them are ``<= eps_c``."""
    if sol.x is None:
        raise ValueError("no battery")
    margins = np.minimum(sol.u_ch, sol.u_dch)
    return margins, bool(np.max(margins, initial=0.0) <= eps_c)


def bill_subgradient_interval(g: float, p: float, s: float, eps: float = 0.0) -> tuple[float, float]:
    """Subgradients of ``max(p*g, s*g)`` with respect to ``g``, as ``(lo, hi)``.

    With ``eps > 0`` the eps-subdifferential is returned, which widens the
    singleton branches towards the other price by ``eps/|g|``.
    """
    if g > 0:
        return (max(s, p - eps / g) if eps > 0 else p), p
    if g < 0:
        return s, (min(p, s + eps / -g) if eps > 0 else s)
    return s, p


@dataclass(frozen=True, eq=False)
class BatteryStationarity:
    residual: np.ndarray
    v_e: np.ndarray
    delta: np.ndarray
    kink: np.ndarray
    flags: tuple[tuple[int, str], ...] = ()
    proof_lhs: dict = field(default_factory=dict)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual), initial=0.0))


def _battery_duals(qp: QuadraticProgram, lam: np.ndarray) -> dict[str, np.ndarray]:
    return {tag: lam[qp.rows(tag)] for tag in ("ch_lb", "ch_ub", "dch_lb", "dch_ub")}


def battery_stationarity_residual(
    s: HouseholdScenario,
    sol: ScheduleSolution,
    duals: QPResult,
    qp: Optional[QuadraticProgram] = None,
    eps_sub: float = 1e-8,
    eps_c: Optional[float] = None,
    tol: float = STATIONARITY_TOL,
) -> BatteryStationarity:
    """Evaluate the SoC-free combination of the two battery stationarity rows.

    ``v_e`` is picked inside the (eps-)subdifferential of the bill so as to
    minimize the residual; ``delta`` is its position between the selling and
    the purchase price. Steps where no admissible ``v_e`` brings the residual
    under ``tol``, where a battery multiplier is negative, or where both
    controls are active are flagged with a reason.
    """
    if s.battery is None:
        raise ValueError("no battery")
    if duals is None or duals.lam is None or not np.all(np.isfinite(duals.lam)):
        raise ValueError("missing duals")
    qp = qp or build_qp(s, check=False)
    eps_c = default_eps_c(s.battery) if eps_c is None else eps_c
    lam = _battery_duals(qp, np.asarray(duals.lam))
    b, reg, dt = s.battery, s.reg, s.dt
    eta = b.eta_ch * b.eta_dch
    p, sp = np.asarray(s.tariff.p), np.asarray(s.tariff.s)

    vr_ch = dt * (2 * reg.alpha_ch * sol.u_ch + reg.beta_ch)
    vr_dch = dt * (2 * reg.alpha_dch * sol.u_dch + reg.beta_dch)
    rest = (vr_ch + eta * vr_dch + lam["ch_ub"] - lam["ch_lb"]
            + eta * (lam["dch_ub"] - lam["dch_lb"]))

    epi_p = np.asarray(duals.lam)[qp.rows("epi_p")]
    epi_s = np.asarray(duals.lam)[qp.rows("epi_s")]

    K = s.K
    residual = np.zeros(K)
    v_e = np.zeros(K)
    delta = np.full(K, np.nan)
    kink = np.abs(sol.g) <= G_ZERO
    flags: list[tuple[int, str]] = []
    proof_lhs: dict[int, float] = {}
    slope = dt * (1.0 - eta)
    for k in range(K):
        g = 0.0 if kink[k] else float(sol.g[k])
        lo, hi = bill_subgradient_interval(g, p[k], sp[k], eps_sub)
        if slope > 0:
            v = float(np.clip(-rest[k] / slope, lo, hi))
        else:
            w = epi_p[k] + epi_s[k]
            v_epi = (epi_p[k] * p[k] + epi_s[k] * sp[k]) / w if w > 0 else 0.5 * (lo + hi)
            v = float(np.clip(v_epi, lo, hi))
        v_e[k] = v
        residual[k] = slope * v + rest[k]
        if kink[k]:
            if p[k] > sp[k]:
                delta[k] = (v - sp[k]) / (p[k] - sp[k])
            else:
                w = epi_p[k] + epi_s[k]
                delta[k] = epi_p[k] / w if w > 0 else 0.5
        if abs(residual[k]) > tol:
            flags.append((k, f"stationarity residual {residual[k]:.3g} with v_e in [{lo:g}, {hi:g}]"))
        negative = [tag for tag, val in lam.items() if val[k] < -1e-10]
        if negative:
            flags.append((k, "negative multiplier on " + ", ".join(negative)
                          + ": contradicts dual feasibility"))
        if sol.u_ch[k] > eps_c and sol.u_dch[k] > eps_c:
            lhs = slope * v + vr_ch[k] + eta * vr_dch[k] + lam["ch_ub"][k] + eta * lam["dch_ub"][k]
            proof_lhs[k] = float(lhs)
            if eta < 1.0:
                reason = (f"simultaneous charge/discharge with left side {lhs:.3g} > 0: "
                          "not a KKT point within solver tolerance")
            else:
                reason = (f"simultaneous charge/discharge with eta_ch*eta_dch = {eta:g} >= 1: "
                          "efficiency condition violated")
            flags.append((k, reason))
    return BatteryStationarity(residual, v_e, delta, kink, tuple(flags), proof_lhs)


@dataclass(frozen=True, eq=False)
class CertificateReport:
    kkt: ResidualReport
    passed: bool
    reasons: tuple[str, ...]
    condition: Optional[ConditionReport] = None
    margins: Optional[np.ndarray] = None
    non_simultaneous: Optional[bool] = None
    eps_c: Optional[float] = None
    stationarity: Optional[BatteryStationarity] = None

    @property
    def applicable(self) -> bool:
        """Whether the complementarity section applies (battery present)."""
        return self.margins is not None

    @property
    def max_margin(self) -> float:
        if self.margins is None:
            return 0.0
        return float(np.max(self.margins, initial=0.0))

    def summary(self) -> dict:
        out = {
            "passed": self.passed,
            "stationarity": self.kkt.stationarity,
            "complementary_slackness": self.kkt.complementary_slackness,
            "primal_feasibility": self.kkt.primal_feasibility,
            "dual_feasibility": self.kkt.dual_feasibility,
            "reasons": list(self.reasons),
        }
        if self.applicable:
            out.update(
                max_margin=self.max_margin,
                non_simultaneous=self.non_simultaneous,
                eps_c=self.eps_c,
                theorem_holds=self.condition.holds,
                theorem_margin=self.condition.margin,
                battery_stationarity=self.stationarity.max_abs,
            )
        return out


def certify(
    s: HouseholdScenario,
    sol: ScheduleSolution,
    res: QPResult,
    qp: Optional[QuadraticProgram] = None,
    eps_c: Optional[float] = None,
) -> CertificateReport:
    if res.status is not Status.OPTIMAL:
        raise CertificateRefused(f"certificate refused: solver status {res.status}")
    qp = qp or build_qp(s, check=False)
    kkt = kkt_residuals(qp, res)
    reasons = list(kkt.violations())
    if s.battery is None:
        return CertificateReport(kkt, not reasons, tuple(reasons))

    eps_c = default_eps_c(s.battery) if eps_c is None else eps_c
    cond = theorem_condition(s)
    margins, ok = check_complementarity(sol, eps_c)
    eps_sub = max(10.0 * kkt.complementary_slackness, 1e-12) / s.dt
    stat = battery_stationarity_residual(s, sol, res, qp=qp, eps_sub=eps_sub, eps_c=eps_c)
    if cond.holds and not ok:
        reasons.append(f"simultaneous charge/discharge {np.max(margins):.3g} > eps_c {eps_c:g}")
    if cond.holds:
        reasons.extend(f"step {k}: {why}" for k, why in stat.flags)
    else:
        reasons.extend(f"step {k}: {why}" for k, why in stat.flags
                       if "simultaneous" not in why)
    return CertificateReport(kkt, not reasons, tuple(reasons), cond, margins, ok, eps_c, stat)


def recover_duals(qp: QuadraticProgram, primal, active_tol: float = 1e-6,
                  stationarity_tol: float = STATIONARITY_TOL) -> QPResult:
    """Multipliers for a given primal point, by nonnegative least squares.

    Only rows with slack ``<= active_tol`` may carry a multiplier. The result
    is marked optimal when the point is feasible and the best multipliers meet
    ``stationarity_tol``; otherwise the status is ``NumericalFailure``.
    """
    x = np.asarray(primal, dtype=float)
    slack = qp.b_ineq - qp.A_ineq @ x
    active = np.flatnonzero(slack <= active_tol)
    grad = qp.Q @ x + qp.c
    M = np.hstack([qp.A_ineq[active].T, qp.A_eq.T, -qp.A_eq.T])
    coef, _ = nnls(M, -grad, maxiter=50 * max(M.shape[1], 1))
    lam = np.zeros(qp.m)
    lam[active] = coef[: active.size]
    nu = coef[active.size: active.size + qp.p] - coef[active.size + qp.p:]
    r_d = float(np.max(np.abs(grad + qp.A_ineq.T @ lam + qp.A_eq.T @ nu), initial=0.0))
    r_p = max(float(np.max(-slack, initial=0.0)),
              float(np.max(np.abs(qp.A_eq @ x - qp.b_eq), initial=0.0)))
    compl = float(np.max(np.abs(lam * slack), initial=0.0))
    ok = r_d <= stationarity_tol and r_p <= ResidualReport.TOL_PRIMAL
    status = Status.OPTIMAL if ok else Status.NUMERICAL_FAILURE
    return QPResult(status, x, lam, nu, 0, Residuals(r_p, r_d, compl, compl), qp.objective(x))


def certify_schedule(s: HouseholdScenario, sol: ScheduleSolution,
                     eps_c: Optional[float] = None) -> CertificateReport:
    """Certify a schedule given only its controls (e.g. read back from CSV)."""
    qp = build_qp(s)
    res = recover_duals(qp, primal_from_schedule(qp, s, sol))
    if res.status is not Status.OPTIMAL:
        raise CertificateRefused(
            f"no multipliers found: stationarity {res.residuals.r_dual:.3g}, "
            f"primal infeasibility {res.residuals.r_primal:.3g}")
    return certify(s, sol, res, qp=qp, eps_c=eps_c)

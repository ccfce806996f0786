"""Household domain types and their validation.

Units are fixed throughout the package: kW for power, kWh for energy, hours
for time, degrees Celsius for temperature and an abstract currency per kWh
for prices. Every type is a frozen dataclass; constructing one never raises,
so that :func:`validate_scenario` can report every broken assumption at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def _series(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(values, dtype=float).ravel())


@dataclass(frozen=True)
class Horizon:
    K: int
    dt: float = 1.0


@dataclass(frozen=True)
class Tariff:
    """Purchase price ``p`` and selling price ``s`` per step."""

    p: tuple[float, ...]
    s: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "p", _series(self.p))
        object.__setattr__(self, "s", _series(self.s))


@dataclass(frozen=True)
class BatteryParams:
    u_ch_max: float
    u_dch_max: float
    eta_ch: float = 0.9
    eta_dch: float = 0.9
    u_sd: float = 0.0
    E: float = 10.0
    x0: float = 0.5
    x_min: float = 0.1
    x_max: float = 0.9

    @property
    def eta_product(self) -> float:
        return self.eta_ch * self.eta_dch


@dataclass(frozen=True)
class TclParams:
    """First-order cooling model of a thermostatically controlled load.

    ``theta_ex`` is the per-step external temperature profile.
    """

    C: float
    R: float
    cop: float
    theta_set: float
    dead_band: float
    theta0: float
    u_tcl_max: float
    theta_ex: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "theta_ex", _series(self.theta_ex))

    @property
    def a(self) -> float:
        return 1.0 / (self.R * self.C)

    @property
    def b(self) -> float:
        return self.cop / self.C

    def a_tilde(self, dt: float) -> float:
        return 1.0 - self.a * dt

    @property
    def theta_min(self) -> float:
        return self.theta_set - self.dead_band

    @property
    def theta_max(self) -> float:
        return self.theta_set + self.dead_band


@dataclass(frozen=True)
class NonDynLoadParams:
    """Deferrable load: per-step box plus a fixed horizon total (sum of powers)."""

    u_min: float
    u_max: float
    total: float


@dataclass(frozen=True)
class RegularizationParams:
    alpha_ch: float = 0.0
    beta_ch: float = 0.0
    alpha_dch: float = 0.0
    beta_dch: float = 0.0
    alpha_nd: float = 0.0
    beta_nd: float = 0.0
    alpha_tcl: float = 0.0
    beta_tcl: float = 0.0

    def pair(self, kind: str) -> tuple[float, float]:
        return getattr(self, f"alpha_{kind}"), getattr(self, f"beta_{kind}")


@dataclass(frozen=True)
class HouseholdScenario:
    horizon: Horizon
    tariff: Tariff
    d: tuple[float, ...]
    r: tuple[float, ...]
    battery: Optional[BatteryParams] = None
    tcl: Optional[TclParams] = None
    nd_load: Optional[NonDynLoadParams] = None
    reg: RegularizationParams = field(default_factory=RegularizationParams)

    def __post_init__(self):
        object.__setattr__(self, "d", _series(self.d))
        object.__setattr__(self, "r", _series(self.r))

    @property
    def K(self) -> int:
        return self.horizon.K

    @property
    def dt(self) -> float:
        return self.horizon.dt

    @property
    def components(self) -> tuple[str, ...]:
        """Controllable components present, in decision-vector order."""
        kinds = []
        if self.battery is not None:
            kinds += ["ch", "dch"]
        if self.nd_load is not None:
            kinds.append("nd")
        if self.tcl is not None:
            kinds.append("tcl")
        return tuple(kinds)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

INVALID = "invalid"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class Violation:
    """One broken assumption.

    ``kind`` is ``"invalid"`` when the model itself is ill-defined and
    ``"infeasible"`` when the model is well-defined but has an empty
    feasible set (the solver is expected to report it too).
    """

    field: str
    message: str
    kind: str = INVALID

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def only_infeasible(self) -> bool:
        return bool(self.violations) and all(v.kind == INFEASIBLE for v in self.violations)

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]

    def __bool__(self) -> bool:
        return self.passed


class ScenarioError(ValueError):
    """Raised when an operation receives a scenario that fails validation."""

    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__("; ".join(report.messages()) or "invalid scenario")


def _finite(*values) -> bool:
    try:
        return all(math.isfinite(float(v)) for v in values)
    except (TypeError, ValueError):
        return False


def _finite_series(values: Sequence[float]) -> bool:
    return all(math.isfinite(v) for v in values)


def validate_scenario(s: HouseholdScenario) -> ValidationReport:
    """Check every standing modelling assumption; never raises on finite input."""
    out: list[Violation] = []

    def bad(name, msg, kind=INVALID):
        out.append(Violation(name, msg, kind))

    K, dt = s.horizon.K, s.horizon.dt
    if not isinstance(K, (int, np.integer)) or K < 1:
        bad("horizon", "K must be an integer >= 1")
        K = None
    if not _finite(dt) or dt <= 0:
        bad("horizon", "dt must be > 0")

    def check_len(name, seq):
        if K is not None and len(seq) != K:
            bad(name, f"length {len(seq)} != K={K}")
        if not _finite_series(seq):
            bad(name, "values must be finite")

    check_len("tariff.p", s.tariff.p)
    check_len("tariff.s", s.tariff.s)
    check_len("d", s.d)
    check_len("r", s.r)
    if any(v <= 0 for v in s.tariff.s):
        bad("tariff", "s must be strictly positive")
    if any(pk < sk for pk, sk in zip(s.tariff.p, s.tariff.s)):
        bad("tariff", "p must be >= s at every step")
    if any(v < 0 for v in s.d):
        bad("d", "critical load must be >= 0")
    if any(v < 0 for v in s.r):
        bad("r", "renewable generation must be >= 0")

    b = s.battery
    if b is not None:
        vals = (b.u_ch_max, b.u_dch_max, b.eta_ch, b.eta_dch, b.u_sd, b.E, b.x0, b.x_min, b.x_max)
        if not _finite(*vals):
            bad("battery", "parameters must be finite")
        else:
            if not 0 < b.eta_ch <= 1:
                bad("battery", "eta_ch must lie in (0, 1]")
            if not 0 < b.eta_dch <= 1:
                bad("battery", "eta_dch must lie in (0, 1]")
            if b.u_ch_max < 0 or b.u_dch_max < 0:
                bad("battery", "power ratings must be >= 0")
            if b.u_sd < 0:
                bad("battery", "self-discharge must be >= 0")
            if b.E <= 0:
                bad("battery", "capacity E must be > 0")
            if not 0 <= b.x_min < b.x_max <= 1:
                bad("battery", "need 0 <= x_min < x_max <= 1")
            if not b.x_min <= b.x0 <= b.x_max:
                bad("battery", "x0 outside [x_min, x_max]")

    t = s.tcl
    if t is not None:
        vals = (t.C, t.R, t.cop, t.theta_set, t.dead_band, t.theta0, t.u_tcl_max)
        check_len("tcl.theta_ex", t.theta_ex)
        if not _finite(*vals):
            bad("tcl", "parameters must be finite")
        else:
            if t.C <= 0 or t.R <= 0 or t.cop <= 0:
                bad("tcl", "C, R and cop must be > 0")
            elif _finite(dt) and dt > 0 and not 0 < t.a_tilde(dt) < 1:
                bad("tcl", "a_tilde = 1 - dt/(R*C) must lie in (0, 1); dt too large")
            if t.dead_band <= 0:
                bad("tcl", "dead_band must be > 0")
            if t.u_tcl_max < 0:
                bad("tcl", "u_tcl_max must be >= 0")
            if not t.theta_min <= t.theta0 <= t.theta_max:
                bad("tcl", "theta0 outside the comfort band")

    nd = s.nd_load
    if nd is not None:
        if not _finite(nd.u_min, nd.u_max, nd.total):
            bad("nd_load", "parameters must be finite")
        else:
            if not 0 <= nd.u_min <= nd.u_max:
                bad("nd_load", "need 0 <= u_min <= u_max")
            elif K is not None and not K * nd.u_min <= nd.total <= K * nd.u_max:
                bad("nd_load", "total outside [K·u_min, K·u_max]", INFEASIBLE)

    reg_vals = [getattr(s.reg, f) for f in s.reg.__dataclass_fields__]
    if not _finite(*reg_vals) or any(v < 0 for v in reg_vals):
        bad("reg", "every coefficient must be finite and >= 0")

    return ValidationReport(tuple(out))


# --------------------------------------------------------------------------
# theorem condition and one-step dynamics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    """Efficiency condition for non-simultaneous charge/discharge.

    ``beta_witness`` is ``beta_ch + eta_ch*eta_dch*beta_dch``; a strictly
    positive value is an alternative (empirical) reason for exclusivity and
    carries no guarantee on its own.
    """

    holds: bool
    margin: float
    eta_product: float
    beta_witness: float


def theorem_condition(s: HouseholdScenario) -> ConditionReport:
    if s.battery is None:
        raise ValueError("no battery")
    prod = s.battery.eta_ch * s.battery.eta_dch
    return ConditionReport(
        holds=prod < 1.0,
        margin=1.0 - prod,
        eta_product=prod,
        beta_witness=s.reg.beta_ch + prod * s.reg.beta_dch,
    )


def step_soc(x: float, u_ch: float, u_dch: float, b: BatteryParams, dt: float) -> float:
    return x + dt * (b.eta_ch * u_ch - u_dch / b.eta_dch - b.u_sd) / b.E


def step_temperature(theta: float, u_tcl: float, theta_ex: float, t: TclParams, dt: float) -> float:
    return t.a_tilde(dt) * theta + dt * (t.a * theta_ex - t.b * u_tcl)


def roll_soc(b: BatteryParams, u_ch, u_dch, dt: float) -> np.ndarray:
    """SoC trajectory of length K+1 starting from ``b.x0``."""
    x = [b.x0]
    for uc, ud in zip(u_ch, u_dch):
        x.append(step_soc(x[-1], float(uc), float(ud), b, dt))
    return np.array(x)


def roll_temperature(t: TclParams, u_tcl, dt: float) -> np.ndarray:
    theta = [t.theta0]
    for u, ex in zip(u_tcl, t.theta_ex):
        theta.append(step_temperature(theta[-1], float(u), ex, t, dt))
    return np.array(theta)

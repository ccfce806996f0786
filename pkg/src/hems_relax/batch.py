"""Solving, certifying and reporting many houses or parameter points."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import CertificateReport, certify, check_complementarity, default_eps_c
from .model import (
    BatteryParams,
    HouseholdScenario,
    RegularizationParams,
    ScenarioError,
    theorem_condition,
)
from .config import ScenarioConfig
from .profiles import ProfileTable, fmt
from .program import ScheduleSolution, build_qp, extract_solution, schedule_from_controls
from .qp import QPResult, SolverSettings, Status, solve

log = logging.getLogger(__name__)

SCHEDULE_COLUMNS = ("k", "u_ch_kw", "u_dch_kw", "u_nd_kw", "u_tcl_kw", "g_kw", "soc", "theta_c")


# --------------------------------------------------------------------------
# schedules on disk
# --------------------------------------------------------------------------


def write_schedule(sol: ScheduleSolution, path) -> Path:
    """K+1 rows; row ``k`` holds the controls applied at ``k`` and the states at ``k``.

    The last row has empty control cells. Absent trajectories are left blank.
    """
    path = Path(path)
    K = sol.K
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCHEDULE_COLUMNS)
        for k in range(K + 1):
            controls = ([fmt(v[k]) for v in (sol.u_ch, sol.u_dch, sol.u_nd, sol.u_tcl, sol.g)]
                        if k < K else [""] * 5)
            soc = fmt(sol.x[k]) if sol.x is not None else ""
            theta = fmt(sol.theta[k]) if sol.theta is not None else ""
            w.writerow([k, *controls, soc, theta])
    return path


def read_schedule_controls(path) -> dict[str, np.ndarray]:
    """Control series and stored trajectories from a schedule CSV."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = [c for c in SCHEDULE_COLUMNS if rows and c not in rows[0]]
    if not rows or missing:
        raise ValueError(f"{path}: not a schedule file (missing {', '.join(missing) or 'rows'})")
    out: dict[str, np.ndarray] = {}
    for col in SCHEDULE_COLUMNS[1:6]:
        out[col] = np.array([float(r[col]) for r in rows[:-1]])
    for col in ("soc", "theta_c"):
        cells = [r[col] for r in rows]
        out[col] = np.array([float(c) for c in cells]) if all(cells) else None
    return out


def read_schedule(path, s: HouseholdScenario) -> ScheduleSolution:
    data = read_schedule_controls(path)
    if data["u_ch_kw"].size != s.K:
        raise ValueError(f"{path}: {data['u_ch_kw'].size} steps but scenario has K={s.K}")
    return schedule_from_controls(s, data["u_ch_kw"], data["u_dch_kw"], data["u_nd_kw"],
                                  data["u_tcl_kw"])


# --------------------------------------------------------------------------
# one house
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Outcome:
    status: str
    result: Optional[QPResult] = None
    solution: Optional[ScheduleSolution] = None
    certificate: Optional[CertificateReport] = None
    message: str = ""


def solve_scenario(s: HouseholdScenario, settings: Optional[SolverSettings] = None,
                   eps_c: Optional[float] = None) -> Outcome:
    """Build, solve and certify; never raises on bad input."""
    try:
        qp = build_qp(s, check=False)
    except ScenarioError as exc:
        return Outcome("Invalid", message=str(exc))
    res = solve(qp, settings)
    if res.status is not Status.OPTIMAL:
        return Outcome(str(res.status), res, message=str(res.certificate or ""))
    sol = extract_solution(qp, res.primal, s)
    cert = certify(s, sol, res, qp=qp, eps_c=eps_c)
    return Outcome(str(res.status), res, sol, cert)


# --------------------------------------------------------------------------
# batches
# --------------------------------------------------------------------------

RUN_COLUMNS = ("house_id", "status", "objective", "bill", "max_margin", "non_simultaneous",
               "theorem_holds", "certified", "iterations")


@dataclass(frozen=True)
class RunRow:
    house_id: str
    status: str
    objective: float
    bill: float
    max_margin: float
    simultaneous_steps: int
    non_simultaneous: Optional[bool]
    theorem_holds: Optional[bool]
    certified: bool
    iterations: int
    wall_time_ms: float
    message: str = ""

    @property
    def failed_under_theorem(self) -> bool:
        return self.status == "Optimal" and bool(self.theorem_holds) and not self.certified


@dataclass(frozen=True)
class RunReport:
    rows: tuple[RunRow, ...]
    currency: str = "currency"

    @property
    def max_margin(self) -> float:
        return max((r.max_margin for r in self.rows if np.isfinite(r.max_margin)), default=0.0)

    @property
    def certified(self) -> int:
        return sum(r.certified for r in self.rows)

    @property
    def simultaneous_steps(self) -> int:
        return sum(r.simultaneous_steps for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 2 if any(r.failed_under_theorem for r in self.rows) else 0

    def write_csv(self, path, timings: bool = False) -> Path:
        """Byte-deterministic unless ``timings`` adds the wall-clock column."""
        path = Path(path)
        cols = RUN_COLUMNS + (("wall_time_ms",) if timings else ())
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols + ("currency",))
            for r in self.rows:
                cells = [r.house_id, r.status, fmt(r.objective), fmt(r.bill), fmt(r.max_margin),
                         _flag(r.non_simultaneous), _flag(r.theorem_holds), _flag(r.certified),
                         r.iterations]
                if timings:
                    cells.append("%.3f" % r.wall_time_ms)
                w.writerow(cells + [self.currency])
        return path


def _flag(value: Optional[bool]) -> str:
    return "" if value is None else str(bool(value)).lower()


def _row(house_id: str, s: HouseholdScenario, settings, eps_c) -> tuple[RunRow, Outcome]:
    start = time.perf_counter()
    out = solve_scenario(s, settings, eps_c)
    ms = 1e3 * (time.perf_counter() - start)
    nan = float("nan")
    if out.certificate is None:
        holds = theorem_condition(s).holds if s.battery is not None else None
        iters = out.result.iterations if out.result is not None else 0
        return RunRow(house_id, out.status, nan, nan, nan, 0, None, holds, False, iters, ms,
                      out.message), out
    cert, sol = out.certificate, out.solution
    steps = 0
    if cert.applicable:
        steps = int(np.sum(cert.margins > cert.eps_c))
    return RunRow(
        house_id, out.status, sol.objective, sol.bill, cert.max_margin, steps,
        cert.non_simultaneous, cert.condition.holds if cert.condition else None,
        cert.passed, out.result.iterations, ms, "; ".join(cert.reasons),
    ), out


def run_batch(
    profiles: Sequence[ProfileTable],
    battery: Optional[BatteryParams],
    reg: RegularizationParams,
    out_path=None,
    *,
    config: Optional[ScenarioConfig] = None,
    overrides: Optional[dict] = None,
    eps_c: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
    jobs: int = 1,
    timings: bool = False,
) -> RunReport:
    """Solve and certify every house.

    ``config`` supplies ``dt`` and the optional TCL/deferrable-load parameters
    (its battery and reg are replaced by the explicit arguments);
    ``overrides`` maps a house id to scenario field replacements. When
    ``out_path`` is given the report CSV is written there and one schedule CSV
    per solved house goes to ``<out_path stem>_schedules/``.
    """
    cfg = replace(config or ScenarioConfig(), battery=battery, reg=reg)
    overrides = overrides or {}
    tables = sorted(profiles, key=lambda t: t.house_id)

    def work(t: ProfileTable):
        s = cfg.scenario(t, **overrides.get(t.house_id, {}))
        return _row(t.house_id, s, settings, eps_c)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, tables))
    else:
        results = [work(t) for t in tables]
    report = RunReport(tuple(r for r, _ in results), cfg.currency)

    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        report.write_csv(out_path, timings=timings)
        sched_dir = out_path.parent / f"{out_path.stem}_schedules"
        sched_dir.mkdir(exist_ok=True)
        for row, out in results:
            if out.solution is not None:
                write_schedule(out.solution, sched_dir / f"{row.house_id}.csv")
    for row in report.rows:
        if row.failed_under_theorem:
            log.warning("house %s failed certification: %s", row.house_id, row.message)
    return report


# --------------------------------------------------------------------------
# efficiency sweeps
# --------------------------------------------------------------------------

SWEEP_COLUMNS = ("eta_ch", "eta_dch", "product", "m_max", "eps_c", "theorem_holds", "status",
                 "certified", "violation")


@dataclass(frozen=True)
class SweepRow:
    eta_ch: float
    eta_dch: float
    product: float
    m_max: float
    eps_c: float
    theorem_holds: bool
    status: str
    certified: bool

    @property
    def violation(self) -> bool:
        """Simultaneous operation where the efficiency condition promises none."""
        return self.theorem_holds and self.status == "Optimal" and not self.m_max <= self.eps_c


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]

    @property
    def violations(self) -> list[SweepRow]:
        return [r for r in self.rows if r.violation]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(r.eta_ch), fmt(r.eta_dch), fmt(r.product), fmt(r.m_max),
                            fmt(r.eps_c), _flag(r.theorem_holds), r.status, _flag(r.certified),
                            _flag(r.violation)])
        return path


def sweep_condition(base: HouseholdScenario, eta_grid, out_path=None,
                    eps_c: Optional[float] = None,
                    settings: Optional[SolverSettings] = None) -> SweepReport:
    """Solve ``base`` at each ``(eta_ch, eta_dch)`` and record the worst overlap."""
    grid = list(eta_grid)
    if not grid:
        raise ValueError("eta grid is empty")
    if base.battery is None:
        raise ValueError("no battery")
    rows = []
    for eta_ch, eta_dch in grid:
        s = replace(base, battery=replace(base.battery, eta_ch=float(eta_ch),
                                          eta_dch=float(eta_dch)))
        tol = default_eps_c(s.battery) if eps_c is None else eps_c
        cond = theorem_condition(s)
        out = solve_scenario(s, settings, tol)
        if out.solution is not None:
            margins, _ = check_complementarity(out.solution, tol)
            m_max = float(np.max(margins, initial=0.0))
        else:
            m_max = float("nan")
        certified = out.certificate is not None and out.certificate.passed
        rows.append(SweepRow(float(eta_ch), float(eta_dch), cond.eta_product, m_max, tol,
                             cond.holds, out.status, certified))
    report = SweepReport(tuple(rows))
    if out_path is not None:
        report.write_csv(out_path)
    return report

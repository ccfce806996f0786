"""Day-ahead household energy scheduling as a convex QP, with certificates
that the battery never charges and discharges in the same step."""

from .analysis import (
    CertificateReport,
    battery_stationarity_residual,
    bill_subgradient_interval,
    certify,
    check_complementarity,
)
from .model import (
    BatteryParams,
    Horizon,
    HouseholdScenario,
    NonDynLoadParams,
    RegularizationParams,
    Tariff,
    TclParams,
    step_soc,
    step_temperature,
    theorem_condition,
    validate_scenario,
)
from .oracle import compare, solve_exact
from .program import QuadraticProgram, ScheduleSolution, build_qp, extract_solution, objective_value
from .qp import QPResult, SolverSettings, Status, kkt_residuals, solve

__all__ = [
    "BatteryParams", "CertificateReport", "Horizon", "HouseholdScenario", "NonDynLoadParams",
    "QPResult", "QuadraticProgram", "RegularizationParams", "ScheduleSolution", "SolverSettings",
    "Status", "Tariff", "TclParams", "battery_stationarity_residual", "bill_subgradient_interval",
    "build_qp", "certify", "check_complementarity", "compare", "extract_solution",
    "kkt_residuals", "objective_value", "solve", "solve_exact", "step_soc", "step_temperature",
    "theorem_condition", "validate_scenario",
]

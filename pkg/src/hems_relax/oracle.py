"""Exact references used to check the relaxation and the QP solver.

``solve_exact`` enforces exclusive charging/discharging by enumerating, for
every step, which of the two battery controls is pinned at zero. Each
pattern is an ordinary convex QP, so the minimum over the 2**K patterns is
the optimum of the complementarity-constrained problem.

``active_set_qp`` solves a tiny strictly convex QP by trying every subset of
active inequality rows; it shares no code with the interior-point solver.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import HouseholdScenario
from .program import QuadraticProgram, ScheduleSolution, build_qp, extract_solution, fix_at_zero
from .qp import QPResult, SolverSettings, Status, solve

K_LIMIT = 10


@dataclass(frozen=True, eq=False)
class PatternResult:
    """Bit ``k`` of ``pattern`` set means discharging is pinned at zero on step ``k``."""

    pattern: int
    objective: Optional[float]
    solution: Optional[ScheduleSolution]
    status: Status
    # the reduced problem and its raw solver result, kept for audits
    problem: Optional[QuadraticProgram] = field(default=None, repr=False)
    result: Optional[QPResult] = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.objective is not None


@dataclass(frozen=True, eq=False)
class ExactResult:
    best: Optional[PatternResult]
    all: tuple[PatternResult, ...]


def pattern_bits(pattern: int, K: int) -> tuple[int, ...]:
    return tuple((pattern >> k) & 1 for k in range(K))


def solve_pattern(s: HouseholdScenario, pattern: int, settings=None, qp=None) -> PatternResult:
    qp = qp or build_qp(s)
    idx = qp.index
    pinned = [idx.slot("dch" if bit else "ch", k)
              for k, bit in enumerate(pattern_bits(pattern, s.K))]
    reduced, keep = fix_at_zero(qp, pinned)
    res = solve(reduced, settings)
    if res.status is not Status.OPTIMAL:
        return PatternResult(pattern, None, None, res.status, reduced, res)
    x = np.zeros(qp.n)
    x[keep] = res.primal
    x[pinned] = 0.0
    sol = extract_solution(qp, x, s)
    return PatternResult(pattern, sol.objective, sol, res.status, reduced, res)


def solve_exact(s: HouseholdScenario, k_limit: int = K_LIMIT,
                settings: Optional[SolverSettings] = None, jobs: int = 1) -> ExactResult:
    """Enumerate all 2**K charge/discharge patterns; ``best`` is ``None`` if none is feasible."""
    if s.battery is None:
        raise ValueError("no battery")
    if s.K > k_limit:
        raise ValueError(f"K={s.K} exceeds k_limit={k_limit}")
    qp = build_qp(s)
    patterns = range(2 ** s.K)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = tuple(pool.map(lambda q: solve_pattern(s, q, settings, qp), patterns))
    else:
        results = tuple(solve_pattern(s, q, settings, qp) for q in patterns)
    feasible = [r for r in results if r.feasible]
    # min() keeps the first minimizer, i.e. the lowest pattern index on ties
    best = min(feasible, key=lambda r: r.objective) if feasible else None
    return ExactResult(best, results)


@dataclass(frozen=True)
class GapReport:
    relaxed: float
    exact: float
    gap: float

    def tight(self, tol: float = 1e-6) -> bool:
        return abs(self.gap) <= tol


def compare(s: HouseholdScenario, relaxed: ScheduleSolution, exact: PatternResult) -> GapReport:
    """Signed relative gap ``(relaxed - exact) / (1 + |exact|)``."""
    if relaxed.K != s.K or (exact.solution is not None and exact.solution.K != s.K):
        raise ValueError("solutions do not belong to the same scenario")
    gap = (relaxed.objective - exact.objective) / (1.0 + abs(exact.objective))
    return GapReport(relaxed.objective, exact.objective, gap)


# --------------------------------------------------------------------------
# brute-force QP reference
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ActiveSetSolution:
    x: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    active: tuple[int, ...]
    objective: float


def active_set_qp(Q, c, G, h, A=None, b=None, tol: float = 1e-9) -> Optional[ActiveSetSolution]:
    """Solve a tiny strictly convex QP by enumerating active sets.

    For each subset of inequality rows the equality-constrained problem is
    solved exactly; the first subset whose point is primal feasible and whose
    multipliers are nonnegative is the unique optimum. Returns ``None`` when
    no subset qualifies (infeasible problem).
    """
    Q = np.asarray(Q, float)
    c = np.asarray(c, float)
    G = np.asarray(G, float).reshape(-1, c.size)
    h = np.asarray(h, float)
    A = np.zeros((0, c.size)) if A is None else np.asarray(A, float).reshape(-1, c.size)
    b = np.zeros(0) if b is None else np.asarray(b, float)
    n, m, p = c.size, G.shape[0], A.shape[0]
    for size in range(0, min(m, n - p) + 1):
        for active in itertools.combinations(range(m), size):
            act = list(active)
            C = np.vstack([G[act], A])
            kkt = np.block([[Q, C.T], [C, np.zeros((C.shape[0], C.shape[0]))]])
            rhs = np.concatenate([-c, h[act], b])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(kkt) > 1e12:
                continue
            x = sol[:n]
            mult = sol[n:]
            lam_act, nu = mult[:size], mult[size:]
            scale = 1.0 + np.abs(h)
            if np.any(G @ x - h > tol * scale) or np.any(lam_act < -tol):
                continue
            lam = np.zeros(m)
            lam[act] = np.maximum(lam_act, 0.0)
            obj = float(0.5 * x @ Q @ x + c @ x)
            return ActiveSetSolution(x, lam, nu, tuple(active), obj)
    return None

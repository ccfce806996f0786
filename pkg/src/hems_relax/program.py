"""Assembly of the relaxed scheduling problem as a dense convex QP.

Decision vector: one block of K controls per present component (in the order
``ch, dch, nd, tcl``) followed by K epigraph variables ``t``. SoC and indoor
temperature are not decision variables; their affine dependence on the
controls is substituted into the state-bound rows.

Every inequality row is ``A_ineq[i] @ x <= b_ineq[i]`` and carries a tag
``(name, k)``. Lower bounds use the suffix ``_lb`` and upper bounds ``_ub``;
``epi_p``/``epi_s`` are the two epigraph rows of the bill at step ``k``.
Multipliers of these rows are nonnegative and map to the rows by tag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    HouseholdScenario,
    ScenarioError,
    roll_soc,
    roll_temperature,
    validate_scenario,
)

# sign of each control in the grid balance g = u_ch - u_dch + u_nd + u_tcl + d - r
GRID_SIGN = {"ch": 1.0, "dch": -1.0, "nd": 1.0, "tcl": 1.0}

TAG_ORDER = (
    "ch_lb", "ch_ub", "dch_lb", "dch_ub", "nd_lb", "nd_ub", "tcl_lb", "tcl_ub",
    "x_lb", "x_ub", "theta_lb", "theta_ub", "epi_p", "epi_s",
)


@dataclass(frozen=True)
class VariableIndex:
    """Bijection between ``(kind, k)`` pairs and positions ``0..n-1``."""

    kinds: tuple[str, ...]
    K: int

    @property
    def n(self) -> int:
        return len(self.kinds) * self.K

    def slot(self, kind: str, k: int) -> int:
        if not 0 <= k < self.K:
            raise IndexError(k)
        return self.kinds.index(kind) * self.K + k

    def block(self, kind: str) -> slice:
        j = self.kinds.index(kind)
        return slice(j * self.K, (j + 1) * self.K)

    def decode(self, i: int) -> tuple[str, int]:
        if not 0 <= i < self.n:
            raise IndexError(i)
        return self.kinds[i // self.K], i % self.K

    def __contains__(self, kind: str) -> bool:
        return kind in self.kinds


@dataclass(frozen=True)
class StateMap:
    """Affine map ``state[k+1] = matrix[k] @ x + offset[k]``."""

    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x + self.offset


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    """``min 1/2 x'Qx + c'x  s.t.  A_ineq x <= b_ineq,  A_eq x = b_eq``."""

    Q: np.ndarray
    c: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    index: Optional[VariableIndex] = None
    tags: tuple[tuple[str, int], ...] = ()
    soc: Optional[StateMap] = None
    theta: Optional[StateMap] = None
    notes: tuple[str, ...] = field(default=())

    @classmethod
    def from_arrays(cls, Q, c, A_ineq=None, b_ineq=None, A_eq=None, b_eq=None, **kw):
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        Q = np.zeros((n, n)) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
        A_ineq = np.zeros((0, n)) if A_ineq is None else np.atleast_2d(np.asarray(A_ineq, float))
        b_ineq = np.zeros(0) if b_ineq is None else np.asarray(b_ineq, float).ravel()
        A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
        b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).ravel()
        return cls(Q, c, A_ineq.reshape(-1, n), b_ineq, A_eq.reshape(-1, n), b_eq, **kw)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b_ineq.size

    @property
    def p(self) -> int:
        return self.b_eq.size

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def rows(self, name: str) -> np.ndarray:
        """Row indices carrying tag ``name``, ordered by step."""
        idx = [(k, i) for i, (tag, k) in enumerate(self.tags) if tag == name]
        return np.array([i for _, i in sorted(idx)], dtype=int)

    def tag_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for tag, _ in self.tags:
            counts[tag] = counts.get(tag, 0) + 1
        return counts


# --------------------------------------------------------------------------
# builder
# --------------------------------------------------------------------------


def _soc_map(s: HouseholdScenario, idx: VariableIndex) -> StateMap:
    b, K, dt = s.battery, s.K, s.dt
    M = np.zeros((K, idx.n))
    lower = np.tril(np.ones((K, K)))
    M[:, idx.block("ch")] = lower * (dt * b.eta_ch / b.E)
    M[:, idx.block("dch")] = -lower * (dt / (b.eta_dch * b.E))
    offset = b.x0 - dt * b.u_sd / b.E * np.arange(1, K + 1)
    return StateMap(M, offset)


def _theta_map(s: HouseholdScenario, idx: VariableIndex) -> StateMap:
    t, K, dt = s.tcl, s.K, s.dt
    at = t.a_tilde(dt)
    kk, jj = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    decay = np.where(jj <= kk, at ** np.clip(kk - jj, 0, None), 0.0)
    M = np.zeros((K, idx.n))
    M[:, idx.block("tcl")] = -dt * t.b * decay
    ex = np.asarray(t.theta_ex)
    offset = at ** np.arange(1, K + 1) * t.theta0 + dt * t.a * (decay @ ex)
    return StateMap(M, offset)


def build_qp(s: HouseholdScenario, check: bool = True) -> QuadraticProgram:
    """Build the epigraph-form QP for ``s``.

    With ``check=False`` only structurally invalid scenarios are rejected;
    scenarios whose sole problem is an empty feasible set are built so the
    solver can report them.
    """
    report = validate_scenario(s)
    if not report.passed and (check or not report.only_infeasible):
        raise ScenarioError(report)

    K, dt = s.K, s.dt
    kinds = s.components + ("t",)
    idx = VariableIndex(kinds, K)
    n = idx.n
    eye = np.eye(K)

    Q = np.zeros((n, n))
    c = np.zeros(n)
    for kind in s.components:
        alpha, beta = s.reg.pair(kind)
        sl = idx.block(kind)
        Q[sl, sl] = 2.0 * dt * alpha * eye
        c[sl] = dt * beta
    c[idx.block("t")] = 1.0

    blocks: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    tags: list[tuple[str, int]] = []

    def add(name, A, b):
        blocks.append(A)
        rhs.append(np.broadcast_to(np.asarray(b, float), (K,)).copy())
        tags.extend((name, k) for k in range(K))

    def box(kind, lo, hi):
        A = np.zeros((K, n))
        A[:, idx.block(kind)] = eye
        add(f"{kind}_lb", -A, -lo)
        add(f"{kind}_ub", A, hi)

    soc = theta = None
    notes = []
    if s.battery is not None:
        box("ch", 0.0, s.battery.u_ch_max)
        box("dch", 0.0, s.battery.u_dch_max)
    if s.nd_load is not None:
        box("nd", s.nd_load.u_min, s.nd_load.u_max)
        notes.append("nd_ub uses the deferrable-load rating u_max (not the charging rating)")
        notes.append("nd_lb uses the deferrable-load minimum u_min")
    if s.tcl is not None:
        box("tcl", 0.0, s.tcl.u_tcl_max)
    if s.battery is not None:
        soc = _soc_map(s, idx)
        add("x_lb", -soc.matrix, soc.offset - s.battery.x_min)
        add("x_ub", soc.matrix, s.battery.x_max - soc.offset)
    if s.tcl is not None:
        theta = _theta_map(s, idx)
        add("theta_lb", -theta.matrix, theta.offset - s.tcl.theta_min)
        add("theta_ub", theta.matrix, s.tcl.theta_max - theta.offset)

    base = np.asarray(s.d) - np.asarray(s.r)
    for name, price in (("epi_p", s.tariff.p), ("epi_s", s.tariff.s)):
        w = dt * np.asarray(price)
        A = np.zeros((K, n))
        for kind in s.components:
            A[:, idx.block(kind)] = GRID_SIGN[kind] * np.diag(w)
        A[:, idx.block("t")] = -eye
        add(name, A, -w * base)

    if s.nd_load is not None:
        A_eq = np.zeros((1, n))
        A_eq[0, idx.block("nd")] = 1.0
        b_eq = np.array([s.nd_load.total])
        notes.append("equality row: sum of u_nd equals nd_load.total")
    else:
        A_eq, b_eq = np.zeros((0, n)), np.zeros(0)

    return QuadraticProgram(
        Q=Q, c=c, A_ineq=np.vstack(blocks), b_ineq=np.concatenate(rhs),
        A_eq=A_eq, b_eq=b_eq, index=idx, tags=tuple(tags),
        soc=soc, theta=theta, notes=tuple(notes),
    )


def fix_at_zero(qp: QuadraticProgram, cols) -> tuple[QuadraticProgram, np.ndarray]:
    """Eliminate the variables ``cols`` by fixing them at zero.

    Returns the reduced problem and the kept column indices. Rows left with no
    nonzero coefficient are dropped when satisfied at zero and kept otherwise,
    so an inconsistency stays visible to the solver's presolve.
    """
    drop = np.zeros(qp.n, dtype=bool)
    drop[np.asarray(list(cols), dtype=int)] = True
    keep = np.flatnonzero(~drop)
    A = qp.A_ineq[:, keep]
    empty = ~np.any(A != 0.0, axis=1)
    rows = np.flatnonzero(~empty | (qp.b_ineq < 0.0))
    A_eq = qp.A_eq[:, keep]
    eq_rows = np.flatnonzero(np.any(A_eq != 0.0, axis=1) | (qp.b_eq != 0.0))
    reduced = QuadraticProgram(
        Q=qp.Q[np.ix_(keep, keep)], c=qp.c[keep],
        A_ineq=A[rows], b_ineq=qp.b_ineq[rows],
        A_eq=A_eq[eq_rows], b_eq=qp.b_eq[eq_rows],
        tags=tuple(qp.tags[i] for i in rows) if qp.tags else (),
        notes=qp.notes,
    )
    return reduced, keep


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScheduleSolution:
    """Controls, reconstructed trajectories and cost breakdown of one schedule.

    Absent components have all-zero control series; ``x``/``theta`` are
    ``None`` when the battery/TCL is absent and have length K+1 otherwise.
    """

    u_ch: np.ndarray
    u_dch: np.ndarray
    u_nd: np.ndarray
    u_tcl: np.ndarray
    g: np.ndarray
    x: Optional[np.ndarray]
    theta: Optional[np.ndarray]
    bill: float
    reg_cost: float
    objective: float

    @property
    def K(self) -> int:
        return self.g.size


def grid_exchange(s: HouseholdScenario, u_ch, u_dch, u_nd, u_tcl) -> np.ndarray:
    return (np.asarray(u_ch) - np.asarray(u_dch) + np.asarray(u_nd) + np.asarray(u_tcl)
            + np.asarray(s.d) - np.asarray(s.r))


def bill_of(s: HouseholdScenario, g) -> float:
    g = np.asarray(g, dtype=float) * s.dt
    return float(np.sum(np.maximum(np.asarray(s.tariff.p) * g, np.asarray(s.tariff.s) * g)))


def reg_cost_of(s: HouseholdScenario, controls: dict[str, np.ndarray]) -> float:
    total = 0.0
    for kind in s.components:
        alpha, beta = s.reg.pair(kind)
        u = np.asarray(controls[kind], dtype=float)
        total += s.dt * float(np.sum(alpha * u * u + beta * u))
    return total


def schedule_from_controls(s: HouseholdScenario, u_ch=None, u_dch=None, u_nd=None,
                           u_tcl=None) -> ScheduleSolution:
    """Build a :class:`ScheduleSolution` from control series alone."""
    K = s.K

    def arr(u):
        return np.zeros(K) if u is None else np.asarray(u, dtype=float).copy()

    u = {"ch": arr(u_ch), "dch": arr(u_dch), "nd": arr(u_nd), "tcl": arr(u_tcl)}
    g = grid_exchange(s, u["ch"], u["dch"], u["nd"], u["tcl"])
    x = roll_soc(s.battery, u["ch"], u["dch"], s.dt) if s.battery is not None else None
    theta = roll_temperature(s.tcl, u["tcl"], s.dt) if s.tcl is not None else None
    bill = bill_of(s, g)
    reg = reg_cost_of(s, u)
    return ScheduleSolution(u["ch"], u["dch"], u["nd"], u["tcl"], g, x, theta,
                            bill, reg, bill + reg)


def extract_solution(qp: QuadraticProgram, primal, s: HouseholdScenario) -> ScheduleSolution:
    primal = np.asarray(primal, dtype=float)
    if primal.shape != (qp.n,):
        raise ValueError(f"primal has shape {primal.shape}, expected ({qp.n},)")
    idx = qp.index
    controls = {kind: primal[idx.block(kind)] for kind in s.components}
    return schedule_from_controls(
        s, controls.get("ch"), controls.get("dch"), controls.get("nd"), controls.get("tcl"))


def objective_value(s: HouseholdScenario, sol: ScheduleSolution) -> float:
    """Bill plus regularization, recomputed from the controls."""
    if sol.K != s.K:
        raise ValueError("solution horizon does not match scenario")
    g = grid_exchange(s, sol.u_ch, sol.u_dch, sol.u_nd, sol.u_tcl)
    controls = {"ch": sol.u_ch, "dch": sol.u_dch, "nd": sol.u_nd, "tcl": sol.u_tcl}
    return bill_of(s, g) + reg_cost_of(s, controls)


def primal_from_schedule(qp: QuadraticProgram, s: HouseholdScenario,
                         sol: ScheduleSolution) -> np.ndarray:
    """Decision vector for ``sol`` with each epigraph variable at its tight value."""
    idx = qp.index
    x = np.zeros(qp.n)
    controls = {"ch": sol.u_ch, "dch": sol.u_dch, "nd": sol.u_nd, "tcl": sol.u_tcl}
    for kind in s.components:
        x[idx.block(kind)] = controls[kind]
    g = grid_exchange(s, sol.u_ch, sol.u_dch, sol.u_nd, sol.u_tcl) * s.dt
    x[idx.block("t")] = np.maximum(np.asarray(s.tariff.p) * g, np.asarray(s.tariff.s) * g)
    return x

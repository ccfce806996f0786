"""Dense primal-dual interior-point solver for small convex QPs.

Solves ``min 1/2 x'Qx + c'x  s.t.  Gx <= h,  Ax = b`` with Mehrotra
predictor-corrector steps. Each iteration factors the normal-equation
matrix ``Q + G' diag(z/s) G`` by Cholesky and handles the (at most a few)
equality rows through a Schur complement. Once the iterates converge (or
stall just short of the tolerances) the active set they identify is solved
exactly, and that point is kept if it meets every tolerance.

Sign conventions: inequality multipliers ``lam >= 0`` and stationarity is
``Qx + c + G'lam + A'nu = 0``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import nnls

from .program import QuadraticProgram


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    ITERATION_LIMIT = "IterationLimit"
    NUMERICAL_FAILURE = "NumericalFailure"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SolverSettings:
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    tol_gap: float = 1e-8
    # largest admissible lam_i * slack_i at termination
    tol_compl: float = 1e-9
    max_iter: int = 200
    infeasibility_threshold: float = 1e-6

    def __post_init__(self):
        tols = (self.tol_primal, self.tol_dual, self.tol_gap, self.tol_compl,
                self.infeasibility_threshold)
        if any(not t > 0 for t in tols):
            raise ValueError("solver tolerances must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class Residuals:
    r_primal: float
    r_dual: float
    gap: float
    compl: float = 0.0


@dataclass(frozen=True, eq=False)
class QPResult:
    status: Status
    primal: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    iterations: int
    residuals: Residuals
    objective: float = float("nan")
    certificate: Optional[dict] = field(default=None)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# --------------------------------------------------------------------------
# presolve
# --------------------------------------------------------------------------


def variable_bounds(G: np.ndarray, h: np.ndarray, tol: float = 0.0):
    """Bounds implied by singleton inequality rows."""
    n = G.shape[1]
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    nnz = np.count_nonzero(G, axis=1)
    for i in np.flatnonzero(nnz == 1):
        j = int(np.flatnonzero(G[i])[0])
        a = G[i, j]
        if a > 0:
            hi[j] = min(hi[j], h[i] / a)
        else:
            lo[j] = max(lo[j], h[i] / a)
    return lo, hi


def _activity(row: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    pos, neg = row > 0, row < 0
    with np.errstate(invalid="ignore"):
        amin = np.sum(row[pos] * lo[pos]) + np.sum(row[neg] * hi[neg])
        amax = np.sum(row[pos] * hi[pos]) + np.sum(row[neg] * lo[neg])
    return float(amin), float(amax)


def presolve(qp: QuadraticProgram, tol: float = 1e-9) -> Optional[dict]:
    """Bound propagation; returns an infeasibility witness or ``None``."""
    G, h, A, b = qp.A_ineq, qp.b_ineq, qp.A_eq, qp.b_eq
    lo, hi = variable_bounds(G, h)
    for j in np.flatnonzero(lo > hi + tol):
        return {"kind": "empty_box", "variable": int(j), "lower": float(lo[j]),
                "upper": float(hi[j])}
    scale = 1.0 + np.abs(h)
    for i in range(G.shape[0]):
        amin, _ = _activity(G[i], lo, hi)
        if amin > h[i] + tol * scale[i]:
            return {"kind": "row_activity", "row": i, "min_activity": amin, "rhs": float(h[i]),
                    "tag": qp.tags[i] if qp.tags else None}
    for i in range(A.shape[0]):
        amin, amax = _activity(A[i], lo, hi)
        if amin > b[i] + tol * (1 + abs(b[i])) or amax < b[i] - tol * (1 + abs(b[i])):
            return {"kind": "equality_range", "row": i, "min_activity": amin,
                    "max_activity": amax, "rhs": float(b[i])}
    return None


# --------------------------------------------------------------------------
# interior point
# --------------------------------------------------------------------------


REFINE_STEPS = 2


class _Singular(Exception):
    pass


class _NewtonSystem:
    """Factorization of the reduced KKT matrix ``[[H, A'], [A, 0]]``."""

    def __init__(self, Q, G, A, w):
        H = Q + (G.T * w) @ G
        self.H, self.A = H, A
        scale = max(1.0, float(np.max(np.abs(np.diag(H))))) if H.size else 1.0
        reg = 1e-13 * scale
        for _ in range(8):
            try:
                self.cH = sla.cho_factor(H + reg * np.eye(H.shape[0]), lower=True,
                                         check_finite=True)
                break
            except (np.linalg.LinAlgError, ValueError):
                reg *= 100.0
        else:
            raise _Singular("normal matrix not positive definite")
        if A.shape[0]:
            HiAt = sla.cho_solve(self.cH, A.T)
            S = A @ HiAt
            sreg = 1e-13 * max(1.0, float(np.max(np.abs(np.diag(S)))))
            try:
                self.cS = sla.cho_factor(S + sreg * np.eye(S.shape[0]), lower=True)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise _Singular("equality Schur complement singular") from exc

    def _solve_once(self, r1, r2):
        Hr1 = sla.cho_solve(self.cH, r1)
        if not self.A.shape[0]:
            return Hr1, np.zeros(0)
        dy = sla.cho_solve(self.cS, self.A @ Hr1 - r2)
        dx = sla.cho_solve(self.cH, r1 - self.A.T @ dy)
        return dx, dy

    def solve(self, r1, r2, refine: int = 2):
        dx, dy = self._solve_once(r1, r2)
        for _ in range(refine):
            e1 = r1 - self.H @ dx - self.A.T @ dy
            e2 = r2 - self.A @ dx
            cx, cy = self._solve_once(e1, e2)
            dx, dy = dx + cx, dy + cy
        return dx, dy


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _starting_point(qp: QuadraticProgram):
    G, h = qp.A_ineq, qp.b_ineq
    lo, hi = variable_bounds(G, h)
    x = np.zeros(qp.n)
    both = np.isfinite(lo) & np.isfinite(hi)
    x[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    x[only_lo] = lo[only_lo] + 1.0
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x[only_hi] = hi[only_hi] - 1.0
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(qp.m)
    y = np.zeros(qp.p)
    return x, s, z, y


def _farkas(qp: QuadraticProgram, z, y, threshold) -> Optional[dict]:
    """Check whether the dual iterates point along an infeasibility ray."""
    size = np.sum(np.abs(z)) + np.sum(np.abs(y))
    if not np.isfinite(size) or size < 1.0 / threshold:
        return None
    zn, yn = z / size, y / size
    ray = qp.A_ineq.T @ zn + qp.A_eq.T @ yn
    value = float(qp.b_ineq @ zn + qp.b_eq @ yn)
    if np.max(np.abs(ray), initial=0.0) <= threshold and value < -threshold:
        return {"kind": "farkas", "lam": zn, "nu": yn,
                "ray_norm": float(np.max(np.abs(ray), initial=0.0)), "value": value}
    return None


def solve(qp: QuadraticProgram, settings: Optional[SolverSettings] = None) -> QPResult:
    """Solve ``qp``; the outcome is always reported through ``QPResult.status``."""
    st = settings or SolverSettings()
    n, m, p = qp.n, qp.m, qp.p
    witness = presolve(qp)
    if witness is not None:
        nan = np.full(n, np.nan)
        return QPResult(Status.PRIMAL_INFEASIBLE, nan, np.full(m, np.nan), np.full(p, np.nan),
                        0, Residuals(np.inf, np.inf, np.inf, np.inf), float("nan"),
                        {"presolve": witness})
    fixed = _eliminate_fixed(qp)
    if fixed is None:
        return _interior_point(qp, st)
    reduced, expand = fixed
    return expand(_interior_point(reduced, st))


def _eliminate_fixed(qp: QuadraticProgram, tol: float = 1e-12):
    """Substitute variables whose singleton bounds coincide.

    Returns ``None`` when nothing is fixed, else the reduced problem and a
    function mapping its result back to ``qp``. Multipliers of the dropped
    bound rows are chosen to close stationarity for the fixed variables.
    """
    G, h, A, b = qp.A_ineq, qp.b_ineq, qp.A_eq, qp.b_eq
    lo, hi = variable_bounds(G, h)
    fixed = np.isfinite(lo) & np.isfinite(hi) & (hi - lo <= tol * (1.0 + np.abs(lo)))
    if not np.any(fixed):
        return None
    val = np.zeros(qp.n)
    val[fixed] = 0.5 * (lo[fixed] + hi[fixed])
    keep = np.flatnonzero(~fixed)
    shift = G @ val
    live = np.any(G[:, keep] != 0.0, axis=1)
    rows = np.flatnonzero(live)
    eq_shift = A @ val
    eq_rows = np.flatnonzero(np.any(A[:, keep] != 0.0, axis=1))
    reduced = QuadraticProgram(
        Q=qp.Q[np.ix_(keep, keep)],
        c=qp.c[keep] + qp.Q[np.ix_(keep, np.flatnonzero(fixed))] @ val[fixed],
        A_ineq=G[np.ix_(rows, keep)], b_ineq=h[rows] - shift[rows],
        A_eq=A[np.ix_(eq_rows, keep)], b_eq=b[eq_rows] - eq_shift[eq_rows],
    )

    def expand(res: QPResult) -> QPResult:
        x = val.copy()
        x[keep] = res.primal
        lam = np.zeros(qp.m)
        lam[rows] = res.lam
        nu = np.zeros(qp.p)
        nu[eq_rows] = res.nu
        if res.status is Status.OPTIMAL:
            grad = qp.Q @ x + qp.c + G.T @ lam + A.T @ nu
            slack = h - G @ x
            for j in np.flatnonzero(fixed):
                cand = [i for i in np.flatnonzero(~live) if G[i, j] != 0.0
                        and abs(slack[i]) <= 1e-9 * (1.0 + abs(h[i]))]
                need = -grad[j]
                for i in cand:
                    if need * G[i, j] > 0:
                        lam[i] = need / G[i, j]
                        break
        cert = res.certificate
        if cert and "farkas" in cert:
            ray = dict(cert["farkas"])
            ray["lam"] = np.zeros(qp.m)
            ray["lam"][rows] = cert["farkas"]["lam"]
            ray["nu"] = np.zeros(qp.p)
            ray["nu"][eq_rows] = cert["farkas"]["nu"]
            cert = {"farkas": ray}
        return QPResult(res.status, x, lam, nu, res.iterations, res.residuals,
                        qp.objective(x), cert)

    return reduced, expand


def _interior_point(qp: QuadraticProgram, st: SolverSettings) -> QPResult:
    Q, c, G, h, A, b = qp.Q, qp.c, qp.A_ineq, qp.b_ineq, qp.A_eq, qp.b_eq
    n, m, p = qp.n, qp.m, qp.p

    def result(status, x, z, y, it, res, cert=None):
        obj = qp.objective(x) if np.all(np.isfinite(x)) else float("nan")
        return QPResult(status, x, z, y, it, res, obj, cert)

    x, s, z, y = _starting_point(qp)
    res = Residuals(np.inf, np.inf, np.inf, np.inf)
    best = (np.inf, x, z, y, 0, res)
    mu_prev = np.inf
    for it in range(st.max_iter + 1):
        r_d = Q @ x + c + G.T @ z + A.T @ y
        r_eq = A @ x - b
        r_in = G @ x + s - h
        if not (np.all(np.isfinite(r_d)) and np.all(np.isfinite(r_in))
                and np.all(np.isfinite(r_eq))):
            return result(Status.NUMERICAL_FAILURE, x, z, y, it, res)

        pobj = 0.5 * x @ Q @ x + c @ x
        dobj = -0.5 * x @ Q @ x - h @ z - b @ y
        rp = max(np.max(np.abs(r_in), initial=0.0), np.max(np.abs(r_eq), initial=0.0))
        rd = float(np.max(np.abs(r_d), initial=0.0))
        sz = s * z
        compl = float(np.max(sz, initial=0.0))
        gap = float(pobj - dobj)
        res = Residuals(float(rp), rd, gap, compl)
        score = max(rp / st.tol_primal, rd / st.tol_dual, compl / st.tol_compl,
                    abs(gap) / (st.tol_gap * (1.0 + abs(pobj))))
        if score <= 1.0:
            # finish on the identified active set when that is exact
            polished = _polish(qp, x, np.flatnonzero(z > s), st)
            if polished is not None:
                return result(Status.OPTIMAL, *polished[:3], it, polished[3])
            return result(Status.OPTIMAL, x, z, y, it, res)
        if score < best[0]:
            best = (score, x, z, y, it, res)
        elif mu_prev < 1e-3 * st.tol_compl:
            # complementarity far below target yet residuals stalled: no further progress
            break

        cert = _farkas(qp, z, y, st.infeasibility_threshold)
        if cert is not None:
            return result(Status.PRIMAL_INFEASIBLE, x, z, y, it, res, {"farkas": cert})
        if it == st.max_iter:
            break

        mu = float(sz.sum() / m) if m else 0.0
        mu_prev = mu
        w = z / s
        try:
            kkt = _NewtonSystem(Q, G, A, w)
        except _Singular:
            return result(Status.NUMERICAL_FAILURE, x, z, y, it, res)

        def reduced(e_d, e_eq, e_in, e_c):
            r1 = -e_d - G.T @ ((-e_c + z * e_in) / s)
            dx, dy = kkt.solve(r1, -e_eq, refine=0)
            ds = -e_in - G @ dx
            dz = (-e_c - z * ds) / s
            return dx, ds, dz, dy

        def direction(rc):
            # Newton step for Z ds + S dz = -rc, refined on the unreduced system
            d = reduced(r_d, r_eq, r_in, rc)
            for _ in range(REFINE_STEPS):
                dx, ds, dz, dy = d
                e_d = r_d + Q @ dx + G.T @ dz + A.T @ dy
                e_eq = r_eq + A @ dx
                e_in = r_in + G @ dx + ds
                e_c = rc + z * ds + s * dz
                c = reduced(e_d, e_eq, e_in, e_c)
                d = tuple(u + v for u, v in zip(d, c))
            return d

        dx, ds, dz, dy = direction(sz)
        alpha = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + alpha * ds) @ (z + alpha * dz) / m) if m else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, ds, dz, dy = direction(sz + ds * dz - sigma * mu)

        tau = 0.995
        alpha = min(1.0, tau * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        y = y + alpha * dy

    cert = _farkas(qp, z, y, st.infeasibility_threshold)
    if cert is not None:
        return result(Status.PRIMAL_INFEASIBLE, x, z, y, it, res, {"farkas": cert})
    _, x, z, y, best_it, res = best
    slack = h - G @ x
    for ratio in (1.0, 1e-3, 1e3):
        polished = _polish(qp, x, np.flatnonzero(z > ratio * slack), st)
        if polished is not None:
            x, z, y, res = polished
            return result(Status.OPTIMAL, x, z, y, best_it, res)
    status = Status.ITERATION_LIMIT if it >= st.max_iter else Status.NUMERICAL_FAILURE
    return result(status, x, z, y, best_it, res)


def _polish(qp: QuadraticProgram, x, active, st: SolverSettings, max_rounds: int = 20):
    """Re-solve the KKT system with ``active`` rows held as equalities.

    A few primal active-set corrections follow: violated rows are added and
    rows with negative multipliers dropped. The polished point is accepted
    only if it meets every termination tolerance.
    """
    Q, c, G, h, A, b = qp.Q, qp.c, qp.A_ineq, qp.b_ineq, qp.A_eq, qp.b_eq
    n, p = qp.n, qp.p
    work = set(int(i) for i in active)
    for _ in range(max_rounds):
        idx = np.array(sorted(work), dtype=int)
        GA = G[idx]
        na = idx.size
        K = np.block([[Q, GA.T, A.T],
                      [GA, np.zeros((na, na + p))],
                      [A, np.zeros((p, na + p))]])
        sol = np.linalg.lstsq(K, np.concatenate([-c, h[idx], b]), rcond=None)[0]
        xp, lam_w = sol[:n], sol[n:n + na]
        viol = G @ xp - h
        worst = np.flatnonzero(viol > st.tol_primal)
        if worst.size:
            work.update(int(i) for i in worst)
            continue
        if na and lam_w.min() < -st.tol_dual:
            work.discard(int(idx[np.argmin(lam_w)]))
            continue
        break
    else:
        return None
    # multipliers may be non-unique; take nonnegative ones for xp
    grad = Q @ xp + c
    coef, _ = nnls(np.hstack([GA.T, A.T, -A.T]), -grad)
    lam = np.zeros(qp.m)
    lam[idx] = coef[:na]
    nu = coef[na:na + p] - coef[na + p:]
    slack = h - G @ xp
    rp = max(float(np.max(-slack, initial=0.0)), float(np.max(np.abs(A @ xp - b), initial=0.0)))
    rd = float(np.max(np.abs(grad + G.T @ lam + A.T @ nu), initial=0.0))
    compl = float(np.max(np.abs(lam * slack), initial=0.0))
    pobj = 0.5 * xp @ Q @ xp + c @ xp
    dobj = pobj + lam @ (G @ xp - h) + nu @ (A @ xp - b)
    gap = float(pobj - dobj)
    if (rp <= st.tol_primal and rd <= st.tol_dual and compl <= st.tol_compl
            and abs(gap) <= st.tol_gap * (1.0 + abs(pobj))):
        return xp, lam, nu, Residuals(rp, rd, gap, compl)
    return None


# --------------------------------------------------------------------------
# independent KKT audit
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualReport:
    """KKT residuals recomputed from ``(x, lam, nu)`` alone."""

    stationarity: float
    complementary_slackness: float
    primal_feasibility: float
    dual_feasibility: float
    stationarity_vector: np.ndarray = field(repr=False, compare=False)
    slack: np.ndarray = field(repr=False, compare=False)

    TOL_STATIONARITY = 1e-6
    TOL_COMPLEMENTARITY = 1e-7
    TOL_PRIMAL = 1e-8
    TOL_DUAL = 1e-10

    def violations(self, stationarity=TOL_STATIONARITY, complementarity=TOL_COMPLEMENTARITY,
                   primal=TOL_PRIMAL, dual=TOL_DUAL) -> list[str]:
        out = []
        if not self.stationarity <= stationarity:
            out.append(f"stationarity {self.stationarity:.3g} > {stationarity:g}")
        if not self.complementary_slackness <= complementarity:
            out.append(f"complementary slackness {self.complementary_slackness:.3g} "
                       f"> {complementarity:g}")
        if not self.primal_feasibility <= primal:
            out.append(f"primal feasibility {self.primal_feasibility:.3g} > {primal:g}")
        if not self.dual_feasibility <= dual:
            out.append(f"dual feasibility violated by {self.dual_feasibility:.3g}")
        return out

    def within(self, **tols) -> bool:
        return not self.violations(**tols)


def kkt_residuals(qp: QuadraticProgram, res: QPResult) -> ResidualReport:
    return kkt_residuals_at(qp, res.primal, res.lam, res.nu)


def kkt_residuals_at(qp: QuadraticProgram, x, lam, nu) -> ResidualReport:
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if x.shape != (qp.n,) or lam.shape != (qp.m,) or nu.shape != (qp.p,):
        raise ValueError("dimension mismatch between problem and point")
    grad = qp.Q @ x + qp.c + qp.A_ineq.T @ lam + qp.A_eq.T @ nu
    h = qp.A_ineq @ x - qp.b_ineq
    l = qp.A_eq @ x - qp.b_eq
    primal = max(float(np.max(np.maximum(h, 0.0), initial=0.0)),
                 float(np.max(np.abs(l), initial=0.0)))
    return ResidualReport(
        stationarity=float(np.max(np.abs(grad), initial=0.0)),
        complementary_slackness=float(np.max(np.abs(lam * h), initial=0.0)),
        primal_feasibility=primal,
        dual_feasibility=float(max(0.0, -np.min(lam, initial=0.0))),
        stationarity_vector=grad,
        slack=-h,
    )

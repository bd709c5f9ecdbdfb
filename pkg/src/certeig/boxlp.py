"""Dense bounded-variable simplex for small box-constrained linear programs.

Solves  min c^T y  subject to  a_i^T y >= b_i  and  lo <= y <= up,
the shape produced by constraint accumulation over sampled parameter
points. Dimensions stay tiny (y has one entry per affine term, the row
count grows with the iteration counter), so a dense two-phase revised
simplex with explicit refactorization per pivot is both fast enough and
fully deterministic. Dantzig pricing with a Bland fallback guards against
cycling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalConsistencyError, SolverFailureError

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-11
ACTIVE_TOL = 1e-9
_BLAND_AFTER = 60
_MAX_PIVOTS_BASE = 200


@dataclass
class BoxLp:
    c: np.ndarray
    lo: np.ndarray
    up: np.ndarray
    constraint_lhs: np.ndarray  # m x kappa, rows a_i
    constraint_rhs: np.ndarray  # m

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.up = np.asarray(self.up, dtype=float)
        k = self.c.size
        self.constraint_lhs = np.asarray(self.constraint_lhs, dtype=float).reshape(-1, k)
        self.constraint_rhs = np.asarray(self.constraint_rhs, dtype=float).ravel()
        if self.lo.shape != (k,) or self.up.shape != (k,):
            raise ValueError("bound vectors must match objective length")
        if np.any(self.lo > self.up):
            raise ValueError("lower bound exceeds upper bound")
        for name, arr in (("c", self.c), ("lo", self.lo), ("up", self.up),
                          ("lhs", self.constraint_lhs), ("rhs", self.constraint_rhs)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible"
    value: float
    minimizer: np.ndarray
    active_set: list = field(default_factory=list)
    constraint_duals: np.ndarray = None
    lower_bound_duals: np.ndarray = None
    upper_bound_duals: np.ndarray = None
    iterations: int = 0


class _Tableau:
    """Bounded-variable simplex state over columns [y | surplus | artificial]."""

    def __init__(self, lp):
        k = lp.c.size
        m = lp.constraint_rhs.size
        self.k, self.m = k, m
        A = lp.constraint_lhs
        self.Aeq = np.hstack([A, -np.eye(m), np.eye(m)])
        self.b = lp.constraint_rhs.copy()
        inf = np.inf
        self.lo = np.concatenate([lp.lo, np.zeros(m), np.zeros(m)])
        self.up = np.concatenate([lp.up, np.full(m, inf), np.full(m, inf)])
        # start y at the box corner optimal for the objective alone
        at_up = lp.c < 0.0
        self.at_upper = np.zeros(k + 2 * m, dtype=bool)
        self.at_upper[:k] = at_up
        y0 = np.where(at_up, lp.up, lp.lo)
        resid = A @ y0 - lp.constraint_rhs if m else np.zeros(0)
        self.basis = np.empty(m, dtype=int)
        self.needs_phase1 = False
        for i in range(m):
            if resid[i] >= 0.0:
                self.basis[i] = k + i  # surplus carries the slack
            else:
                self.basis[i] = k + m + i  # artificial absorbs infeasibility
                self.needs_phase1 = True
        self.is_basic = np.zeros(k + 2 * m, dtype=bool)
        self.is_basic[self.basis] = True
        self.pivots = 0

    def nonbasic_values(self):
        vals = np.where(self.at_upper, np.where(np.isfinite(self.up), self.up, 0.0),
                        self.lo)
        vals[self.is_basic] = 0.0
        return vals

    def solve_basic(self):
        zn = self.nonbasic_values()
        rhs = self.b - self.Aeq @ zn
        B = self.Aeq[:, self.basis]
        try:
            xb = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalConsistencyError("singular simplex basis") from exc
        return xb, zn

    def run(self, cost, scale):
        """Minimize cost over the current system; returns objective value."""
        m = self.m
        if m == 0:
            zn = self.nonbasic_values()
            return float(cost @ zn)
        max_pivots = _MAX_PIVOTS_BASE + 20 * (self.k + m)
        degenerate_streak = 0
        bland = False
        while True:
            if self.pivots > max_pivots:
                raise SolverFailureError("simplex pivot cap exceeded")
            xb, zn = self.solve_basic()
            B = self.Aeq[:, self.basis]
            y = np.linalg.solve(B.T, cost[self.basis])
            d = cost - self.Aeq.T @ y
            d[self.basis] = 0.0
            movable = ~self.is_basic & (self.up > self.lo)
            tol = PIVOT_TOL * scale
            down = movable & ~self.at_upper & (d < -tol)
            upv = movable & self.at_upper & (d > tol)
            eligible = np.where(down | upv)[0]
            if eligible.size == 0:
                zfull = zn.copy()
                zfull[self.basis] = xb
                return float(cost @ zfull)
            if bland:
                e = int(eligible[0])
            else:
                e = int(eligible[np.argmax(np.abs(d[eligible]))])
            direction = -1.0 if self.at_upper[e] else 1.0
            w = np.linalg.solve(B, self.Aeq[:, e]) * direction
            # basic variables move by -w * t as the entering variable grows by t
            lo_b = self.lo[self.basis]
            up_b = self.up[self.basis]
            steps = np.full(m, np.inf)
            pos = w > tol
            steps[pos] = (xb[pos] - lo_b[pos]) / w[pos]
            neg = w < -tol
            with np.errstate(invalid="ignore"):
                steps[neg] = (xb[neg] - up_b[neg]) / w[neg]
            steps[~np.isfinite(steps)] = np.inf
            t_flip = self.up[e] - self.lo[e]
            t_basic = np.min(steps) if m else np.inf
            t = min(t_basic, t_flip)
            if not np.isfinite(t):
                raise NumericalConsistencyError("unbounded direction in box LP")
            t = max(t, 0.0)
            if t <= tol:
                degenerate_streak += 1
                if degenerate_streak > _BLAND_AFTER:
                    bland = True
            else:
                degenerate_streak = 0
            self.pivots += 1
            if t_flip <= t_basic:
                self.at_upper[e] = ~self.at_upper[e]
                continue
            candidates = np.where(steps <= t_basic + tol)[0]
            if bland:
                leave_pos = int(candidates[np.argmin(self.basis[candidates])])
            else:
                leave_pos = int(candidates[np.argmax(np.abs(w[candidates]))])
            leaving = self.basis[leave_pos]
            self.at_upper[leaving] = w[leave_pos] < 0  # hit its upper bound
            self.is_basic[leaving] = False
            self.basis[leave_pos] = e
            self.is_basic[e] = True
            self.at_upper[e] = False


def solve_box_lp(lp):
    """Solve the box LP; infeasibility is reported, not raised."""
    k = lp.c.size
    m = lp.constraint_rhs.size
    if m == 0:
        y = np.where(lp.c >= 0.0, lp.lo, lp.up)
        value = float(lp.c @ y)
        return LpResult(
            status="optimal",
            value=value,
            minimizer=y,
            active_set=[],
            constraint_duals=np.zeros(0),
            lower_bound_duals=np.maximum(lp.c, 0.0),
            upper_bound_duals=np.maximum(-lp.c, 0.0),
            iterations=0,
        )
    scale = max(1.0, float(np.max(np.abs(lp.constraint_rhs))),
                float(np.max(np.abs(lp.c))))
    tab = _Tableau(lp)
    cost2 = np.concatenate([lp.c, np.zeros(2 * m)])
    if tab.needs_phase1:
        cost1 = np.concatenate([np.zeros(k + m), np.ones(m)])
        resid1 = tab.run(cost1, scale)
        if resid1 > FEAS_TOL * scale:
            return LpResult(status="infeasible", value=np.nan,
                            minimizer=np.full(k, np.nan), iterations=tab.pivots)
    tab.up[k + m:] = 0.0  # freeze artificials for the real objective
    tab.at_upper[k + m:] &= False
    value = tab.run(cost2, scale)
    xb, zn = tab.solve_basic()
    z = zn.copy()
    z[tab.basis] = xb
    y_opt = z[:k]
    # duals from the final factorization
    B = tab.Aeq[:, tab.basis]
    dual = np.linalg.solve(B.T, cost2[tab.basis])
    d = cost2 - tab.Aeq.T @ dual
    lower_duals = np.zeros(k)
    upper_duals = np.zeros(k)
    for j in range(k):
        if tab.is_basic[j]:
            continue
        if tab.at_upper[j]:
            upper_duals[j] = max(-d[j], 0.0)
        else:
            lower_duals[j] = max(d[j], 0.0)
    slacks = lp.constraint_lhs @ y_opt - lp.constraint_rhs
    active = [i for i in range(m)
              if slacks[i] <= ACTIVE_TOL * (1.0 + abs(lp.constraint_rhs[i]))]
    return LpResult(
        status="optimal",
        value=float(value),
        minimizer=y_opt,
        active_set=active,
        constraint_duals=np.maximum(dual, 0.0),
        lower_bound_duals=lower_duals,
        upper_bound_duals=upper_duals,
        iterations=tab.pivots,
    )

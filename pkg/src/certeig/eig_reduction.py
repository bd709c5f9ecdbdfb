"""Greedy subspace reduction for the smallest eigenvalue over a box.

The estimator grows a projection subspace by repeatedly maximizing the
computable gap between the Ritz upper bound and the certified lower bound
over the whole parameter box, then enriching the subspace with eigenvectors
at the maximizer. On tolerance termination the gap certificate dominates
the true approximation error everywhere in the box.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .affine import AffineOperator
from .bounds import BoundEvaluator, ReductionState, SamplePointData
from .eigsolve import (
    ShiftInvertSolver,
    extreme_eigs,
    fix_phase,
    orth_extend,
    smallest_eigs,
)
from .errors import StagnationError
from .globalopt import MAX_CERTIFIED_P, OptProblem, maximize, mesh_maximize
from .validation import check_mu_points, check_operator

logger = logging.getLogger(__name__)

ELL_CAP = 32
DUPLICATE_DIST_FACTOR = 1e-12


@dataclass
class IterationRecord:
    j: int
    mu_next: tuple
    eps: float
    certificate: float
    dim: int
    points: int
    ell: int
    opt_evals: int
    opt_terminated_by: str
    t_eigensolve: float = 0.0
    t_optimizer: float = 0.0
    t_lp: float = 0.0


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    certified: bool = False
    termination: str = "max_iters"
    final_dim: int = 0
    points: list = field(default_factory=list)
    values_at_points: list = field(default_factory=list)
    error_mode: str = "absolute"
    wall_seconds: float = 0.0

    def as_dict(self):
        return {
            "certified": self.certified,
            "termination": self.termination,
            "final_dim": self.final_dim,
            "error_mode": self.error_mode,
            "wall_seconds": self.wall_seconds,
            "points": [list(map(float, mu)) for mu in self.points],
            "values_at_points": [float(v) for v in self.values_at_points],
            "iterations": [
                {
                    "j": r.j,
                    "mu_next": list(map(float, r.mu_next)),
                    "eps": float(r.eps),
                    "certificate": float(r.certificate),
                    "dim": r.dim,
                    "points": r.points,
                    "ell": r.ell,
                    "opt_evals": r.opt_evals,
                    "opt_terminated_by": r.opt_terminated_by,
                    "t_eigensolve": r.t_eigensolve,
                    "t_optimizer": r.t_optimizer,
                    "t_lp": r.t_lp,
                }
                for r in self.records
            ],
        }


def choose_ell(op, mu, gap_threshold, ell_cap=ELL_CAP, solver=None):
    """Smallest eigenvector count separating the bottom of the spectrum.

    Returns (ell, lambdas[:ell], lambda_next, vectors) where ell is minimal
    with lambda_{ell+1} - lambda_1 > gap_threshold, capped at ``ell_cap``
    (a warning is logged when the cap truncates a cluster).
    """
    if gap_threshold <= 0:
        raise ValueError("gap_threshold must be positive")
    A = op.assemble(mu)
    n = A.shape[0]
    cap = min(ell_cap, n - 1)
    if not sp.issparse(A) or n <= 1200:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        vals, vecs = sla.eigh(Ad)
        vecs = fix_phase(vecs)
        ell = 1
        while ell < cap and vals[ell] - vals[0] <= gap_threshold:
            ell += 1
        if ell == cap and vals[ell] - vals[0] <= gap_threshold:
            logger.warning("eigenvector count capped at %d at mu=%s", cap, mu)
        return ell, vals[:ell], float(vals[ell]), vecs[:, :ell]
    solver = solver or ShiftInvertSolver(A)
    k = 2
    while True:
        k = min(k, n - 1)
        vals, vecs = solver.nearest(k + 1)
        vecs = fix_phase(vecs)
        ell = 1
        while ell < min(cap, k) and vals[ell] - vals[0] <= gap_threshold:
            ell += 1
        if ell < k or ell >= cap or k >= n - 1:
            if ell == cap and vals[min(ell, k)] - vals[0] <= gap_threshold:
                logger.warning("eigenvector count capped at %d at mu=%s", cap, mu)
            return ell, vals[:ell], float(vals[ell]), vecs[:, :ell]
        k = min(2 * k + 1, n - 1)


def fixed_ell_eigendata(op, mu, ell):
    A = op.assemble(mu)
    ell = min(ell, A.shape[0] - 1)
    pairs = smallest_eigs(A, ell + 1)
    return ell, pairs.values[:ell], float(pairs.values[ell]), pairs.vectors[:, :ell]


class MinEigenvalueSurrogate(BaseEstimator):
    """Certified reduced model for the smallest eigenvalue of A(mu).

    Parameters
    ----------
    epsilon : float
        Termination tolerance on the surrogate gap.
    error_mode : {"absolute", "relative"}
        Whether the gap (and the certificate) is absolute or divided by
        the magnitude of the upper bound.
    ell_mode : {"dynamic", "fixed"}
        Dynamic mode grows the per-point eigenvector count until the
        spectral gap clears ``gap_threshold``.
    ell : int
        Eigenvector count per point in fixed mode.
    gap_threshold : float
        Spectral-gap threshold for dynamic mode.
    ritz_count : int
        Number of Ritz vectors entering the residual block.
    lb_mode : {"plain", "scm", "sharper-max", "running-max"}
        Lower-bound flavor; running-max enforces monotone surrogate decay.
    init_points : sequence or None
        Initial sample points; defaults to the box center.
    init_grid : int or None
        Uniform grid refinement per dimension used for initialization
        instead of ``init_points``.
    init_basis : array or None
        Orthonormal columns prepended to the subspace before sampling.
    opt_tol : float or None
        Gap tolerance handed to the global optimizer (default epsilon/10).
    opt_max_evals : int
        Evaluation budget per outer iteration.
    lipschitz : float or None
        Surrogate Lipschitz constant; estimated per iteration when None.
    rho_zero_machine, rho_zero_reldist : safeguards zeroing the residual
        term near machine precision / near stored points.
    history_window : int or None
        Running-max history depth (None keeps all iterations).
    max_outer_iters : int
        Outer iteration cap; reaching it leaves the model uncertified.
    """

    def __init__(self, epsilon=1e-6, error_mode="absolute", ell_mode="dynamic",
                 ell=1, gap_threshold=1e-7, ritz_count=1, lb_mode="plain",
                 init_points=None, init_grid=None, init_basis=None,
                 opt_tol=None, opt_max_evals=2000, lipschitz=None,
                 rho_zero_machine=False, rho_zero_reldist=None,
                 history_window=None, max_outer_iters=100):
        self.epsilon = epsilon
        self.error_mode = error_mode
        self.ell_mode = ell_mode
        self.ell = ell
        self.gap_threshold = gap_threshold
        self.ritz_count = ritz_count
        self.lb_mode = lb_mode
        self.init_points = init_points
        self.init_grid = init_grid
        self.init_basis = init_basis
        self.opt_tol = opt_tol
        self.opt_max_evals = opt_max_evals
        self.lipschitz = lipschitz
        self.rho_zero_machine = rho_zero_machine
        self.rho_zero_reldist = rho_zero_reldist
        self.history_window = history_window
        self.max_outer_iters = max_outer_iters

    # -- helpers -------------------------------------------------------------

    def _eigendata(self, op, mu):
        if self.ell_mode == "dynamic":
            return choose_ell(op, mu, self.gap_threshold)
        return fixed_ell_eigendata(op, mu, self.ell)

    def _initial_points(self, op):
        if self.init_points is not None:
            return [np.atleast_1d(np.asarray(mu, dtype=float))
                    for mu in self.init_points]
        if self.init_grid is not None:
            return list(op.box.uniform_grid(self.init_grid))
        return [op.box.center]

    def _add_point(self, state, op, mu):
        t0 = time.perf_counter()
        ell, lambdas, lam_next, vectors = self._eigendata(op, mu)
        state.V = orth_extend(state.V, vectors, check=False)
        state.points.append(
            SamplePointData(mu=mu, lambdas=lambdas, lambda_next=lam_next,
                            vectors=vectors)
        )
        state.point_history.append(len(state.points))
        state.dim_history.append(state.V.shape[1])
        return ell, time.perf_counter() - t0

    def _surrogate(self, evaluator):
        relative = self.error_mode == "relative"

        def objective(mu):
            rec = evaluator.evaluate(mu)
            return rec.H_rel if relative else rec.H

        return objective

    # -- estimator API ---------------------------------------------------------

    def fit(self, X, y=None):
        """Build the certified subspace for the operator ``X``."""
        op = check_operator(X, hermitian=True)
        if self.error_mode not in ("absolute", "relative"):
            raise ValueError("error_mode must be 'absolute' or 'relative'")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        t_start = time.perf_counter()
        term_lo = np.empty(op.kappa)
        term_up = np.empty(op.kappa)
        for m, A in enumerate(op.matrices):
            term_lo[m], term_up[m] = extreme_eigs(A)
        V0 = None
        if self.init_basis is not None:
            V0 = orth_extend(None, np.asarray(self.init_basis))
        state = ReductionState(
            operator=op, points=[], V=V0, term_lo=term_lo, term_up=term_up,
            ritz_count=self.ritz_count, lb_mode=self.lb_mode,
        )
        trace = RunTrace(error_mode=self.error_mode)
        t_eig_init = 0.0
        last_ell = 0
        for mu in self._initial_points(op):
            last_ell, dt = self._add_point(state, op, mu)
            t_eig_init += dt
        opt_tol = self.opt_tol if self.opt_tol is not None else self.epsilon / 10.0
        diam = op.box.diameter
        evaluator = None
        for j in range(1, self.max_outer_iters + 1):
            evaluator = BoundEvaluator(
                state,
                rho_zero_machine=self.rho_zero_machine,
                rho_zero_reldist=self.rho_zero_reldist,
                history_window=self.history_window,
            )
            objective = self._surrogate(evaluator)
            t0 = time.perf_counter()
            if op.box.p > MAX_CERTIFIED_P:
                if j == 1:
                    warnings.warn(
                        f"certified search supports up to {MAX_CERTIFIED_P} "
                        "parameters; falling back to a mesh search without "
                        "certificates",
                        RuntimeWarning, stacklevel=2,
                    )
                per_dim = max(2, int(round(self.opt_max_evals ** (1.0 / op.box.p))))
                outcome = mesh_maximize(objective, op.box, per_dim)
            else:
                problem = OptProblem(
                    objective=objective, box=op.box,
                    lipschitz_gamma=self.lipschitz, tol=opt_tol,
                    max_evals=self.opt_max_evals,
                )
                outcome = maximize(problem)
            t_opt = time.perf_counter() - t0
            record = IterationRecord(
                j=j, mu_next=tuple(float(x) for x in outcome.argmax),
                eps=outcome.value, certificate=outcome.upper_certificate,
                dim=state.V.shape[1], points=state.j, ell=last_ell,
                opt_evals=outcome.evals_used,
                opt_terminated_by=outcome.terminated_by,
                t_eigensolve=t_eig_init, t_optimizer=t_opt,
                t_lp=evaluator.lp_seconds,
            )
            t_eig_init = 0.0
            trace.records.append(record)
            if (outcome.terminated_by == "gap"
                    and outcome.upper_certificate <= self.epsilon):
                trace.certified = True
                trace.termination = "tolerance"
                break
            if op.box.p > MAX_CERTIFIED_P and outcome.value <= self.epsilon:
                trace.certified = False
                trace.termination = "mesh-tolerance"
                break
            candidate = np.asarray(outcome.argmax, dtype=float)
            dists = [np.linalg.norm(candidate - pt.mu) for pt in state.points]
            if dists and min(dists) <= DUPLICATE_DIST_FACTOR * max(diam, 1.0):
                if outcome.value <= self.epsilon:
                    trace.certified = True
                    trace.termination = "stagnation"
                    break
                raise StagnationError(
                    f"selected point {candidate.tolist()} duplicates a stored "
                    f"point while the surrogate gap {outcome.value:.3e} exceeds "
                    f"{self.epsilon:.3e}"
                )
            last_ell, dt = self._add_point(state, op, candidate)
            record.t_eigensolve += dt
            record.ell = last_ell
        else:
            trace.termination = "max_iters"
            logger.warning("outer iteration cap reached; model is uncertified")
        trace.final_dim = state.V.shape[1]
        trace.points = [pt.mu for pt in state.points]
        trace.wall_seconds = time.perf_counter() - t_start
        self.state_ = state
        self.evaluator_ = BoundEvaluator(
            state, rho_zero_machine=self.rho_zero_machine,
            rho_zero_reldist=self.rho_zero_reldist,
            history_window=self.history_window,
        )
        trace.values_at_points = [
            self.evaluator_.upper_bound(mu) for mu in trace.points
        ]
        self.trace_ = trace
        self.basis_ = state.V
        self.points_ = trace.points
        self.certified_ = trace.certified
        self.dim_ = state.V.shape[1]
        self.reduced_operator_ = op.project(state.V)
        return self

    def predict(self, X):
        """Upper-bound eigenvalues at parameter points (rows of ``X``)."""
        check_is_fitted(self, "evaluator_")
        pts = check_mu_points(X, self.state_.operator.box.p)
        return np.array([self.evaluator_.upper_bound(mu) for mu in pts])

    def lower_bound(self, X):
        """Certified lower bounds at parameter points."""
        check_is_fitted(self, "evaluator_")
        pts = check_mu_points(X, self.state_.operator.box.p)
        return np.array([self.evaluator_.evaluate(mu).lambda_lb for mu in pts])

    def bound_records(self, X):
        """Full per-point bound records (upper, lower, gap, pieces)."""
        check_is_fitted(self, "evaluator_")
        pts = check_mu_points(X, self.state_.operator.box.p)
        return [self.evaluator_.evaluate(mu) for mu in pts]

    def surrogate_gap(self, X):
        check_is_fitted(self, "evaluator_")
        pts = check_mu_points(X, self.state_.operator.box.p)
        key = "H_rel" if self.error_mode == "relative" else "H"
        return np.array([getattr(self.evaluator_.evaluate(mu), key) for mu in pts])

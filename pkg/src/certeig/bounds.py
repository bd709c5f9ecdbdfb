"""Certified two-sided bounds for the smallest eigenvalue of A(mu).

Given eigendata collected at sampled points and the accumulated projection
basis, this module evaluates, for any parameter value:

* the upper bound  lambda_ub(mu)  = smallest Ritz value of V* A(mu) V,
* a residual       rho(mu)^2      of the leading Ritz block,
* per-point shifts beta_i(mu)     entering the constraint polytope,
* the polytope LP  value eta(mu)  bounding the complementary block,
* the lower bound  lambda_lb(mu)  via the perturbation correction f,
* the constraint-only variant (all beta_i = 0) used for comparison,
* surrogate gaps H = lambda_ub - lambda_lb and its relative form.

Everything is evaluated against a frozen snapshot; many parameter values
may be evaluated concurrently against the same snapshot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .boxlp import BoxLp, solve_box_lp
from .errors import NumericalConsistencyError
from .eigsolve import fix_phase

logger = logging.getLogger(__name__)

RHO_CLAMP_FACTOR = 1e-10
BETA_CLAMP_FACTOR = 1e-9
TINY_GUARD = 1e-30
RELATIVE_DENOM_GUARD = 1e-30

LB_MODES = ("plain", "scm", "sharper-max", "running-max")


@dataclass
class SamplePointData:
    """Eigendata retained for one sampled parameter point."""

    mu: np.ndarray
    lambdas: np.ndarray  # ell smallest eigenvalues, ascending
    lambda_next: float  # the (ell+1)-st eigenvalue
    vectors: np.ndarray  # n x ell orthonormal eigenvectors

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if self.lambda_next < self.lambdas[-1] - 1e-8 * (1 + abs(self.lambda_next)):
            raise ValueError("lambda_next below the stored eigenvalues")

    @property
    def ell(self):
        return self.lambdas.size


@dataclass
class ReductionState:
    """Greedy-iteration state: points, basis and term spectral bounds."""

    operator: object
    points: list
    V: np.ndarray
    term_lo: np.ndarray  # smallest eigenvalue of each term matrix
    term_up: np.ndarray  # largest eigenvalue of each term matrix
    ritz_count: int = 1
    lb_mode: str = "plain"
    dim_history: list = field(default_factory=list)  # basis dim after each point
    point_history: list = field(default_factory=list)  # point count after each point

    def __post_init__(self):
        if self.lb_mode not in LB_MODES:
            raise ValueError(f"lb_mode must be one of {LB_MODES}")

    @property
    def j(self):
        return len(self.points)

    @property
    def dim(self):
        return 0 if self.V is None else self.V.shape[1]

    def term_norms(self):
        return np.maximum(np.abs(self.term_lo), np.abs(self.term_up))


@dataclass
class BoundEvaluation:
    """All per-parameter bound quantities for one evaluation."""

    mu: np.ndarray
    lambda_ub: float
    ritz_values: np.ndarray
    rho_sq: float
    eta: float
    lambda_lb: float
    lambda_scm: float = None
    H: float = np.inf
    H_rel: float = np.inf
    betas: np.ndarray = None
    lp_status: str = "optimal"


def f_correction(lambda_ub_1, eta, rho_sq):
    """Perturbation-corrected lower bound given the complementary bound eta.

    Monotone nondecreasing in eta; the correction vanishes with rho_sq.
    """
    if rho_sq < 0:
        raise ValueError("rho_sq must be nonnegative")
    base = min(lambda_ub_1, eta)
    if rho_sq == 0.0:
        return base
    gap = abs(lambda_ub_1 - eta)
    if gap < TINY_GUARD and rho_sq < TINY_GUARD:
        return base
    denom = gap + math.sqrt(gap * gap + 4.0 * rho_sq)
    return base - 2.0 * rho_sq / denom


class BoundEvaluator:
    """Frozen-snapshot evaluator with the large-dimension work precomputed.

    For basis V the products A_m V are formed once; every subsequent
    evaluation costs only reduced-dimension dense algebra plus one small
    linear program.
    """

    def __init__(self, state, rho_zero_machine=False, rho_zero_reldist=None,
                 history_window=None):
        self.state = state
        self.rho_zero_machine = rho_zero_machine
        self.rho_zero_reldist = rho_zero_reldist
        self.history_window = history_window
        op = state.operator
        V = state.V
        d = V.shape[1]
        self.d = d
        mats = op.matrices
        kappa = op.kappa
        self.theta_at_points = [op.theta_vec(pt.mu) for pt in state.points]
        self.lambda1_at_points = np.array([pt.lambdas[0] for pt in state.points])
        # products with the basis; everything below is reduced-dimension
        P = [np.asarray(A @ V) for A in mats]
        self.C = [V.conj().T @ P[m] for m in range(kappa)]
        self.C = [0.5 * (Cm + Cm.conj().T) for Cm in self.C]
        # Gram blocks of A(mu)V assembled from pair products
        self.gram_pairs = []
        for a in range(kappa):
            for b in range(a, kappa):
                Q = P[a].conj().T @ P[b]
                if a == b:
                    Q = 0.5 * (Q + Q.conj().T)
                    self.gram_pairs.append((a, b, Q))
                else:
                    self.gram_pairs.append((a, b, Q + Q.conj().T))
        # eigenvector overlaps per stored point
        self.S = [pt.vectors.conj().T @ V for pt in state.points]
        self.D1 = [pt.lambdas - pt.lambdas[0] for pt in state.points]
        self.D2s = [np.sqrt(np.maximum(pt.lambda_next - pt.lambdas, 0.0))
                    for pt in state.points]
        self.term_norms = state.term_norms()
        if state.points:
            self.points_mu = np.array([pt.mu for pt in state.points])
        else:
            self.points_mu = np.zeros((0, op.box.p))
        self.diam = op.box.diameter
        self.lp_seconds = 0.0
        self.lp_calls = 0
        self.lp_fallbacks = 0
        # snapshots for the running maximum over past iterations
        self.snapshots = list(zip(state.point_history, state.dim_history))
        if not self.snapshots:
            self.snapshots = [(state.j, d)]

    # -- reduced-dimension pieces -------------------------------------------

    def operator_norm_estimate(self, theta):
        return float(np.abs(theta) @ self.term_norms)

    def ritz_block(self, mu, dim=None):
        """Smallest Ritz pairs of the projected matrix at mu.

        Returns (W, values): W holds coefficient columns in the basis, so
        the Ritz block in the ambient space is V[:, :dim] @ W.
        """
        theta = self.state.operator.theta_vec(mu)
        return self._ritz(theta, self.d if dim is None else dim)

    def _ritz(self, theta, dim):
        r = min(self.state.ritz_count, dim)
        C = sum(t * Cm[:dim, :dim] for t, Cm in zip(theta, self.C))
        vals, vecs = sla.eigh(C, subset_by_index=(0, r - 1))
        return fix_phase(vecs), np.asarray(vals, dtype=float)

    def rho_squared(self, mu, ritz=None, dim=None):
        theta = self.state.operator.theta_vec(mu)
        dim = self.d if dim is None else dim
        if ritz is None:
            ritz = self._ritz(theta, dim)
        W, vals = ritz
        return self._rho_sq(theta, W, vals, dim, mu)

    def _rho_sq(self, theta, W, vals, dim, mu):
        M2 = None
        for a, b, Q in self.gram_pairs:
            piece = (theta[a] * theta[b]) * Q[:dim, :dim]
            M2 = piece if M2 is None else M2 + piece
        G = W.conj().T @ (M2 @ W)
        G = 0.5 * (G + G.conj().T)
        resid = G - np.diag(vals * vals)
        rho_sq = float(np.max(sla.eigvalsh(resid)))
        nrm = self.operator_norm_estimate(theta)
        if rho_sq < 0.0:
            if rho_sq < -RHO_CLAMP_FACTOR * max(nrm * nrm, TINY_GUARD):
                raise NumericalConsistencyError(
                    f"rho^2 = {rho_sq:.3e} below the clamp window at mu={mu}"
                )
            rho_sq = 0.0
        if self.rho_zero_machine and rho_sq < (2.0**-52) * nrm:
            rho_sq = 0.0
        if self.rho_zero_reldist is not None and len(self.points_mu) and self.diam > 0:
            dist = np.min(np.linalg.norm(self.points_mu - np.asarray(mu, dtype=float),
                                         axis=1))
            if dist / self.diam < self.rho_zero_reldist:
                rho_sq = 0.0
        return rho_sq

    def beta(self, mu, i, ritz=None, dim=None):
        dim = self.d if dim is None else dim
        if ritz is None:
            ritz = self.ritz_block(mu, dim)
        W, _ = ritz
        return self._beta(i, W, dim)

    def _beta(self, i, W, dim):
        pt = self.state.points[i]
        B = self.S[i][:, :dim] @ W
        BBs = B @ B.conj().T
        d2s = self.D2s[i]
        T = d2s[:, None] * BBs * d2s[None, :]
        M = np.diag(self.D1[i]) + T
        if M.shape[0] == 1:
            val = float(M[0, 0].real)
        else:
            val = float(sla.eigvalsh(M)[0])
        scale = 1.0 + abs(pt.lambda_next) + abs(pt.lambdas[0])
        if val < 0.0:
            if val < -BETA_CLAMP_FACTOR * scale:
                raise NumericalConsistencyError(
                    f"beta = {val:.3e} below the clamp window for point {i}"
                )
            val = 0.0
        return val

    # -- constraint LPs ------------------------------------------------------

    def _lp(self, theta, rhs_shift, j_count):
        import time

        if j_count:
            lhs = np.array(self.theta_at_points[:j_count])
            rhs = self.lambda1_at_points[:j_count] + rhs_shift
        else:
            lhs = np.zeros((0, theta.size))
            rhs = np.zeros(0)
        lp = BoxLp(theta, self.state.term_lo, self.state.term_up, lhs, rhs)
        t0 = time.perf_counter()
        result = solve_box_lp(lp)
        self.lp_seconds += time.perf_counter() - t0
        self.lp_calls += 1
        return result

    def eta_star(self, mu, betas=None, dim=None, j_count=None):
        theta = self.state.operator.theta_vec(mu)
        dim = self.d if dim is None else dim
        j_count = self.state.j if j_count is None else j_count
        if betas is None:
            W, _ = self.ritz_block(mu, dim)
            betas = np.array([self._beta(i, W, dim) for i in range(j_count)])
        result = self._lp(theta, np.asarray(betas), j_count)
        if result.status == "infeasible":
            # inflated shifts from eigensolver noise; constraint-only set is
            # always consistent, so fall back to it for this evaluation
            self.lp_fallbacks += 1
            logger.warning("constraint LP infeasible at mu=%s; dropping shifts", mu)
            result = self._lp(theta, np.zeros(j_count), j_count)
        return result.value, result

    def scm_bound(self, mu, j_count=None):
        theta = self.state.operator.theta_vec(mu)
        j_count = self.state.j if j_count is None else j_count
        result = self._lp(theta, np.zeros(j_count), j_count)
        return result.value

    # -- full evaluations ----------------------------------------------------

    def _eval_snapshot(self, mu, theta, j_count, dim, want_scm):
        W, vals = self._ritz(theta, dim)
        lam1 = float(vals[0])
        rho_sq = self._rho_sq(theta, W, vals, dim, mu)
        betas = np.array([self._beta(i, W, dim) for i in range(j_count)])
        result = self._lp(theta, betas, j_count)
        status = result.status
        if status == "infeasible":
            self.lp_fallbacks += 1
            logger.warning("constraint LP infeasible at mu=%s; dropping shifts", mu)
            result = self._lp(theta, np.zeros(j_count), j_count)
        eta = result.value
        lam_lb = f_correction(lam1, eta, rho_sq)
        lam_scm = None
        if want_scm:
            lam_scm = self._lp(theta, np.zeros(j_count), j_count).value
        return lam1, vals, rho_sq, eta, lam_lb, lam_scm, betas, status

    def evaluate(self, mu):
        """Full bound record at one parameter value (current snapshot)."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        theta = self.state.operator.theta_vec(mu)
        mode = self.state.lb_mode
        want_scm = mode in ("scm", "sharper-max")
        lam1, vals, rho_sq, eta, lam_lb, lam_scm, betas, status = self._eval_snapshot(
            mu, theta, self.state.j, self.d, want_scm
        )
        if mode == "scm":
            lb = lam_scm
        elif mode == "sharper-max":
            lb = max(lam_lb, lam_scm)
        elif mode == "running-max":
            lb = lam_lb
            snaps = self.snapshots[:-1]
            if self.history_window is not None:
                snaps = snaps[-self.history_window:]
            for j_k, d_k in snaps:
                past = self._eval_snapshot(mu, theta, j_k, d_k, False)
                lb = max(lb, past[4])
        else:
            lb = lam_lb
        H = lam1 - lb
        denom = abs(lam1)
        H_rel = H / denom if denom > RELATIVE_DENOM_GUARD else math.inf
        return BoundEvaluation(
            mu=mu,
            lambda_ub=lam1,
            ritz_values=vals,
            rho_sq=rho_sq,
            eta=eta,
            lambda_lb=lb,
            lambda_scm=lam_scm,
            H=H,
            H_rel=H_rel,
            betas=betas,
            lp_status=status,
        )

    def upper_bound(self, mu):
        """Smallest Ritz value only (cheap path for online evaluation)."""
        theta = self.state.operator.theta_vec(mu)
        C = sum(t * Cm for t, Cm in zip(theta, self.C))
        return float(sla.eigvalsh(C, subset_by_index=(0, 0))[0])


def box_lower_bound(op, term_lo, term_up, mu):
    """Constraint-free bound: each term contributes its worst box corner."""
    theta = op.theta_vec(mu)
    return float(np.sum(np.minimum(theta * term_lo, theta * term_up)))


def evaluate_bounds(state, mu, **safeguards):
    """One-shot evaluation; builds a fresh snapshot evaluator.

    For repeated evaluations against the same state construct a
    BoundEvaluator once and reuse it.
    """
    if state.j == 0 or state.dim == 0:
        value = box_lower_bound(state.operator, state.term_lo, state.term_up, mu)
        return BoundEvaluation(
            mu=np.atleast_1d(np.asarray(mu, dtype=float)),
            lambda_ub=math.inf,
            ritz_values=np.zeros(0),
            rho_sq=0.0,
            eta=value,
            lambda_lb=value,
            lambda_scm=value,
            H=math.inf,
            H_rel=math.inf,
            betas=np.zeros(0),
        )
    return BoundEvaluator(state, **safeguards).evaluate(mu)

"""Global maximization of Lipschitz objectives over a parameter box.

Branch-and-bound with piecewise-linear Lipschitz upper envelopes: each
axis-aligned box carries the evaluations at its corners and center, its
envelope bound is the tightest cone bound those points give, and the box
with the largest bound is split at the midpoint of its longest edge. With
a true Lipschitz constant the returned certificate dominates the true
maximum; the gap between certificate and incumbent drives termination.

When no constant is supplied one is estimated from observed difference
quotients (scaled by 3) and enlarged on the fly whenever a new evaluation
contradicts the current value, so certificates stay meaningful without
a priori smoothness knowledge (they remain heuristic in that case).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .affine import ParamBox
from .errors import NonFiniteObjectiveError

MAX_CERTIFIED_P = 4
GAMMA_SAFETY = 3.0
GAMMA_PAIRS_PER_DIM = 50
GAMMA_SEED = 727


@dataclass
class OptProblem:
    objective: object  # callable mu -> float, pure over frozen state
    box: ParamBox
    lipschitz_gamma: float = None  # estimated when None
    tol: float = 1e-6
    max_evals: int = 2000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_evals < 2**self.box.p + 1:
            raise ValueError("max_evals must be at least 2^p + 1")
        if self.lipschitz_gamma is not None and self.lipschitz_gamma < 0:
            raise ValueError("lipschitz_gamma must be nonnegative")


@dataclass
class OptOutcome:
    argmax: np.ndarray
    value: float
    upper_certificate: float
    evals_used: int
    terminated_by: str  # "gap" | "budget"
    gamma: float = None


@dataclass
class _Box:
    lo: np.ndarray
    up: np.ndarray
    points: list  # [(mu tuple, f)]
    created: int
    bound: float = math.inf

    def farthest_distance(self, mu):
        span = np.maximum(np.abs(np.asarray(mu) - self.lo),
                          np.abs(np.asarray(mu) - self.up))
        return float(np.linalg.norm(span))

    def recompute_bound(self, gamma):
        self.bound = min(
            f + gamma * self.farthest_distance(mu) for mu, f in self.points
        )


class _Evaluator:
    def __init__(self, objective, budget):
        self.objective = objective
        self.budget = budget
        self.cache = {}
        self.used = 0

    def remaining(self):
        return self.budget - self.used

    def __call__(self, mu):
        key = tuple(float(x) for x in mu)
        if key in self.cache:
            return self.cache[key]
        if self.used >= self.budget:
            raise _BudgetExhausted
        value = float(self.objective(np.asarray(key)))
        self.used += 1
        if not math.isfinite(value):
            raise NonFiniteObjectiveError(
                f"objective returned {value} at mu={list(key)}", mu=np.asarray(key)
            )
        self.cache[key] = value
        return value


class _BudgetExhausted(Exception):
    pass


def _corners(lo, up):
    return [np.array(c) for c in itertools.product(*zip(lo, up))]


def estimate_lipschitz(objective, box, n_pairs=None, rng_seed=GAMMA_SEED,
                       extra_points=None):
    """Heuristic Lipschitz constant from sampled difference quotients.

    Samples ``n_pairs`` random point pairs (default 50 per dimension), takes
    the largest observed quotient and scales it by 3. Points supplied via
    ``extra_points`` (as (mu, value) pairs) contribute their own quotients.
    Returns (gamma, observed_pairs) so evaluations can be reused.
    """
    p = box.p
    n_pairs = GAMMA_PAIRS_PER_DIM * p if n_pairs is None else n_pairs
    rng = np.random.default_rng(rng_seed)
    span = box.upper - box.lower
    best = 0.0
    evaluated = []
    for _ in range(n_pairs):
        a = box.lower + span * rng.random(p)
        b = box.lower + span * rng.random(p)
        dist = float(np.linalg.norm(a - b))
        if dist == 0.0:
            continue
        fa = float(objective(a))
        fb = float(objective(b))
        if not (math.isfinite(fa) and math.isfinite(fb)):
            raise NonFiniteObjectiveError("objective non-finite while sampling")
        evaluated.append((a, fa))
        evaluated.append((b, fb))
        best = max(best, abs(fa - fb) / dist)
    if extra_points:
        pts = list(extra_points)
        for (ma, fa), (mb, fb) in itertools.combinations(pts, 2):
            dist = float(np.linalg.norm(np.asarray(ma) - np.asarray(mb)))
            if dist > 0:
                best = max(best, abs(fa - fb) / dist)
    return GAMMA_SAFETY * best, evaluated


def maximize(problem, known_points=None):
    """Globally maximize the objective over the box with a certificate.

    ``known_points`` is an optional list of (mu, value) evaluations to fold
    into the search (they tighten bounds at no evaluation cost).
    """
    box = problem.box
    p = box.p
    if p > MAX_CERTIFIED_P:
        raise ValueError(
            f"certified search supports up to {MAX_CERTIFIED_P} parameters; "
            "use mesh_maximize for higher dimensions"
        )
    evaluator = _Evaluator(problem.objective, problem.max_evals)
    lo = np.asarray(box.lower, dtype=float)
    up = np.asarray(box.upper, dtype=float)

    root_pts = []
    seen = set()
    for mu in _corners(lo, up) + [0.5 * (lo + up)]:
        key = tuple(float(x) for x in mu)
        if key in seen:
            continue
        seen.add(key)
        root_pts.append((key, evaluator(mu)))

    gamma = problem.lipschitz_gamma
    auto_gamma = gamma is None
    if auto_gamma:
        values = [f for _, f in root_pts]
        if max(values) == min(values):
            # flat on the probe set: treat as constant (certificate exact if
            # the objective truly is constant)
            gamma = 0.0
        else:
            # keep room in the budget for at least a few splits
            room = max(0, (evaluator.remaining() - 4 * 2**p) // 2)
            n_pairs = min(GAMMA_PAIRS_PER_DIM * p, room)
            try:
                gamma, sampled = estimate_lipschitz(
                    evaluator, box, n_pairs=n_pairs, extra_points=root_pts
                )
            except _BudgetExhausted:
                gamma, sampled = estimate_lipschitz(
                    lambda m: evaluator.cache.get(tuple(float(x) for x in m), 0.0),
                    box, n_pairs=0, extra_points=root_pts)
            root_pts = root_pts + [(tuple(float(x) for x in m), f)
                                   for m, f in sampled]

    if known_points:
        for mu, f in known_points:
            key = tuple(float(x) for x in mu)
            evaluator.cache.setdefault(key, float(f))
            root_pts.append((key, float(f)))

    best_mu, best_val = max(root_pts, key=lambda item: (item[1], tuple(-c for c in item[0])))
    counter = itertools.count()
    root = _Box(lo, up, root_pts, next(counter))
    root.recompute_bound(gamma)
    heap = [(-root.bound, root.created, root)]
    boxes = {root.created: root}

    def bump_gamma(new_gamma):
        nonlocal gamma, heap
        gamma = new_gamma
        for bx in boxes.values():
            bx.recompute_bound(gamma)
        heap = [(-bx.bound, bx.created, bx) for bx in boxes.values()]
        heapq.heapify(heap)

    terminated_by = "budget"
    while True:
        while heap:
            neg_bound, created, top = heap[0]
            if created not in boxes or -neg_bound != top.bound:
                heapq.heappop(heap)  # stale entry
                continue
            break
        if not heap:
            terminated_by = "gap"
            break
        global_bound = -heap[0][0]
        if global_bound - best_val <= problem.tol:
            terminated_by = "gap"
            break
        if evaluator.remaining() < 2 ** (p - 1) + 2:
            break
        _, _, parent = heapq.heappop(heap)
        del boxes[parent.created]
        axis = int(np.argmax(parent.up - parent.lo))
        if parent.up[axis] - parent.lo[axis] <= 1e-15 * max(1.0, abs(parent.up[axis])):
            continue  # box collapsed to a point; its bound cannot improve
        mid = 0.5 * (parent.lo[axis] + parent.up[axis])
        children = []
        for side in (0, 1):
            clo = parent.lo.copy()
            cup = parent.up.copy()
            if side == 0:
                cup[axis] = mid
            else:
                clo[axis] = mid
            pts = [(mu, f) for mu, f in parent.points
                   if clo[axis] - 1e-300 <= mu[axis] <= cup[axis] + 1e-300]
            children.append(_Box(clo, cup, pts, next(counter)))
        try:
            for child in children:
                wanted = _corners(child.lo, child.up) + [0.5 * (child.lo + child.up)]
                have = {mu for mu, _ in child.points}
                for mu in wanted:
                    key = tuple(float(x) for x in mu)
                    if key in have:
                        continue
                    val = evaluator(mu)
                    child.points.append((key, val))
                    have.add(key)
                    if val > best_val or (val == best_val and key < tuple(best_mu)):
                        best_mu, best_val = key, val
        except _BudgetExhausted:
            for child in children:
                if child.points:
                    child.recompute_bound(gamma)
                    boxes[child.created] = child
                    heapq.heappush(heap, (-child.bound, child.created, child))
            break
        if auto_gamma:
            observed = 0.0
            for child in children:
                for (ma, fa), (mb, fb) in itertools.combinations(child.points, 2):
                    dist = math.dist(ma, mb)
                    if dist > 0:
                        observed = max(observed, abs(fa - fb) / dist)
            if observed > gamma:
                for child in children:
                    child.recompute_bound(gamma)
                    boxes[child.created] = child
                bump_gamma(GAMMA_SAFETY * observed)
                continue
        for child in children:
            child.recompute_bound(gamma)
            boxes[child.created] = child
            heapq.heappush(heap, (-child.bound, child.created, child))

    certificate = max((bx.bound for bx in boxes.values()), default=best_val)
    certificate = max(certificate, best_val)
    # objectives are pure over frozen state, so the cached value is exactly
    # objective(argmax)
    return OptOutcome(
        argmax=np.asarray(best_mu),
        value=evaluator.cache[tuple(best_mu)],
        upper_certificate=certificate,
        evals_used=evaluator.used,
        terminated_by=terminated_by,
        gamma=gamma,
    )


def chebyshev_points(lo, up, count):
    """Chebyshev-distributed points on [lo, up], ascending."""
    k = np.arange(1, count + 1)
    nodes = np.cos((2 * k - 1) * np.pi / (2 * count))
    return np.sort(0.5 * (lo + up) + 0.5 * (up - lo) * nodes)


def mesh_maximize(objective, box, points_per_dim):
    """Maximize over a Chebyshev tensor mesh (no certificate).

    Ties resolve to the lexicographically smallest mesh point; the mesh is
    enumerated in lexicographic order with strict improvement.
    """
    if points_per_dim < 2:
        raise ValueError("points_per_dim must be at least 2")
    axes = [chebyshev_points(lo, up, points_per_dim)
            for lo, up in zip(box.lower, box.upper)]
    best_mu = None
    best_val = -math.inf
    used = 0
    for mu in itertools.product(*axes):
        val = float(objective(np.asarray(mu)))
        used += 1
        if not math.isfinite(val):
            raise NonFiniteObjectiveError(f"objective non-finite at mu={mu}",
                                          mu=np.asarray(mu))
        if val > best_val:
            best_mu, best_val = mu, val
    return OptOutcome(
        argmax=np.asarray(best_mu),
        value=best_val,
        upper_certificate=math.inf,
        evals_used=used,
        terminated_by="budget",
        gamma=None,
    )

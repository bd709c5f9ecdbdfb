"""Parameter-dependent matrices in affine form.

An operator is a sum ``theta_1(mu) A_1 + ... + theta_kappa(mu) A_kappa``
with scalar coefficient expressions over a compact parameter box and
fixed term matrices (dense arrays or CSR). Operators are immutable after
construction; every evaluation method is read-only and safe to call from
multiple threads.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import theta as th
from .errors import (
    DegenerateThetaError,
    DimensionMismatchError,
    NonOrthonormalBasisError,
)

HERMITIAN_INGEST_TOL = 1e-12
ORTHONORMAL_TOL = 1e-10
BOX_MEMBERSHIP_SLACK = 1e-12


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned compact parameter domain."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise DimensionMismatchError("box bounds must be equal-length vectors")
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise ValueError("box bounds must be finite")
        if np.any(lower > upper):
            raise ValueError("box lower bounds exceed upper bounds")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def p(self):
        return self.lower.size

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, mu, slack=BOX_MEMBERSHIP_SLACK):
        mu = np.asarray(mu, dtype=float)
        tol = slack * np.maximum(1.0, np.maximum(np.abs(self.lower), np.abs(self.upper)))
        return bool(np.all(mu >= self.lower - tol) and np.all(mu <= self.upper + tol))

    def clip(self, mu):
        return np.minimum(np.maximum(np.asarray(mu, dtype=float), self.lower), self.upper)

    def uniform_grid(self, per_dim):
        """Tensor grid with ``per_dim`` points per direction, row per point."""
        axes = [np.linspace(lo, up, per_dim) for lo, up in zip(self.lower, self.upper)]
        return np.array(list(itertools.product(*axes)))


@dataclass(frozen=True)
class TermMatrix:
    """One constant matrix of the affine sum."""

    matrix: object  # ndarray or csr_matrix
    hermitian: bool

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def is_sparse(self):
        return sp.issparse(self.matrix)


def _hermitian_defect(A):
    if sp.issparse(A):
        diff = (A - A.conj().T).tocoo()
        defect = np.max(np.abs(diff.data)) if diff.nnz else 0.0
        fro = sp.linalg.norm(A, "fro")
    else:
        defect = float(np.max(np.abs(A - A.conj().T))) if A.size else 0.0
        fro = float(np.linalg.norm(A, "fro"))
    return defect, fro


def term_matrix(A, require_hermitian=False):
    """Ingest a term matrix, detecting and verifying Hermitian structure."""
    if sp.issparse(A):
        A = A.tocsr()
    else:
        A = np.asarray(A)
        if A.ndim != 2:
            raise DimensionMismatchError("term matrix must be 2-D")
        if not np.iscomplexobj(A):
            A = A.astype(float, copy=True)
        else:
            A = A.astype(complex, copy=True)
        A.flags.writeable = False
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"term matrix must be square, got {A.shape}")
    defect, fro = _hermitian_defect(A)
    hermitian = defect <= HERMITIAN_INGEST_TOL * max(fro, 1e-300)
    if require_hermitian and not hermitian:
        raise ValueError(
            f"matrix is not Hermitian: defect {defect:.3e} > "
            f"{HERMITIAN_INGEST_TOL:.0e} * {fro:.3e}"
        )
    return TermMatrix(A, hermitian)


_VALIDATION_PTS_PER_DIM = {1: 17, 2: 9, 3: 5, 4: 5}


@dataclass(frozen=True)
class AffineOperator:
    """Affine-parametric matrix with parsed coefficient expressions."""

    terms: tuple  # of (expression tree, TermMatrix)
    box: ParamBox
    theta_texts: tuple = field(default=None)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("operator needs at least one term")
        terms = tuple((expr, tm) for expr, tm in self.terms)
        n = terms[0][1].n
        for _, tm in terms:
            if tm.n != n:
                raise DimensionMismatchError("term matrices differ in dimension")
        object.__setattr__(self, "terms", terms)
        texts = self.theta_texts
        if texts is None:
            texts = tuple(th.to_text(expr) for expr, _ in terms)
        object.__setattr__(self, "theta_texts", tuple(texts))
        self._validate_thetas()

    def _validate_thetas(self):
        per_dim = _VALIDATION_PTS_PER_DIM.get(self.box.p, 3)
        mesh = self.box.uniform_grid(per_dim)
        for m, (expr, _) in enumerate(self.terms):
            for mu in mesh:
                value = th.evaluate(expr, mu)
                if not math.isfinite(value):
                    raise DegenerateThetaError(
                        f"coefficient {m + 1} is non-finite at mu={mu.tolist()}"
                    )

    @property
    def n(self):
        return self.terms[0][1].n

    @property
    def kappa(self):
        return len(self.terms)

    @property
    def p(self):
        return self.box.p

    @property
    def is_hermitian(self):
        return all(tm.hermitian for _, tm in self.terms)

    @property
    def is_sparse(self):
        return any(tm.is_sparse for _, tm in self.terms)

    @property
    def matrices(self):
        return [tm.matrix for _, tm in self.terms]

    def theta_vec(self, mu, check_box=True):
        """Coefficient vector theta(mu); raises outside the box."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu.shape != (self.box.p,):
            raise DimensionMismatchError(
                f"expected point of dimension {self.box.p}, got shape {mu.shape}"
            )
        if check_box and not self.box.contains(mu):
            raise ValueError(f"mu={mu.tolist()} outside the parameter box")
        vals = np.array([th.evaluate(expr, mu) for expr, _ in self.terms])
        if not np.all(np.isfinite(vals)):
            raise DegenerateThetaError(f"non-finite coefficient at mu={mu.tolist()}")
        return vals

    def assemble(self, mu, dense=False):
        """A(mu) as a single matrix (sparse stays sparse unless dense=True)."""
        vals = self.theta_vec(mu)
        acc = None
        for v, (_, tm) in zip(vals, self.terms):
            piece = tm.matrix * v
            acc = piece if acc is None else acc + piece
        if dense and sp.issparse(acc):
            acc = acc.toarray()
        return acc

    def apply(self, mu, x):
        """Matrix-vector (or matrix-block) product A(mu) @ x."""
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise DimensionMismatchError(
                f"operand has leading dimension {x.shape[0]}, expected {self.n}"
            )
        vals = self.theta_vec(mu)
        out = None
        for v, (_, tm) in zip(vals, self.terms):
            piece = v * (tm.matrix @ x)
            out = piece if out is None else out + piece
        return out

    def project(self, V):
        """Compress onto the span of orthonormal columns V: terms V* A_m V."""
        V = np.asarray(V)
        if V.ndim != 2 or V.shape[0] != self.n:
            raise DimensionMismatchError("basis must be n x d")
        gram_defect = np.linalg.norm(V.conj().T @ V - np.eye(V.shape[1]))
        if gram_defect > ORTHONORMAL_TOL:
            raise NonOrthonormalBasisError(
                f"basis Gram defect {gram_defect:.3e} exceeds {ORTHONORMAL_TOL:.0e}"
            )
        new_terms = []
        for expr, tm in self.terms:
            C = V.conj().T @ (tm.matrix @ V)
            if tm.hermitian:
                C = 0.5 * (C + C.conj().T)
            C = np.ascontiguousarray(C)
            C.flags.writeable = False
            new_terms.append((expr, TermMatrix(C, tm.hermitian)))
        return AffineOperator(tuple(new_terms), self.box, self.theta_texts)

    def with_box(self, box):
        return AffineOperator(self.terms, box, self.theta_texts)


def operator_from_texts(theta_texts, matrices, box, require_hermitian=False):
    """Build an operator from expression strings and raw matrices."""
    if len(theta_texts) != len(matrices):
        raise DimensionMismatchError("one coefficient expression per matrix required")
    box = box if isinstance(box, ParamBox) else ParamBox(*box)
    terms = tuple(
        (th.parse_theta(text, box.p), term_matrix(A, require_hermitian))
        for text, A in zip(theta_texts, matrices)
    )
    return AffineOperator(terms, box, tuple(theta_texts))


def squared_operator(op, memory_budget_bytes=4 << 30):
    """Affine expansion of A(mu)* A(mu).

    Produces kappa*(kappa+1)/2 Hermitian terms with coefficients
    theta_a*theta_b; cross terms are symmetrized as
    A_a* A_b + A_b* A_a. Terms whose matrix vanishes are dropped.
    """
    import warnings

    mats = op.matrices
    kappa = op.kappa
    n = op.n
    if not op.is_sparse:
        est = kappa * (kappa + 1) // 2 * n * n * 16
        if est > memory_budget_bytes:
            warnings.warn(
                f"squared expansion needs about {est / 2**30:.1f} GiB of dense storage",
                RuntimeWarning,
                stacklevel=2,
            )
    exprs = [expr for expr, _ in op.terms]
    texts = op.theta_texts
    new_terms = []
    new_texts = []
    for a in range(kappa):
        for b in range(a, kappa):
            if a == b:
                M = mats[a].conj().T @ mats[a]
                expr = th.Square(exprs[a])
                text = f"square({texts[a]})"
            else:
                P = mats[a].conj().T @ mats[b]
                M = P + P.conj().T
                expr = th.Mul(exprs[a], exprs[b])
                text = f"({texts[a]})*({texts[b]})"
            if sp.issparse(M):
                if M.nnz == 0 or np.max(np.abs(M.data)) == 0.0:
                    continue
                M = M.tocsr()
            else:
                if not np.any(M):
                    continue
                M = 0.5 * (M + M.conj().T)
                if not np.iscomplexobj(M) or np.max(np.abs(M.imag)) == 0.0:
                    M = np.ascontiguousarray(M.real)
                M.flags.writeable = False
            new_terms.append((expr, TermMatrix(M, True)))
            new_texts.append(text)
    return AffineOperator(tuple(new_terms), op.box, tuple(new_texts))

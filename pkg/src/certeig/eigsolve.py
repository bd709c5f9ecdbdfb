"""Eigenvalue, singular-value and basis-extension kernels.

Dense problems go straight to LAPACK. Large sparse Hermitian problems use
shift-invert Lanczos with a single factorization at a Gershgorin shift
placed outside the spectrum. All routines apply a fixed eigenvector phase
convention (entry of largest modulus made real and positive) so repeated
runs produce identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatchError,
    NonOrthonormalBasisError,
    SolverFailureError,
)

DENSE_N_CUTOFF = 1000
DENSE_DENSITY_CUTOFF = 0.2
TOL_EIG_DENSE = 1e-10
TOL_EIG_ITER = 1e-8
ORTH_DROP_TOL = 1e-8
ORTH_GRAM_TOL = 1e-10


@dataclass
class EigPairs:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # orthonormal columns


@dataclass
class SvdTriplets:
    values: np.ndarray  # ascending, nonnegative
    left: np.ndarray
    right: np.ndarray


def fix_phase(vectors):
    """Make the largest-modulus entry of each column real and positive."""
    vectors = np.array(vectors, copy=True)
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    factors = np.empty(vectors.shape[1], dtype=vectors.dtype)
    for k in range(vectors.shape[1]):
        pivot = vectors[idx[k], k]
        mod = abs(pivot)
        factors[k] = 1.0 if mod == 0.0 else np.conj(pivot) / mod
    return vectors * factors


def _prefer_dense(A):
    n = A.shape[0]
    if not sp.issparse(A):
        return True
    if n <= DENSE_N_CUTOFF:
        return True
    return A.nnz / (n * n) > DENSE_DENSITY_CUTOFF


def _spectral_norm_estimate(A):
    if sp.issparse(A):
        return spla.norm(A, np.inf)
    return float(np.linalg.norm(A, np.inf))


def _check_hermitian_dense(A):
    scale = max(float(np.max(np.abs(A))), 1e-300)
    defect = float(np.max(np.abs(A - A.conj().T)))
    if defect > 1e-10 * scale:
        raise ValueError(f"matrix not Hermitian: defect {defect:.3e}")


def gershgorin_bounds(A):
    """Interval [lo, up] containing all eigenvalues of a Hermitian matrix."""
    if sp.issparse(A):
        diag = A.diagonal()
        absrow = np.asarray(abs(A).sum(axis=1)).ravel()
    else:
        diag = np.diagonal(A)
        absrow = np.abs(A).sum(axis=1)
    radii = absrow - np.abs(diag)
    lo = float(np.min(diag.real - radii))
    up = float(np.max(diag.real + radii))
    return lo, up


def _deterministic_v0(n):
    # fixed start vector keeps Lanczos runs reproducible
    v = np.cos(np.arange(1, n + 1, dtype=float))
    return v / np.linalg.norm(v)


class ShiftInvertSolver:
    """Shift-invert Lanczos wrapper holding one LU factorization.

    The shift sits strictly below the spectrum (Gershgorin), so the
    eigenvalues of A nearest the shift are exactly the smallest ones.
    """

    def __init__(self, A, sigma=None):
        if not sp.issparse(A):
            raise DimensionMismatchError("shift-invert path expects a sparse matrix")
        self.A = A.tocsc()
        self.n = A.shape[0]
        if sigma is None:
            lo, up = gershgorin_bounds(A)
            sigma = lo - 0.01 * max(1.0, up - lo)
        self.sigma = sigma
        shifted = self.A - sigma * sp.identity(self.n, dtype=self.A.dtype, format="csc")
        self._lu = spla.splu(shifted.tocsc())

    def nearest(self, q):
        op_inv = spla.LinearOperator(
            (self.n, self.n), matvec=self._lu.solve, dtype=self.A.dtype
        )
        try:
            vals, vecs = spla.eigsh(
                self.A,
                k=q,
                sigma=self.sigma,
                which="LM",
                OPinv=op_inv,
                v0=_deterministic_v0(self.n),
                maxiter=2000,
            )
        except spla.ArpackNoConvergence as exc:
            raise SolverFailureError(
                f"shift-invert Lanczos failed for k={q}", best_residual=None
            ) from exc
        order = np.argsort(vals)
        return vals[order], vecs[:, order]


def smallest_eigs(A, q, tol=None):
    """q smallest eigenpairs of a Hermitian matrix, ascending."""
    n = A.shape[0]
    if q > n:
        raise DimensionMismatchError(f"requested {q} pairs from dimension {n}")
    dense = _prefer_dense(A)
    if tol is None:
        tol = TOL_EIG_DENSE if dense else TOL_EIG_ITER
    if dense:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        _check_hermitian_dense(Ad)
        vals, vecs = sla.eigh(Ad, subset_by_index=(0, q - 1))
    else:
        vals, vecs = ShiftInvertSolver(A).nearest(q)
    vecs = fix_phase(vecs)
    nrm = _spectral_norm_estimate(A)
    resid = _max_eig_residual(A, vals, vecs)
    if resid > tol * max(nrm, 1e-300):
        raise SolverFailureError(
            f"eigen residual {resid:.3e} above {tol:.0e} * norm", best_residual=resid
        )
    return EigPairs(np.asarray(vals, dtype=float), vecs)


def _max_eig_residual(A, vals, vecs):
    R = A @ vecs - vecs * vals
    return float(np.max(np.linalg.norm(R, axis=0))) if R.size else 0.0


def extreme_eigs(A, tol=None):
    """(lambda_min, lambda_max) of a Hermitian matrix."""
    n = A.shape[0]
    if _prefer_dense(A):
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        _check_hermitian_dense(Ad)
        vals = sla.eigvalsh(Ad)
        return float(vals[0]), float(vals[-1])
    lo, up = gershgorin_bounds(A)
    if up == lo and _spectral_norm_estimate(A) == 0.0:
        return 0.0, 0.0
    span = max(1.0, up - lo)
    vmin = ShiftInvertSolver(A, sigma=lo - 0.01 * span).nearest(1)[0][0]
    vmax = ShiftInvertSolver(A, sigma=up + 0.01 * span).nearest(1)[0][0]
    return float(vmin), float(vmax)


DENSE_SVD_CUTOFF = 2000


def smallest_svds(A, q, tol=None):
    """q smallest singular triplets, ascending, with consistent phases."""
    nrows, ncols = A.shape
    if q > min(nrows, ncols):
        raise DimensionMismatchError(f"requested {q} triplets from shape {A.shape}")
    dense = not sp.issparse(A) or max(nrows, ncols) <= DENSE_SVD_CUTOFF
    if tol is None:
        tol = TOL_EIG_DENSE if dense else TOL_EIG_ITER
    if dense:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        U, s, Vh = sla.svd(Ad, full_matrices=False)
        order = np.argsort(s)[:q]
        s = s[order]
        U = U[:, order]
        V = Vh.conj().T[:, order]
    else:
        s, U, V = _sparse_smallest_svds(A, q)
    # phase fixed through the right vectors; left vectors carry the same factor
    idx = np.argmax(np.abs(V), axis=0)
    for k in range(V.shape[1]):
        pivot = V[idx[k], k]
        mod = abs(pivot)
        if mod > 0:
            factor = np.conj(pivot) / mod
            V[:, k] = V[:, k] * factor
            U[:, k] = U[:, k] * factor
    nrm = _spectral_norm_estimate(A)
    r1 = A @ V - U * s
    r2 = A.conj().T @ U - V * s
    resid = max(
        float(np.max(np.linalg.norm(r1, axis=0))) if r1.size else 0.0,
        float(np.max(np.linalg.norm(r2, axis=0))) if r2.size else 0.0,
    )
    if resid > tol * max(nrm, 1e-300):
        raise SolverFailureError(
            f"SVD residual {resid:.3e} above {tol:.0e} * norm", best_residual=resid
        )
    return SvdTriplets(np.asarray(s, dtype=float), U, V)


def _sparse_smallest_svds(A, q):
    """Smallest triplets of a large sparse matrix via the augmented form.

    Shift-invert on [[0, A], [A*, 0]] just below zero targets +/-sigma_min
    pairs; positive eigenvalues give the triplets.
    """
    nrows, ncols = A.shape
    aug = sp.bmat([[None, A], [A.conj().T, None]], format="csc")
    scale = max(_spectral_norm_estimate(A), 1e-300)
    solver = ShiftInvertSolver(aug, sigma=-1e-8 * scale)
    vals, vecs = solver.nearest(2 * q)
    pos = np.where(vals >= -1e-12 * scale)[0]
    if pos.size < q:
        raise SolverFailureError("augmented solve returned too few nonnegative values")
    take = pos[np.argsort(vals[pos])][:q]
    s = np.abs(vals[take])
    U = vecs[:nrows, take]
    V = vecs[nrows:, take]
    for k in range(q):
        nu = np.linalg.norm(U[:, k])
        nv = np.linalg.norm(V[:, k])
        if nu == 0 or nv == 0:
            raise SolverFailureError("degenerate augmented eigenvector")
        U[:, k] /= nu
        V[:, k] /= nv
    return s, U, V


def orth_extend(V, W, drop_tol=ORTH_DROP_TOL, check=True):
    """Extend an orthonormal basis with new columns.

    The first columns of the result are exactly ``V``; new columns are
    orthogonalized with two Gram-Schmidt passes and dropped when their
    remaining norm falls below ``drop_tol`` times the original norm.
    """
    W = np.asarray(W)
    if W.ndim == 1:
        W = W[:, None]
    if V is None or V.size == 0:
        n = W.shape[0]
        dtype = np.result_type(W.dtype, float)
        V = np.zeros((n, 0), dtype=dtype)
    else:
        V = np.asarray(V)
    if W.shape[0] != V.shape[0]:
        raise DimensionMismatchError("basis and extension row counts differ")
    if check and V.shape[1]:
        defect = np.linalg.norm(V.conj().T @ V - np.eye(V.shape[1]))
        if defect > ORTH_GRAM_TOL:
            raise NonOrthonormalBasisError(
                f"basis Gram defect {defect:.3e} exceeds {ORTH_GRAM_TOL:.0e}"
            )
    dtype = np.result_type(V.dtype, W.dtype, float)
    cols = [np.ascontiguousarray(V[:, k], dtype=dtype) for k in range(V.shape[1])]
    for j in range(W.shape[1]):
        w = np.ascontiguousarray(W[:, j], dtype=dtype)
        norm0 = np.linalg.norm(w)
        if norm0 == 0.0:
            continue
        for _ in range(2):  # twice is enough
            for q in cols:
                w = w - q * np.vdot(q, w)
        nrm = np.linalg.norm(w)
        if nrm < drop_tol * norm0:
            continue
        cols.append(w / nrm)
    if not cols:
        return np.zeros((V.shape[0], 0), dtype=dtype)
    return np.column_stack(cols)

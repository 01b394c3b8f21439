"""Sparse triplet assembly and deterministic direct solves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AccuracyError, InvalidArgumentError, SingularSystemError

DENSE_CUTOFF = 500


class SparseSystem:
    """n x n real system collected as triplets, with duplicates summed."""

    def __init__(self, n):
        if n < 0:
            raise InvalidArgumentError("dimension must be nonnegative")
        self.n = n
        self.rows = []
        self.cols = []
        self.vals = []
        self.b = np.zeros(n)

    def add(self, i, j, v):
        self.rows.append(i)
        self.cols.append(j)
        self.vals.append(v)

    def add_block(self, row_ids, col_ids, block):
        """Scatter a dense block; negative indices mark dropped DOFs."""
        block = np.asarray(block, dtype=float)
        for a, i in enumerate(row_ids):
            if i < 0:
                continue
            for b, j in enumerate(col_ids):
                if j < 0:
                    continue
                self.rows.append(i)
                self.cols.append(j)
                self.vals.append(block[a, b])

    def add_rhs(self, row_ids, vec):
        for a, i in enumerate(row_ids):
            if i >= 0:
                self.b[i] += vec[a]

    def tocsr(self):
        mat = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(self.n, self.n))
        return mat.tocsr()

    def toarray(self):
        return self.tocsr().toarray()

    def symmetry_defect(self):
        """max |A - A^T| entry relative to max |A|."""
        a = self.tocsr()
        scale = abs(a).max() if a.nnz else 0.0
        if scale == 0.0:
            return 0.0
        return abs(a - a.T).max() / scale


@dataclass
class SolveReport:
    x: np.ndarray
    relative_residual: float
    pivot_ok: bool = True
    used_dense: bool = field(default=False, repr=False)


def solve_direct(system, tol=1e-11):
    """Direct solve with a residual check; dense below the size cutoff.

    Raises SingularSystemError when the factorization breaks down and
    AccuracyError when the relative residual stays above `tol`.
    """
    n = system.n
    if n == 0:
        return SolveReport(x=np.zeros(0), relative_residual=0.0)
    b = system.b
    if not np.all(np.isfinite(b)):
        raise InvalidArgumentError("right-hand side contains non-finite entries")
    a = system.tocsr()
    if not np.all(np.isfinite(a.data)):
        raise InvalidArgumentError("matrix contains non-finite entries")

    bscale = max(float(np.linalg.norm(b)), np.finfo(float).tiny)
    if n < DENSE_CUTOFF:
        dense = a.toarray()
        try:
            x = np.linalg.solve(dense, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"dense factorization failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("dense solve produced non-finite values")
        # one refinement step keeps residuals near machine precision
        x = x + np.linalg.solve(dense, b - dense @ x)
        res = float(np.linalg.norm(dense @ x - b)) / bscale
        if res > tol:
            cond = np.linalg.cond(dense)
            if not np.isfinite(cond) or cond > 1e14:
                raise SingularSystemError(
                    f"system singular to working precision (cond ~ {cond:.2e})")
            raise AccuracyError(f"relative residual {res:.3e} exceeds tol {tol:.1e}")
        return SolveReport(x=x, relative_residual=res, used_dense=True)

    try:
        lu = spla.splu(a.tocsc())
        x = lu.solve(b)
        x = x + lu.solve(b - a @ x)
    except RuntimeError as exc:
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("sparse solve produced non-finite values")
    res = float(np.linalg.norm(a @ x - b)) / bscale
    if res > tol:
        raise AccuracyError(f"relative residual {res:.3e} exceeds tol {tol:.1e}")
    return SolveReport(x=x, relative_residual=res)

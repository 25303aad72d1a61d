"""Reusable solvers for the sparse SPD systems of the time steppers."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky as _cholmod
except ImportError:  # optional; SuperLU in symmetric mode stands in
    _cholmod = None

DEFAULT_TOL = 1e-12
DIRECT_MAX_DIM = 20_000
METHODS = ("auto", "cholesky", "cg")


class NotSpdError(ValueError):
    """The matrix handed to the solver is not symmetric positive definite."""


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class SpdSolver:
    """A factorization or preconditioner built once and reused for many right-hand sides.

    ``cholesky`` uses CHOLMOD when scikit-sparse is installed.  Otherwise it
    runs SuperLU in symmetric mode with a symmetric fill-reducing ordering and
    no pivoting, so the factorization is LDL^T-equivalent and a non-positive
    pivot exposes an indefinite matrix.  ``cg`` is conjugate
    gradients with a Jacobi preconditioner.
    """

    def __init__(self, matrix, method: str = "auto", tol: float = DEFAULT_TOL,
                 maxiter: int | None = None):
        if method not in METHODS:
            raise ValueError(f"unknown solver method {method!r}; expected one of {METHODS}")
        if not 0 < tol < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        A = sp.csr_matrix(matrix, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise NotSpdError("matrix is not square")
        n = A.shape[0]
        if method == "auto":
            method = "cg" if n > DIRECT_MAX_DIM else "cholesky"
        self.matrix = A
        self.method = method
        self.tol = tol
        self.maxiter = maxiter if maxiter is not None else max(5 * n, 100)
        self.last_iterations = 0

        asym = abs(A - A.T).max() if n else 0.0
        scale = abs(A).max() if n else 1.0
        if asym > 1e-13 * scale:
            raise NotSpdError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise NotSpdError("matrix has non-positive diagonal entries")

        self.backend = None
        if method == "cholesky" and _cholmod is not None:
            self.backend = "cholmod"
            try:
                self._factor = _cholmod(A.tocsc(), mode="supernodal")
            except CholmodNotPositiveDefiniteError as exc:
                raise NotSpdError(f"Cholesky breakdown: {exc}") from None
        elif method == "cholesky":
            self.backend = "superlu"
            self._lu = spla.splu(
                A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            if not np.array_equal(self._lu.perm_r, self._lu.perm_c):
                raise NotSpdError("factorization needed off-diagonal pivoting")
            pivots = self._lu.U.diagonal()
            if np.any(pivots <= 0) or not np.all(np.isfinite(pivots)):
                raise NotSpdError("Cholesky breakdown: non-positive pivot")
        else:
            inv_diag = 1.0 / diag
            self._precond = spla.LinearOperator((n, n), matvec=lambda r: inv_diag * r, dtype=float)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.dim,):
            raise ValueError(f"right-hand side has shape {b.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(b)):
            raise ValueError("right-hand side is not finite")
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        if self.backend == "cholmod":
            return self._factor(b)
        if self.backend == "superlu":
            return self._lu.solve(b)

        count = [0]

        def _count(_):
            count[0] += 1

        x, info = spla.cg(self.matrix, b, x0=x0, rtol=self.tol, atol=0.0,
                          maxiter=self.maxiter, M=self._precond, callback=_count)
        self.last_iterations = count[0]
        if info != 0:
            res = np.linalg.norm(self.matrix @ x - b) / bnorm
            raise SolverError(f"CG did not converge in {self.maxiter} iterations", res)
        return x


def prepare(matrix, method: str = "auto", tol: float = DEFAULT_TOL,
            maxiter: int | None = None) -> SpdSolver:
    return SpdSolver(matrix, method=method, tol=tol, maxiter=maxiter)


def solve(ctx: SpdSolver, b: np.ndarray) -> np.ndarray:
    return ctx.solve(b)

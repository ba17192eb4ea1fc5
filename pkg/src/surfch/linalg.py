"""Compressed-row sparse matrices and Jacobi-preconditioned Krylov solvers."""

from __future__ import annotations

import numpy as np
from scipy import sparse


class DimensionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Krylov iteration failed; ``residual`` is the last relative residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class SparseMatrix:
    """Finalized CSR matrix.

    Column indices are sorted within each row, duplicates are summed and
    explicit zeros removed.  Instances are treated as immutable.
    """

    def __init__(self, csr: sparse.csr_array):
        csr = sparse.csr_array(csr, dtype=float)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.setflags(write=False)
        self._csr = csr

    @classmethod
    def from_triplets(cls, rows, cols, values, shape) -> "SparseMatrix":
        return cls(sparse.coo_array((np.ravel(values), (np.ravel(rows), np.ravel(cols))), shape=shape).tocsr())

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        return cls(sparse.csr_array(np.asarray(dense, dtype=float)))

    @classmethod
    def diagonal_matrix(cls, diag) -> "SparseMatrix":
        return cls(sparse.diags_array(np.asarray(diag, dtype=float)).tocsr())

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.diagonal_matrix(np.ones(n))

    @property
    def shape(self):
        return self._csr.shape

    @property
    def indptr(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def data(self) -> np.ndarray:
        return self._csr.data

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def to_scipy(self) -> sparse.csr_array:
        return self._csr

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self._csr.T.tocsr())

    T = property(transpose)

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix(self._csr @ other._csr)
        return spmv(self, other)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix(self._csr + other._csr)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix(self._csr - other._csr)

    def __mul__(self, scalar: float) -> "SparseMatrix":
        return SparseMatrix(self._csr * float(scalar))

    __rmul__ = __mul__

    def scale_rows(self, d) -> "SparseMatrix":
        return SparseMatrix(sparse.diags_array(np.asarray(d, dtype=float)) @ self._csr)

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def spmv(A: SparseMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.shape[1]:
        raise DimensionError(f"cannot multiply {A.shape} matrix by vector of length {x.shape[0]}")
    return A._csr @ x


class DeflationSpace:
    """Orthonormal set of vectors projected out of a Krylov solve."""

    def __init__(self, vectors):
        V = np.atleast_2d(np.asarray(vectors, dtype=float))
        if V.shape[0] > V.shape[1]:
            raise ValueError("more deflation vectors than unknowns")
        q, r = np.linalg.qr(V.T)
        if np.min(np.abs(np.diag(r))) < 1e-12 * np.max(np.abs(np.diag(r))):
            raise ValueError("deflation vectors are linearly dependent")
        self.basis = q.T  # rows are orthonormal

    @classmethod
    def constants(cls, n: int) -> "DeflationSpace":
        return cls(np.ones(n))

    def project(self, x: np.ndarray) -> np.ndarray:
        """Orthogonal projection onto the complement of the space."""
        return x - self.basis.T @ (self.basis @ x)


def _safe_inverse_diagonal(A: SparseMatrix) -> np.ndarray:
    d = A.diagonal()
    inv = np.ones_like(d)
    nz = d != 0
    inv[nz] = 1.0 / d[nz]
    return inv


def cg_solve(A: SparseMatrix, b, tol: float = 1e-10, maxit: int = 1000,
             deflation: DeflationSpace | None = None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients on a symmetric semidefinite system.

    With a deflation space the iteration runs on the projected system
    ``P A P x = P b`` and the returned ``x`` is orthogonal to the space.
    Raises :class:`ConvergenceError` if ``||P(b - A x)|| > tol ||P b||`` after
    ``maxit`` iterations.
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise DimensionError(f"incompatible shapes {A.shape} and {b.shape}")
    P = deflation.project if deflation is not None else (lambda v: v)
    dinv = _safe_inverse_diagonal(A)
    raw_norm = np.linalg.norm(b)
    b = P(b)
    bnorm = np.linalg.norm(b)
    # right-hand side lies in the deflation space up to rounding
    if bnorm <= 1e-14 * raw_norm or bnorm == 0.0:
        return np.zeros(n)
    x = np.zeros(n) if x0 is None else P(np.asarray(x0, dtype=float).copy())
    r = b - P(A @ x)
    z = P(dinv * r)
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol:
        if it >= maxit:
            raise ConvergenceError("CG did not converge", res, it)
        Ap = P(A @ p)
        pAp = p @ Ap
        if pAp <= 0:
            raise ConvergenceError("CG breakdown: operator not positive on search direction", res, it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        # recompute the true residual periodically to avoid drift
        if it % 50 == 0:
            r = b - P(A @ x)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            r = b - P(A @ x)
            res = np.linalg.norm(r) / bnorm
            if res <= tol:
                break
        z = P(dinv * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    x = P(x)
    true_res = np.linalg.norm(b - P(A @ x)) / bnorm
    assert true_res <= tol * (1 + 1e-6), f"CG exit residual {true_res:.3e} violates tolerance {tol:.1e}"
    return x


def bicgstab_solve(A: SparseMatrix, b, tol: float = 1e-10, maxit: int = 1000,
                   diag_precond: bool = True, x0=None) -> np.ndarray:
    """Right-preconditioned BiCGStab.

    Raises :class:`ConvergenceError` on breakdown or if the relative residual
    is still above ``tol`` after ``maxit`` iterations.
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise DimensionError(f"incompatible shapes {A.shape} and {b.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    dinv = _safe_inverse_diagonal(A) if diag_precond else np.ones(n)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    tiny = np.finfo(float).tiny
    for it in range(1, maxit + 1):
        rho_new = r_hat @ r
        if abs(rho_new) < tiny:
            raise ConvergenceError("BiCGStab breakdown (rho = 0)", res, it)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        phat = dinv * p
        v = A @ phat
        denom = r_hat @ v
        if abs(denom) < tiny:
            raise ConvergenceError("BiCGStab breakdown (r_hat . v = 0)", res, it)
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x += alpha * phat
            res = np.linalg.norm(b - A @ x) / bnorm
            if res <= tol:
                return x
            r = b - A @ x
            continue
        shat = dinv * s
        t = A @ shat
        tt = t @ t
        if tt < tiny:
            raise ConvergenceError("BiCGStab breakdown (t = 0)", res, it)
        omega = (t @ s) / tt
        x += alpha * phat + omega * shat
        r = s - omega * t
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            res = np.linalg.norm(b - A @ x) / bnorm
            if res <= tol:
                return x
            r = b - A @ x
        if omega == 0.0:
            raise ConvergenceError("BiCGStab breakdown (omega = 0)", res, it)
    raise ConvergenceError("BiCGStab did not converge", res, maxit)

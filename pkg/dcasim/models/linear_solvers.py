"""
Module for the linear solvers of the tangent systems: Jacobi preconditioned CG, deflated CG over a rigid-body cluster
subspace, and a sparse direct solver for small reduced systems.
"""
import logging

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import splu

from dcasim.globals import *
from dcasim.exceptions import ConvergenceError, DeflationError
from dcasim.models.base_models import BaseLinearSolver

logger = logging.getLogger(__name__)


def _jacobi_diagonal(matrix: sparse.spmatrix) -> np.ndarray:
    diagonal = matrix.diagonal()
    if np.any(diagonal <= 0.0):
        raise ConvergenceError("Jacobi preconditioner requires a positive diagonal",
                               {"min_diagonal": float(diagonal.min())})
    return diagonal


class JacobiPcgSolver(BaseLinearSolver):
    """
    Conjugate gradient solver with the diagonal (Jacobi) preconditioner.

    Attributes:
        tol (float): relative residual tolerance |f - K u| <= tol |f|.
        max_iter (int | None): iteration cap, CG_ITER_FACTOR times the system size when None.
        last_iterations (int): iterations of the last solve.
    """
    SOLVER_NAME = "pcg"

    def __init__(self, tol: float = TOL_CG, max_iter: int | None = None):
        self.tol = tol
        self.max_iter = max_iter
        self.last_iterations = 0

    def solve(self, matrix: sparse.spmatrix, rhs: np.ndarray, x0: np.ndarray) -> tuple[np.ndarray, int]:
        diagonal = _jacobi_diagonal(matrix)
        max_iter = self.max_iter or CG_ITER_FACTOR * rhs.size
        threshold = self.tol * np.linalg.norm(rhs)
        if threshold == 0.0:
            return np.zeros_like(rhs, dtype=float), 0

        x = np.array(x0, dtype=float)
        r = rhs - matrix @ x
        z = r / diagonal
        p = z.copy()
        rz = r @ z
        k = 0
        while np.linalg.norm(r) > threshold:
            if k >= max_iter:
                raise ConvergenceError(f"PCG did not converge in {max_iter} iterations",
                                       {CG_ITER_STR: k, RESIDUAL_STR: float(np.linalg.norm(r))})
            kp = matrix @ p
            alpha = rz / (p @ kp)
            x += alpha * p
            r -= alpha * kp
            z = r / diagonal
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            k += 1

        self.last_iterations = k
        logger.debug(f"PCG converged in {k} iterations")
        return x, k


class DeflatedCgSolver(BaseLinearSolver):
    """
    Jacobi preconditioned CG accelerated by deflation of a coarse subspace spanned by the columns of W, typically the
    rigid body modes of node clusters.

    The coarse matrix E = W^T K W is factorized once per operator and reused for the coarse corrections Q v =
    W E^-1 W^T v. The iterate starts from x0 + Q r0 so that W^T r = 0, and search directions are kept K-orthogonal to
    the coarse space through p = P^T z + beta p with P^T = I - Q K.

    Attributes:
        basis (sparse.csr_matrix): deflation basis restricted to the free DOFs, shape (n_free, n_coarse).
        tol (float): relative residual tolerance.
        max_iter (int | None): iteration cap, CG_ITER_FACTOR times the system size when None.
        _matrix (sparse.spmatrix | None): operator of the cached factorization.
        _k_basis (sparse.csr_matrix | None): K W of the cached operator.
        _coarse_factor (tuple | None): Cholesky factor of E.
    """
    SOLVER_NAME = "dcg"

    def __init__(self, basis: sparse.spmatrix, tol: float = TOL_CG, max_iter: int | None = None):
        self.basis = sparse.csr_matrix(basis)
        self.tol = tol
        self.max_iter = max_iter
        self.last_iterations = 0
        self._matrix = None
        self._k_basis = None
        self._coarse_factor = None

    def set_operator(self, matrix: sparse.spmatrix):
        """Refreshes the coarse factorization for a new system matrix."""
        if matrix.shape[0] != self.basis.shape[0]:
            raise ValueError(f"Deflation basis has {self.basis.shape[0]} rows, matrix has {matrix.shape[0]}")
        k_basis = sparse.csr_matrix(matrix @ self.basis)
        coarse = (self.basis.T @ k_basis).toarray()
        coarse = 0.5 * (coarse + coarse.T)
        try:
            self._coarse_factor = linalg.cho_factor(coarse)
        except linalg.LinAlgError as exc:
            raise DeflationError("Deflation coarse matrix is singular; the cluster basis is rank deficient",
                                 {"coarse_size": coarse.shape[0]}) from exc
        self._matrix = matrix
        self._k_basis = k_basis

    def _coarse_solve(self, coarse_rhs: np.ndarray) -> np.ndarray:
        return self.basis @ linalg.cho_solve(self._coarse_factor, coarse_rhs)

    def solve(self, matrix: sparse.spmatrix, rhs: np.ndarray, x0: np.ndarray) -> tuple[np.ndarray, int]:
        if matrix is not self._matrix:
            self.set_operator(matrix)
        diagonal = _jacobi_diagonal(matrix)
        max_iter = self.max_iter or CG_ITER_FACTOR * rhs.size
        threshold = self.tol * np.linalg.norm(rhs)
        if threshold == 0.0:
            return np.zeros_like(rhs, dtype=float), 0

        x = np.array(x0, dtype=float)
        x += self._coarse_solve(self.basis.T @ (rhs - matrix @ x))
        r = rhs - matrix @ x
        z = r / diagonal
        # P^T z = z - W E^-1 (K W)^T z
        p = z - self._coarse_solve(self._k_basis.T @ z)
        rz = r @ z
        k = 0
        while np.linalg.norm(r) > threshold:
            if k >= max_iter:
                raise ConvergenceError(f"Deflated CG did not converge in {max_iter} iterations",
                                       {CG_ITER_STR: k, RESIDUAL_STR: float(np.linalg.norm(r))})
            kp = matrix @ p
            alpha = rz / (p @ kp)
            x += alpha * p
            r -= alpha * kp
            z = r / diagonal
            rz_new = r @ z
            # standard deflated recurrence: the projected preconditioned residual plus beta times the old direction
            p = z - self._coarse_solve(self._k_basis.T @ z) + (rz_new / rz) * p
            rz = rz_new
            k += 1

        self.last_iterations = k
        logger.debug(f"Deflated CG converged in {k} iterations")
        return x, k


class DirectSolver(BaseLinearSolver):
    """Sparse LU solver for the small systems of the reduced order micro model."""
    SOLVER_NAME = "direct"

    def solve(self, matrix: sparse.spmatrix, rhs: np.ndarray, x0: np.ndarray) -> tuple[np.ndarray, int]:
        try:
            factor = splu(sparse.csc_matrix(matrix))
        except RuntimeError as exc:
            raise ConvergenceError(f"Direct factorization failed: {exc}", {"size": matrix.shape[0]}) from exc
        return factor.solve(np.asarray(rhs, dtype=float)), 1

import pytest

import numpy as np
from scipy import sparse

from dcasim.globals import *
from dcasim.clustering import kmeans
from dcasim.exceptions import ConvergenceError, DeflationError
from dcasim.fem_core import GlobalAssembler
from dcasim.macro_solver import build_deflation_basis
from dcasim.material import elastic_tensor
from dcasim.mesh import DofMap
from dcasim.models.linear_solvers import DeflatedCgSolver, DirectSolver, JacobiPcgSolver


@pytest.fixture
def clamped_box_system(box_mesh, elastic_constants):
    """Free-free elastic stiffness block of the clamped unit cube, a right-hand side and the matching DOF map."""
    dof_map = DofMap(box_mesh.n_nodes)
    dof_map.constrain(dof_map.node_dofs(box_mesh.get_node_set("xmin")), 0.0)
    tangents = np.broadcast_to(elastic_tensor(elastic_constants), (box_mesh.n_elements, 6, 6)).copy()
    matrix = GlobalAssembler(box_mesh).assemble(tangents)
    free = dof_map.free_dofs
    rhs = np.random.default_rng(4).normal(size=free.size)
    return matrix[free][:, free].tocsr(), rhs, dof_map


class TestJacobiPcgSolver:

    def test_matches_direct_solution(self, clamped_box_system):
        matrix, rhs, _ = clamped_box_system

        x, iterations = JacobiPcgSolver(tol=1e-12).solve(matrix, rhs, np.zeros(rhs.size))

        np.testing.assert_allclose(x, DirectSolver().solve(matrix, rhs, None)[0], rtol=1e-8, atol=1e-12)
        assert 0 < iterations <= CG_ITER_FACTOR * rhs.size

    def test_zero_rhs_returns_zero_without_iterating(self, clamped_box_system):
        matrix, rhs, _ = clamped_box_system

        x, iterations = JacobiPcgSolver().solve(matrix, np.zeros(rhs.size), np.ones(rhs.size))

        assert iterations == 0
        assert not x.any()

    def test_iteration_cap_raises(self, clamped_box_system):
        matrix, rhs, _ = clamped_box_system

        with pytest.raises(ConvergenceError, match="did not converge") as exc_info:
            JacobiPcgSolver(tol=1e-12, max_iter=1).solve(matrix, rhs, np.zeros(rhs.size))

        assert exc_info.value.diagnostics[CG_ITER_STR] == 1

    def test_non_positive_diagonal_raises(self):
        matrix = sparse.diags([1.0, 0.0, 2.0]).tocsr()

        with pytest.raises(ConvergenceError, match="positive diagonal"):
            JacobiPcgSolver().solve(matrix, np.ones(3), np.zeros(3))


class TestDeflatedCgSolver:

    def test_matches_direct_solution(self, box_mesh, clamped_box_system):
        matrix, rhs, dof_map = clamped_box_system
        basis = build_deflation_basis(box_mesh, kmeans(box_mesh.nodes, 4, seed=0), dof_map)

        x, _ = DeflatedCgSolver(basis.free_matrix, tol=1e-12).solve(matrix, rhs, np.zeros(rhs.size))

        np.testing.assert_allclose(x, DirectSolver().solve(matrix, rhs, None)[0], rtol=1e-8, atol=1e-12)

    def test_operator_is_cached_between_solves(self, box_mesh, clamped_box_system):
        matrix, rhs, dof_map = clamped_box_system
        solver = DeflatedCgSolver(build_deflation_basis(box_mesh, kmeans(box_mesh.nodes, 2), dof_map).free_matrix)

        solver.solve(matrix, rhs, np.zeros(rhs.size))
        factor = solver._coarse_factor
        solver.solve(matrix, 2.0 * rhs, np.zeros(rhs.size))

        assert solver._coarse_factor is factor

    def test_rank_deficient_basis_raises(self, box_mesh, clamped_box_system):
        matrix, rhs, dof_map = clamped_box_system
        w = build_deflation_basis(box_mesh, kmeans(box_mesh.nodes, 2), dof_map).free_matrix
        deficient = sparse.hstack([w, sparse.csr_matrix((w.shape[0], 1))]).tocsr()

        with pytest.raises(DeflationError, match="singular"):
            DeflatedCgSolver(deficient).solve(matrix, rhs, np.zeros(rhs.size))

    def test_basis_rows_must_match_the_operator(self, box_mesh, clamped_box_system):
        matrix, _, _ = clamped_box_system
        basis = build_deflation_basis(box_mesh, kmeans(box_mesh.nodes, 2))

        with pytest.raises(ValueError, match="rows"):
            DeflatedCgSolver(basis.matrix).set_operator(matrix)


class TestDirectSolver:

    def test_singular_matrix_raises_convergence_error(self):
        matrix = sparse.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))

        with pytest.raises(ConvergenceError, match="Direct factorization failed"):
            DirectSolver().solve(matrix, np.ones(2), np.zeros(2))

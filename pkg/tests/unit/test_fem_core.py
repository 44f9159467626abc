import pytest

import numpy as np
from scipy import sparse

from dcasim.globals import *
from dcasim.exceptions import BoundaryConditionError, ConvergenceError, MeshError
from dcasim.fem_core import GlobalAssembler, SolutionHistory, StepResult, assemble_global, changed_elements, \
    element_gradients, element_stiffness, internal_force, newton_solve
from dcasim.general_functions import strain_to_voigt, sym
from dcasim.material import elastic_tensor
from dcasim.mesh import DofMap, Mesh
from dcasim.models.base_models import BaseLinearSolver
from dcasim.models.linear_solvers import DirectSolver
from dcasim.models.material_models import J2MaterialModel


class FailingSolver(BaseLinearSolver):
    """Direct solver that fails its first `failures` solves."""
    SOLVER_NAME = "failing"

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0

    def solve(self, matrix, rhs, x0):
        self.calls += 1
        if self.calls <= self.failures:
            raise ConvergenceError("injected failure")
        return DirectSolver().solve(matrix, rhs, x0)


def tension_dof_map(mesh: Mesh, stretch: float = 0.01) -> DofMap:
    """Clamped xmin face and an x-displacement of the xmax face."""
    dof_map = DofMap(mesh.n_nodes)
    dof_map.constrain(dof_map.node_dofs(mesh.get_node_set("xmin")), 0.0)
    dof_map.constrain(dof_map.node_dofs(mesh.get_node_set("xmax"), [0]), stretch)
    return dof_map


def elastic_tangents(mesh: Mesh, elastic) -> np.ndarray:
    return np.broadcast_to(elastic_tensor(elastic), (mesh.n_elements, 6, 6)).copy()


class TestElementOperators:

    def test_unit_tet_gradients(self):
        nodes = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

        grads, volumes = element_gradients(nodes, np.array([[0, 1, 2, 3]]))

        np.testing.assert_allclose(grads[0], [[-1, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]], atol=1e-14)
        np.testing.assert_allclose(volumes, [1.0 / 6.0])

    def test_degenerate_element_raises(self):
        nodes = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])

        with pytest.raises(MeshError, match="degenerate"):
            element_gradients(nodes, np.array([[0, 1, 2, 3]]))

    def test_element_stiffness_is_symmetric_with_rigid_null_space(self, box_mesh, elastic_constants):
        k_e = element_stiffness(box_mesh, 0, elastic_tensor(elastic_constants))

        np.testing.assert_allclose(k_e, k_e.T, atol=1e-9)
        eigenvalues = np.linalg.eigvalsh(k_e)
        assert np.sum(np.abs(eigenvalues) < 1e-8 * eigenvalues.max()) == 6

    def test_changed_elements(self):
        old = np.stack([np.eye(6), np.eye(6)])
        new = old.copy()
        new[1, 0, 0] = 0.5

        np.testing.assert_array_equal(changed_elements(None, new), [0, 1])
        np.testing.assert_array_equal(changed_elements(old, new), [1])


class TestGlobalAssembler:

    def test_linear_fields_give_constant_strains(self, box_mesh):
        gradient = np.array([[1e-3, 2e-3, 0.0], [-1e-3, 5e-4, 3e-3], [0.0, 1e-3, -2e-3]])
        u = (box_mesh.nodes @ gradient.T).ravel()
        assembler = GlobalAssembler(box_mesh)

        np.testing.assert_allclose(assembler.displacement_gradients(u),
                                   np.broadcast_to(gradient, (box_mesh.n_elements, 3, 3)), atol=1e-15)
        np.testing.assert_allclose(assembler.strains(u),
                                   np.broadcast_to(strain_to_voigt(sym(gradient)), (box_mesh.n_elements, 6)),
                                   atol=1e-15)

    def test_stiffness_is_symmetric_and_annihilates_rigid_motions(self, box_mesh, elastic_constants):
        matrix = GlobalAssembler(box_mesh).assemble(elastic_tangents(box_mesh, elastic_constants))
        rotation = np.array([[0.0, -0.3, 0.2], [0.3, 0.0, -0.1], [-0.2, 0.1, 0.0]])
        rigid = (np.array([0.1, -0.2, 0.3]) + (box_mesh.nodes - box_mesh.center) @ rotation.T).ravel()

        assert abs(matrix - matrix.T).max() < 1e-9 * abs(matrix).max()
        assert np.linalg.norm(matrix @ rigid) < 1e-10 * abs(matrix).max() * np.linalg.norm(rigid)

    def test_internal_force_equals_stiffness_times_displacement_when_elastic(self, box_mesh, elastic_constants):
        assembler = GlobalAssembler(box_mesh)
        u = np.random.default_rng(1).normal(scale=1e-3, size=box_mesh.n_dofs)

        stresses = assembler.strains(u) @ elastic_tensor(elastic_constants)
        matrix = assembler.assemble(elastic_tangents(box_mesh, elastic_constants))

        np.testing.assert_allclose(assembler.internal_force(stresses), matrix @ u, atol=1e-8)

    def test_repeated_assembly_is_bit_identical(self, box_mesh, elastic_constants):
        assembler = GlobalAssembler(box_mesh)
        tangents = elastic_tangents(box_mesh, elastic_constants)

        first, second = assembler.assemble(tangents), assembler.assemble(tangents)

        np.testing.assert_array_equal(first.data, second.data)
        assert first.nnz == assembler.nnz

    def test_wrong_tangent_shape_raises(self, box_mesh):
        with pytest.raises(ValueError, match="tangents of shape"):
            GlobalAssembler(box_mesh).assemble(np.zeros((3, 6, 6)))

    def test_stiffness_tracks_changed_elements(self, box_mesh, elastic_constants):
        assembler = GlobalAssembler(box_mesh)
        tangents = elastic_tangents(box_mesh, elastic_constants)
        assembler.stiffness(tangents)
        tangents[:12] *= 0.5

        assembler.stiffness(tangents)

        assert assembler.yielded_fraction == pytest.approx(12 / 48)

    def test_assemble_global_eliminates_constrained_dofs(self, box_mesh, elastic_constants):
        dof_map = tension_dof_map(box_mesh)

        free_block = assemble_global(box_mesh, elastic_tangents(box_mesh, elastic_constants), dof_map)

        assert free_block.shape == (dof_map.free_dofs.size, dof_map.free_dofs.size)
        assert sparse.isspmatrix_csr(free_block)

    def test_internal_force_checks_the_displacement_length(self, box_mesh, elastic_constants, elastic_hardening):
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening)

        with pytest.raises(ValueError, match="displacement vector"):
            internal_force(box_mesh, np.zeros(5), model)


class TestNewtonSolve:

    def test_elastic_solution_matches_a_direct_linear_solve(self, box_mesh, elastic_constants, elastic_hardening):
        dof_map = tension_dof_map(box_mesh)
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening)

        history = newton_solve(box_mesh, dof_map, [1.0], DirectSolver(), model, tol_newton=1e-10)

        matrix = GlobalAssembler(box_mesh).assemble(elastic_tangents(box_mesh, elastic_constants)).tocsr()
        free, fixed = dof_map.free_dofs, dof_map.constrained_dofs
        expected = np.zeros(box_mesh.n_dofs)
        expected[fixed] = dof_map.constrained_values
        expected[free] = DirectSolver().solve(matrix[free][:, free], -(matrix[free][:, fixed] @ expected[fixed]),
                                              np.zeros(free.size))[0]
        assert history.final.newton_iterations == 1
        np.testing.assert_allclose(history.final.displacement, expected, atol=1e-12)

    def test_reaction_balances_between_faces(self, box_mesh, elastic_constants, elastic_hardening):
        dof_map = tension_dof_map(box_mesh)
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening)

        final = newton_solve(box_mesh, dof_map, [1.0], DirectSolver(), model, tol_newton=1e-10).final

        pulled = dof_map.node_dofs(box_mesh.get_node_set("xmax"), [0]).ravel()
        clamped = dof_map.node_dofs(box_mesh.get_node_set("xmin"), [0]).ravel()
        assert final.reaction(pulled) > 0.0
        assert final.reaction(pulled) == pytest.approx(-final.reaction(clamped), rel=1e-8)

    def test_plastic_solution_converges_and_commits(self, box_mesh, elastic_constants, isotropic_hardening):
        dof_map = tension_dof_map(box_mesh, stretch=0.01)
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, isotropic_hardening)

        history = newton_solve(box_mesh, dof_map, [0.25, 0.5, 0.75, 1.0], DirectSolver(), model, tol_newton=1e-8)

        assert [result.step for result in history.steps] == [1, 2, 3, 4]
        assert model.state.eq_plastic_strain.max() > 0.0
        for result in history.steps:
            assert result.residual_norms[-1] <= max(1e-8 * np.linalg.norm(result.internal_force), TOL_NEWTON_ABS)

    def test_failed_step_is_bisected(self, box_mesh, elastic_constants, elastic_hardening):
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening)
        on_step = []

        history = newton_solve(box_mesh, tension_dof_map(box_mesh), [1.0], FailingSolver(failures=1), model,
                               on_step=on_step.append)

        assert [result.load_factor for result in history.steps] == [0.5, 1.0]
        assert [result.step for result in on_step] == [1, 2]

    def test_exhausted_bisections_raise_with_diagnostics(self, box_mesh, elastic_constants, elastic_hardening):
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening)

        with pytest.raises(ConvergenceError) as exc_info:
            newton_solve(box_mesh, tension_dof_map(box_mesh), [1.0], FailingSolver(failures=10), model,
                         max_bisections=0)

        assert exc_info.value.diagnostics[STEP_STR] == 1
        assert exc_info.value.diagnostics[LOAD_FACTOR_STR] == 1.0

    def test_failed_steps_leave_the_material_uncommitted(self, box_mesh, elastic_constants, isotropic_hardening):
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, isotropic_hardening)

        with pytest.raises(ConvergenceError):
            newton_solve(box_mesh, tension_dof_map(box_mesh), [1.0], DirectSolver(), model, max_newton_iters=1,
                         max_bisections=0)

        assert not model.state.eq_plastic_strain.any()

    def test_load_factors_must_increase(self, box_mesh, elastic_constants, elastic_hardening):
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening)

        with pytest.raises(ValueError, match="increase"):
            newton_solve(box_mesh, tension_dof_map(box_mesh), [0.5, 0.5], DirectSolver(), model)

    def test_dof_map_must_match_the_mesh(self, box_mesh, elastic_constants, elastic_hardening):
        model = J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening)

        with pytest.raises(BoundaryConditionError):
            newton_solve(box_mesh, DofMap(3), [1.0], DirectSolver(), model)

    def test_resumed_solve_continues_numbering(self, box_mesh, elastic_constants, elastic_hardening):
        dof_map = tension_dof_map(box_mesh)
        first = newton_solve(box_mesh, dof_map, [0.5], DirectSolver(),
                             J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening))

        resumed = newton_solve(box_mesh, dof_map, [1.0], DirectSolver(),
                               J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening),
                               initial_displacement=first.final.displacement, start_factor=0.5, start_step=1)
        full = newton_solve(box_mesh, dof_map, [1.0], DirectSolver(),
                            J2MaterialModel(box_mesh.n_elements, elastic_constants, elastic_hardening))

        assert resumed.final.step == 2
        np.testing.assert_allclose(resumed.final.displacement, full.final.displacement, atol=1e-9)


class TestSolutionHistory:

    def test_convergence_frame_has_one_row_per_newton_iteration(self):
        steps = [
            StepResult(step=1, load_factor=0.5, displacement=np.zeros(3), internal_force=np.zeros(3),
                       stresses=np.zeros((1, 6)), residual_norms=[1.0, 0.1, 1e-5], cg_iterations=[12, 9],
                       yielded_fractions=[1.0, 0.25]),
            StepResult(step=2, load_factor=1.0, displacement=np.zeros(3), internal_force=np.array([1.0, 2.0, 3.0]),
                       stresses=np.zeros((1, 6)), residual_norms=[1.0, 1e-6], cg_iterations=[7],
                       yielded_fractions=[0.5]),
        ]

        frame = SolutionHistory(steps).convergence_frame()

        assert len(frame) == 3
        assert list(frame.columns) == [STEP_STR, LOAD_FACTOR_STR, NEWTON_ITER_STR, CG_ITER_STR, RESIDUAL_STR,
                                       YIELDED_FRAC_STR]
        assert frame[CG_ITER_STR].tolist() == [12, 9, 7]
        assert steps[1].reaction([0, 2]) == 4.0
        assert SolutionHistory(steps).final.step == 2

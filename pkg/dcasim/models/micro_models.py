"""
Module for RVE models attached to macroscale integration points: the full-field FE reference and the cluster based
reduced order model.
"""
import logging

import numpy as np

from dcasim.globals import *
from dcasim.fem_core import GlobalAssembler, newton_solve
from dcasim.homogenization import PrescribedDofs, apply_uniform_bc, average_stress_volume, condensation_probes, \
    condensed_tangent, hill_mandel_residual
from dcasim.material import ElasticConstants, HardeningCurve, von_mises
from dcasim.mesh import DofMap, Mesh, rve_boundary_nodes
from dcasim.micro_rom import ClusterState, ReducedOrderModel, cluster_von_mises, micro_solve
from dcasim.general_functions import voigt_to_stress
from dcasim.models.base_models import BaseMicroModel, MicroResponse
from dcasim.models.linear_solvers import DirectSolver
from dcasim.models.material_models import J2MaterialModel

logger = logging.getLogger(__name__)


class FullFieldMicroModel(BaseMicroModel):
    """
    RVE solved on its full FE mesh under uniform boundary displacements, the reference for the reduced model.

    Attributes:
        mesh (Mesh): RVE mesh.
        material (J2MaterialModel): element material states.
        boundary (np.ndarray): nodes carrying the uniform boundary displacements.
        prescribed (PrescribedDofs): prescribed boundary DOFs for the condensation.
        tol (float): Newton tolerance.
        max_iters (int): Newton iteration cap.
        _displacement (np.ndarray): committed displacement vector.
        _trial (tuple | None): displacement and material snapshot of the last solve.
    """
    MODEL_NAME = MICRO_FULL_FIELD_STR

    def __init__(self, mesh: Mesh, elastic: ElasticConstants, hardening: HardeningCurve, tol: float = TOL_NEWTON,
                 max_iters: int = MAX_NEWTON_ITERS, max_bisections: int = MAX_BISECTIONS):
        self.mesh = mesh
        self.material = J2MaterialModel(mesh.n_elements, elastic, hardening)
        self.assembler = GlobalAssembler(mesh)
        self.boundary = rve_boundary_nodes(mesh)
        self.prescribed = PrescribedDofs.for_nodes(mesh, self.boundary)
        self.tol = tol
        self.max_iters = max_iters
        self.max_bisections = max_bisections
        self._displacement = np.zeros(mesh.n_dofs)
        self._trial = None

    @property
    def displacement(self) -> np.ndarray:
        return self._displacement

    @property
    def rve_mesh(self) -> Mesh:
        return self.mesh

    def solve(self, deformation_gradient: np.ndarray, commit: bool = False) -> MicroResponse:
        target = apply_uniform_bc(self.mesh, deformation_gradient, self.boundary)
        increment = DofMap(self.mesh.n_nodes)
        increment.constrain(target.constrained_dofs,
                            target.constrained_values - self._displacement[target.constrained_dofs])

        committed = self.material.snapshot()
        try:
            history = newton_solve(self.mesh, increment, [1.0], DirectSolver(), self.material,
                                   assembler=self.assembler, tol_newton=self.tol, max_newton_iters=self.max_iters,
                                   max_bisections=self.max_bisections, initial_displacement=self._displacement)
        except Exception:
            self.material.restore(committed)
            raise
        result = history.final
        self._trial = (result.displacement.copy(), self.material.snapshot())
        self.material.restore(committed)

        stiffness = self.assembler.assemble(result.tangents)
        probes = condensation_probes(stiffness, self.prescribed)
        stress = average_stress_volume(self.mesh, result.stresses)
        response = MicroResponse(
            stress=stress,
            tangent=condensed_tangent(stiffness, self.prescribed, probes),
            fields={DISPLACEMENT_FIELD_STR: result.displacement.reshape(-1, 3),
                    VON_MISES_STR: von_mises(voigt_to_stress(result.stresses))},
            iterations=sum(step.newton_iterations for step in history.steps),
            hill_mandel_residual=hill_mandel_residual(result.internal_force, probes, stress, self.prescribed.volume))
        if commit:
            self.commit()
        return response

    def commit(self):
        if self._trial is None:
            return
        self._displacement, snapshot = self._trial
        self.material.restore(snapshot)
        self._trial = None

    def state_dict(self) -> dict:
        return {DISPLACEMENT_FIELD_STR: self._displacement.tolist(), "material": self.material.state_dict()}

    def load_state_dict(self, state: dict):
        self._displacement = np.asarray(state[DISPLACEMENT_FIELD_STR], dtype=float)
        self.material.load_state_dict(state["material"])
        self._trial = None


class ClusterRomMicroModel(BaseMicroModel):
    """
    RVE solved by the cluster based reduced order model. The offline `ReducedOrderModel` may be shared between
    instances; every instance holds its own cluster state.

    Attributes:
        rom (ReducedOrderModel): offline reduced model.
        state (ClusterState): committed cluster state.
        tol (float): reduced Newton tolerance.
        max_iters (int): reduced Newton iteration cap.
        last_solution (MicroSolution | None): solution of the last solve.
    """
    MODEL_NAME = MICRO_ROM_STR

    def __init__(self, rom: ReducedOrderModel, tol: float = TOL_NEWTON, max_iters: int = MAX_NEWTON_ITERS):
        self.rom = rom
        self.state = rom.virgin_state()
        self.tol = tol
        self.max_iters = max_iters
        self.last_solution = None

    @property
    def rve_mesh(self) -> Mesh:
        return self.rom.mesh

    def solve(self, deformation_gradient: np.ndarray, commit: bool = False) -> MicroResponse:
        solution = micro_solve(self.rom, deformation_gradient, self.state, tol=self.tol, max_iters=self.max_iters)
        self.last_solution = solution
        response = MicroResponse(
            stress=solution.stress, tangent=solution.tangent,
            fields={DISPLACEMENT_FIELD_STR: solution.displacement,
                    VON_MISES_STR: self.rom.nodal_field(cluster_von_mises(solution)),
                    EQ_PLASTIC_STRAIN_STR: self.rom.nodal_field(
                        self.rom.cluster_average(solution.state.material.eq_plastic_strain)),
                    CLUSTER_STR: self.rom.partition.assignment.copy()},
            iterations=solution.iterations, hill_mandel_residual=solution.hill_mandel_residual)
        if commit:
            self.commit()
        return response

    def commit(self):
        if self.last_solution is None:
            return
        self.state = self.last_solution.state
        self.last_solution = None

    def state_dict(self) -> dict:
        return {"cluster_state": self.state.to_dict()}

    def load_state_dict(self, state: dict):
        self.state = ClusterState.from_dict(state["cluster_state"])
        self.last_solution = None

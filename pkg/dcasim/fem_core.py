"""
Module for linear tetrahedron kinematics, sparse global assembly, internal force evaluation and the Newton driver
shared by the direct numerical simulation and the accelerated macroscale solver.
"""
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
import pandas as pd
from scipy import sparse

from dcasim.globals import *
from dcasim.exceptions import BoundaryConditionError, ConvergenceError, MeshError
from dcasim.mesh import DofMap, Mesh

if TYPE_CHECKING:
    from dcasim.models.base_models import BaseConstitutiveModel, BaseLinearSolver

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElementOperator:
    """Constant strain-displacement matrix of one element.

    Attributes:
        b (np.ndarray): 6x12 matrix mapping nodal displacements to Voigt engineering strains.
        volume (float): element volume.
    """
    b: np.ndarray
    volume: float


def element_gradients(nodes: np.ndarray, tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shape function gradients and volumes of linear tetrahedra.

    Args:
        nodes (np.ndarray): node coordinates of shape (n_nodes, 3).
        tets (np.ndarray): connectivity of shape (n_elements, 4).

    Returns:
        tuple[np.ndarray, np.ndarray]: gradients of shape (n_elements, 4, 3) and signed volumes (n_elements,).
    """
    coords = nodes[tets]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    det = np.linalg.det(edges)
    if np.any(np.abs(det) < 6.0 * DEGENERATE_VOLUME_TOL):
        bad = int(np.argmax(np.abs(det) < 6.0 * DEGENERATE_VOLUME_TOL))
        raise MeshError(f"Element {bad} is degenerate (volume {det[bad] / 6.0:.3e})")

    inverse = np.linalg.inv(edges)
    # rows of inv(edges).T are the gradients of the barycentric coordinates 1-3
    grads_123 = np.swapaxes(inverse, 1, 2)
    grads = np.concatenate([-grads_123.sum(axis=1, keepdims=True), grads_123], axis=1)
    return grads, det / 6.0


def strain_displacement_matrices(grads: np.ndarray) -> np.ndarray:
    """Builds the 6x12 B matrices from shape function gradients of shape (n_elements, 4, 3)."""
    n_el = grads.shape[0]
    b = np.zeros((n_el, 6, 12))
    bx, by, bz = grads[..., 0], grads[..., 1], grads[..., 2]
    ux, uy, uz = np.arange(0, 12, 3), np.arange(1, 12, 3), np.arange(2, 12, 3)
    b[:, 0, ux] = bx
    b[:, 1, uy] = by
    b[:, 2, uz] = bz
    b[:, 3, uy] = bz
    b[:, 3, uz] = by
    b[:, 4, ux] = bz
    b[:, 4, uz] = bx
    b[:, 5, ux] = by
    b[:, 5, uy] = bx
    return b


def element_operator(mesh: Mesh, e: int) -> ElementOperator:
    grads, volumes = element_gradients(mesh.nodes, mesh.tets[e:e + 1])
    return ElementOperator(b=strain_displacement_matrices(grads)[0], volume=float(volumes[0]))


def element_stiffness(mesh: Mesh, e: int, tangent: np.ndarray) -> np.ndarray:
    """Stiffness V B^T C B of element `e` for the Voigt tangent `tangent`."""
    op = element_operator(mesh, e)
    return op.volume * op.b.T @ np.asarray(tangent, dtype=float) @ op.b


def element_dofs(tets: np.ndarray) -> np.ndarray:
    """Global DOF indices of every element in node-major order, shape (n_elements, 12)."""
    return (3 * tets[:, :, None] + np.arange(3)).reshape(tets.shape[0], 12)


def changed_elements(old_tangents: np.ndarray | None, new_tangents: np.ndarray,
                     tol: float = YIELD_CHANGE_TOL) -> np.ndarray:
    """Indices of elements whose tangent changed by more than `tol` in relative Frobenius norm."""
    if old_tangents is None:
        return np.arange(new_tangents.shape[0])
    diff = np.linalg.norm(new_tangents - old_tangents, axis=(1, 2))
    scale = np.linalg.norm(old_tangents, axis=(1, 2))
    return np.flatnonzero(diff > tol * scale)


class GlobalAssembler:
    """
    Assembles global stiffness matrices and internal force vectors of a fixed mesh. The CSR pattern and the scatter map
    from element entries to value slots are built once; values are accumulated with `np.bincount`, so repeated
    assembly with the same inputs is bit-identical.

    Attributes:
        _mesh (Mesh): the mesh.
        _grads (np.ndarray): shape function gradients (n_elements, 4, 3).
        _b (np.ndarray): strain-displacement matrices (n_elements, 6, 12).
        _volumes (np.ndarray): element volumes.
        _dofs (np.ndarray): element DOF indices (n_elements, 12).
        _scatter (np.ndarray): value slot of every element matrix entry (n_elements, 144).
        _tangents (np.ndarray | None): tangents of the last assembly.
        _last_changed (np.ndarray): elements whose tangent changed at the last assembly.
    """
    def __init__(self, mesh: Mesh):
        self._mesh = mesh
        self._grads, self._volumes = element_gradients(mesh.nodes, mesh.tets)
        self._b = strain_displacement_matrices(self._grads)
        self._dofs = element_dofs(mesh.tets)

        n = mesh.n_dofs
        rows = np.repeat(self._dofs, 12, axis=1)
        cols = np.tile(self._dofs, (1, 12))
        keys, scatter = np.unique((rows * n + cols).ravel(), return_inverse=True)
        self._indices = (keys % n).astype(np.int64)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(keys // n, minlength=n))]).astype(np.int64)
        self._scatter = scatter.reshape(self._dofs.shape[0], 144)

        self._tangents = None
        self._last_changed = np.arange(mesh.n_elements)

    @property
    def mesh(self) -> Mesh:
        return self._mesh

    @property
    def n_dofs(self) -> int:
        return self._mesh.n_dofs

    @property
    def nnz(self) -> int:
        return self._indices.size

    @property
    def volumes(self) -> np.ndarray:
        return self._volumes

    @property
    def b_matrices(self) -> np.ndarray:
        return self._b

    @property
    def element_dof_indices(self) -> np.ndarray:
        return self._dofs

    @property
    def scatter(self) -> np.ndarray:
        return self._scatter

    @property
    def last_changed(self) -> np.ndarray:
        return self._last_changed

    @property
    def yielded_fraction(self) -> float:
        return self._last_changed.size / max(self._mesh.n_elements, 1)

    def element_stiffnesses(self, tangents: np.ndarray, elements: np.ndarray | None = None) -> np.ndarray:
        """Element matrices V B^T C B of shape (m, 12, 12) for all or selected elements."""
        if elements is None:
            elements = slice(None)
        b = self._b[elements]
        return self._volumes[elements, None, None] * np.einsum("eki,ekl,elj->eij", b, tangents, b)

    def assemble(self, tangents: np.ndarray) -> sparse.csr_matrix:
        """Assembles the global stiffness matrix from one Voigt tangent per element."""
        tangents = np.asarray(tangents, dtype=float)
        if tangents.shape != (self._mesh.n_elements, 6, 6):
            raise ValueError(f"Expected tangents of shape {(self._mesh.n_elements, 6, 6)}, got {tangents.shape}")
        values = self.element_stiffnesses(tangents).reshape(-1)
        data = np.bincount(self._scatter.ravel(), weights=values, minlength=self.nnz)
        return self._matrix_from_data(data)

    def stiffness(self, tangents: np.ndarray) -> sparse.csr_matrix:
        """Full reassembly that also records which element tangents changed since the previous call."""
        self._last_changed = changed_elements(self._tangents, tangents)
        self._tangents = np.array(tangents, dtype=float, copy=True)
        return self.assemble(self._tangents)

    def _matrix_from_data(self, data: np.ndarray) -> sparse.csr_matrix:
        n = self.n_dofs
        return sparse.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(n, n))

    def displacement_gradients(self, displacements: np.ndarray) -> np.ndarray:
        """Per-element displacement gradients du_i/dx_j of shape (n_elements, 3, 3)."""
        u_e = np.asarray(displacements, dtype=float)[self._dofs].reshape(-1, 4, 3)
        return np.einsum("eai,eaj->eij", u_e, self._grads)

    def strains(self, displacements: np.ndarray) -> np.ndarray:
        """Per-element Voigt engineering strains of shape (n_elements, 6)."""
        u_e = np.asarray(displacements, dtype=float)[self._dofs]
        return np.einsum("eij,ej->ei", self._b, u_e)

    def internal_force(self, stresses: np.ndarray) -> np.ndarray:
        """Assembles f_int = sum_e V_e B_e^T sigma_e from per-element Voigt stresses."""
        local = self._volumes[:, None] * np.einsum("eij,ei->ej", self._b, np.asarray(stresses, dtype=float))
        return np.bincount(self._dofs.ravel(), weights=local.ravel(), minlength=self.n_dofs)


def assemble_global(mesh: Mesh, tangents: np.ndarray, dof_map: DofMap | None = None) -> sparse.csr_matrix:
    """Assembles the global stiffness matrix.

    Args:
        mesh (Mesh): the mesh.
        tangents (np.ndarray): one Voigt tangent per element, shape (n_elements, 6, 6).
        dof_map (DofMap | None): when given, the constrained rows and columns are eliminated and the free-free block
            is returned.

    Returns:
        sparse.csr_matrix: the assembled matrix.
    """
    stiffness = GlobalAssembler(mesh).assemble(tangents)
    if dof_map is None:
        return stiffness
    free = dof_map.free_dofs
    return stiffness[free][:, free].tocsr()


def internal_force(mesh: Mesh, displacements: np.ndarray, model: "BaseConstitutiveModel") -> np.ndarray:
    """Internal force vector for a displacement field, evaluated from the committed states of `model` without
    committing.
    """
    displacements = np.asarray(displacements, dtype=float)
    if displacements.shape != (mesh.n_dofs,):
        raise ValueError(f"Expected a displacement vector of length {mesh.n_dofs}, got {displacements.shape}")
    assembler = GlobalAssembler(mesh)
    stresses, _ = model.update(assembler.displacement_gradients(displacements))
    return assembler.internal_force(stresses)


@dataclass
class StepResult:
    """Converged state of one load step.

    Attributes:
        step (int): running step number, starting from 1.
        load_factor (float): load factor reached by the step.
        displacement (np.ndarray): converged displacement vector.
        internal_force (np.ndarray): internal force vector, equal to the reactions on constrained DOFs.
        stresses (np.ndarray): per-element Voigt stresses.
        residual_norms (list[float]): free residual norm before every linear solve and at convergence.
        cg_iterations (list[int]): linear solver iterations of every Newton iteration.
        yielded_fractions (list[float]): fraction of elements whose tangent changed at every Newton iteration.
    """
    step: int
    load_factor: float
    displacement: np.ndarray
    internal_force: np.ndarray
    stresses: np.ndarray
    tangents: np.ndarray | None = None
    residual_norms: list[float] = field(default_factory=list)
    cg_iterations: list[int] = field(default_factory=list)
    yielded_fractions: list[float] = field(default_factory=list)

    @property
    def newton_iterations(self) -> int:
        return len(self.cg_iterations)

    def reaction(self, dofs: np.ndarray) -> float:
        """Sum of the reactions on the given DOFs."""
        return float(self.internal_force[np.asarray(dofs, dtype=np.int64)].sum())


@dataclass
class SolutionHistory:
    steps: list[StepResult] = field(default_factory=list)

    @property
    def final(self) -> StepResult:
        return self.steps[-1]

    def convergence_frame(self) -> pd.DataFrame:
        """One row per Newton iteration with linear solver iterations, residual and yielded fraction."""
        rows = []
        for result in self.steps:
            for it, (cg_iters, fraction) in enumerate(zip(result.cg_iterations, result.yielded_fractions), start=1):
                rows.append({STEP_STR: result.step, LOAD_FACTOR_STR: result.load_factor, NEWTON_ITER_STR: it,
                             CG_ITER_STR: cg_iters, RESIDUAL_STR: result.residual_norms[it - 1],
                             YIELDED_FRAC_STR: fraction})
        return pd.DataFrame(rows, columns=[STEP_STR, LOAD_FACTOR_STR, NEWTON_ITER_STR, CG_ITER_STR, RESIDUAL_STR,
                                           YIELDED_FRAC_STR])


def newton_solve(mesh: Mesh, dof_map: DofMap, load_factors: list[float], linear_solver: "BaseLinearSolver",
                 model: "BaseConstitutiveModel", external_force: np.ndarray | None = None,
                 assembler: GlobalAssembler | None = None, tol_newton: float = TOL_NEWTON,
                 max_newton_iters: int = MAX_NEWTON_ITERS, max_bisections: int = MAX_BISECTIONS,
                 initial_displacement: np.ndarray | None = None, start_factor: float = 0.0, start_step: int = 0,
                 on_step: Callable[[StepResult], None] | None = None) -> SolutionHistory:
    """Incremental-iterative Newton solution of the quasi-static equilibrium problem.

    Constrained DOFs are moved to their initial value plus (load factor - start_factor) times their prescribed value
    at the start of each step and eliminated from the linear systems, which keeps the solved matrices SPD. A step is
    converged when the free residual norm drops below `tol_newton` times max(|f_int|, |f_ext|), with an absolute
    floor. Failed steps are bisected up to `max_bisections` times. Material states are committed only when a step
    converges.

    Args:
        mesh (Mesh): the mesh.
        dof_map (DofMap): constrained DOFs with their prescribed values per unit load factor.
        load_factors (list[float]): increasing load factors of the steps, typically ending at 1.
        linear_solver (BaseLinearSolver): solver for the free-free tangent systems.
        model (BaseConstitutiveModel): per-element constitutive model.
        external_force (np.ndarray | None): nodal force vector at load factor 1.
        assembler (GlobalAssembler | None): stiffness assembler; an incremental assembler may be passed.
        tol_newton (float): relative residual tolerance.
        max_newton_iters (int): maximum linear solves per step.
        max_bisections (int): maximum nesting of step bisections.
        initial_displacement (np.ndarray | None): displacement of a resumed run.
        start_factor (float): load factor reached by a resumed run.
        start_step (int): number of steps already completed by a resumed run.
        on_step (Callable[[StepResult], None] | None): called after every converged step.

    Returns:
        SolutionHistory: the converged steps.
    """
    if dof_map.n_dofs != mesh.n_dofs:
        raise BoundaryConditionError(f"DOF map size {dof_map.n_dofs} does not match mesh size {mesh.n_dofs}")
    if np.any(np.diff(np.concatenate([[start_factor], load_factors])) <= 0.0):
        raise ValueError(f"Load factors must increase from {start_factor}, got {list(load_factors)}")

    assembler = assembler or GlobalAssembler(mesh)
    f_ext = np.zeros(mesh.n_dofs) if external_force is None else np.asarray(external_force, dtype=float)
    u = np.zeros(mesh.n_dofs) if initial_displacement is None else np.array(initial_displacement, dtype=float)
    base = u[dof_map.constrained_dofs].copy()

    history = SolutionHistory()
    committed_factor = start_factor
    step = start_step
    pending = [(float(factor), 0) for factor in load_factors]
    while pending:
        factor, depth = pending.pop(0)
        try:
            result = _solve_load_step(assembler, dof_map, model, linear_solver, u, base, factor - start_factor,
                                      factor, f_ext, tol_newton, max_newton_iters)
        except ConvergenceError as exc:
            if depth >= max_bisections:
                exc.diagnostics.update({STEP_STR: step + 1, LOAD_FACTOR_STR: factor, "bisections": depth})
                raise
            midpoint = 0.5 * (committed_factor + factor)
            logger.warning(f"Newton failed at load factor {factor:.6g} ({exc}); bisecting to {midpoint:.6g}")
            pending[0:0] = [(midpoint, depth + 1), (factor, depth + 1)]
            continue

        model.commit()
        step += 1
        result.step = step
        committed_factor = factor
        u = result.displacement
        history.steps.append(result)
        logger.info(f"Step {step} converged at load factor {factor:.6g} in {result.newton_iterations} iterations "
                    f"({sum(result.cg_iterations)} linear solver iterations)")
        if on_step is not None:
            on_step(result)

    return history


def _solve_load_step(assembler: GlobalAssembler, dof_map: DofMap, model: "BaseConstitutiveModel",
                     linear_solver: "BaseLinearSolver", u_start: np.ndarray, base: np.ndarray, scale: float,
                     factor: float, f_ext: np.ndarray, tol_newton: float, max_newton_iters: int) -> StepResult:
    free = dof_map.free_dofs
    u = u_start.copy()
    u[dof_map.constrained_dofs] = base + scale * dof_map.constrained_values
    target_force = factor * f_ext

    residual_norms, cg_iterations, yielded_fractions = [], [], []
    for iteration in range(max_newton_iters + 1):
        stresses, tangents = model.update(assembler.displacement_gradients(u))
        f_int = assembler.internal_force(stresses)
        residual = (target_force - f_int)[free]
        norm = float(np.linalg.norm(residual))
        reference = max(float(np.linalg.norm(f_int)), float(np.linalg.norm(target_force)))
        residual_norms.append(norm)
        logger.debug(f"Load factor {factor:.6g}, iteration {iteration}: residual {norm:.3e} (reference "
                     f"{reference:.3e})")

        if not np.isfinite(norm):
            raise ConvergenceError("Residual is not finite", {NEWTON_ITER_STR: iteration})
        if norm <= max(tol_newton * reference, TOL_NEWTON_ABS):
            return StepResult(step=0, load_factor=factor, displacement=u, internal_force=f_int, stresses=stresses,
                              tangents=tangents, residual_norms=residual_norms, cg_iterations=cg_iterations,
                              yielded_fractions=yielded_fractions)
        if iteration == max_newton_iters:
            break

        stiffness = assembler.stiffness(tangents)
        yielded_fractions.append(assembler.yielded_fraction)
        k_free = stiffness[free][:, free].tocsr()
        du, n_iter = linear_solver.solve(k_free, residual, np.zeros(free.size))
        cg_iterations.append(int(n_iter))
        u[free] += du

    raise ConvergenceError(f"Newton iteration did not converge in {max_newton_iters} iterations",
                           {NEWTON_ITER_STR: max_newton_iters, RESIDUAL_STR: residual_norms[-1]})

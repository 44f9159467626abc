"""
Module for the accelerated macroscale solver: rigid body cluster deflation basis, deflated conjugate gradients,
incremental stiffness assembly and the Newton driver combining them.
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse

from dcasim.globals import *
from dcasim.clustering import ClusterPartition
from dcasim.fem_core import GlobalAssembler, SolutionHistory, StepResult, changed_elements, newton_solve
from dcasim.mesh import DofMap, Mesh
from dcasim.models.base_models import BaseConstitutiveModel
from dcasim.models.linear_solvers import DeflatedCgSolver, JacobiPcgSolver

logger = logging.getLogger(__name__)

_TRANSLATION_COLUMNS = (0, 1, 2)
_ROTATION_COLUMNS = (3, 4, 5)


def rigid_body_block(relative_coords: np.ndarray) -> np.ndarray:
    """Per-node 3x6 blocks mapping cluster translations and infinitesimal rotations to nodal displacements,
    u = t + theta x r.

    Args:
        relative_coords (np.ndarray): node coordinates relative to the cluster centroid, shape (n, 3).

    Returns:
        np.ndarray: blocks of shape (n, 3, 6).
    """
    x, y, z = relative_coords[:, 0], relative_coords[:, 1], relative_coords[:, 2]
    blocks = np.zeros((relative_coords.shape[0], 3, 6))
    blocks[:, :, :3] = np.eye(3)
    blocks[:, 0, 4], blocks[:, 0, 5] = z, -y
    blocks[:, 1, 3], blocks[:, 1, 5] = -z, x
    blocks[:, 2, 3], blocks[:, 2, 4] = y, -x
    return blocks


@dataclass(frozen=True)
class DeflationBasis:
    """
    Deflation basis W with rigid body columns per cluster.

    Attributes:
        matrix (sparse.csr_matrix): W over all DOFs with constrained rows zeroed, shape (n_dofs, n_columns).
        free_dofs (np.ndarray): free DOF indices.
        column_clusters (np.ndarray): cluster id of every column.
        column_modes (np.ndarray): rigid mode index 0-5 (ux, uy, uz, rx, ry, rz) of every column.
        translation_only (np.ndarray): clusters whose rotation columns were dropped.
    """
    matrix: sparse.csr_matrix
    free_dofs: np.ndarray
    column_clusters: np.ndarray
    column_modes: np.ndarray
    translation_only: np.ndarray

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    @property
    def free_matrix(self) -> sparse.csr_matrix:
        """W restricted to the free DOF rows."""
        return self.matrix[self.free_dofs].tocsr()

    def prolongate(self, coefficients: np.ndarray) -> np.ndarray:
        """Nodal displacement vector u = W lambda for cluster rigid body coefficients."""
        return self.matrix @ np.asarray(coefficients, dtype=float)


def _independent_columns(block: np.ndarray, candidates: tuple[int, ...], tol: float = 1e-10) -> list[int]:
    kept = []
    scale = max(np.abs(block).max(), 1.0)
    for column in candidates:
        trial = block[:, kept + [column]]
        if np.linalg.matrix_rank(trial, tol=tol * scale * np.sqrt(block.shape[0])) == len(kept) + 1:
            kept.append(column)
    return kept


def build_deflation_basis(mesh: Mesh, partition: ClusterPartition, dof_map: DofMap | None = None) -> DeflationBasis:
    """Builds the rigid body cluster deflation basis.

    Every node contributes a 3x6 block built from its coordinates relative to its cluster centroid. Rows of
    constrained DOFs are zeroed. Clusters with fewer than 3 non-collinear free nodes keep translation columns only,
    and remaining dependent columns (from partially constrained clusters) are dropped so that W has full column rank.

    Args:
        mesh (Mesh): the mesh.
        partition (ClusterPartition): node clusters.
        dof_map (DofMap | None): constraints; all DOFs are free when None.

    Returns:
        DeflationBasis: the basis.
    """
    dof_map = dof_map or DofMap(mesh.n_nodes)
    free_mask = np.zeros(mesh.n_dofs, dtype=bool)
    free_mask[dof_map.free_dofs] = True

    rows, cols, vals = [], [], []
    column_clusters, column_modes, translation_only = [], [], []
    n_columns = 0
    for cluster, members in enumerate(partition.members):
        relative = mesh.nodes[members] - partition.centroids[cluster]
        blocks = rigid_body_block(relative)
        member_dofs = (3 * members[:, None] + np.arange(3)).ravel()
        blocks = blocks.reshape(-1, 6) * free_mask[member_dofs][:, None]

        node_has_free = free_mask[member_dofs].reshape(-1, 3).any(axis=1)
        free_relative = relative[node_has_free]
        spread = free_relative - free_relative.mean(axis=0) if free_relative.shape[0] else free_relative
        collinear = free_relative.shape[0] < 3 or np.linalg.matrix_rank(spread, tol=1e-9 * max(
            np.abs(spread).max(), 1e-300)) < 2
        candidates = _TRANSLATION_COLUMNS if collinear else _TRANSLATION_COLUMNS + _ROTATION_COLUMNS
        kept = _independent_columns(blocks, candidates) if np.any(blocks) else []

        if collinear and free_relative.shape[0] > 0:
            translation_only.append(cluster)
            logger.warning(f"Cluster {cluster} has fewer than 3 non-collinear free nodes; rotation columns dropped")
        elif len(kept) < len(candidates):
            dropped = sorted(set(candidates) - set(kept))
            logger.warning(f"Cluster {cluster}: dependent deflation columns {dropped} dropped")

        for mode in kept:
            nonzero = np.flatnonzero(blocks[:, mode])
            rows.append(member_dofs[nonzero])
            cols.append(np.full(nonzero.size, n_columns))
            vals.append(blocks[nonzero, mode])
            column_clusters.append(cluster)
            column_modes.append(mode)
            n_columns += 1

    matrix = sparse.csr_matrix((np.concatenate(vals) if vals else np.zeros(0),
                                (np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
                                 np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64))),
                               shape=(mesh.n_dofs, n_columns))
    logger.info(f"Deflation basis with {n_columns} columns for {partition.k} clusters")
    return DeflationBasis(matrix=matrix, free_dofs=dof_map.free_dofs, column_clusters=np.asarray(column_clusters),
                          column_modes=np.asarray(column_modes), translation_only=np.asarray(translation_only,
                                                                                              dtype=np.int64))


def deflated_cg(matrix: sparse.spmatrix, rhs: np.ndarray, basis: DeflationBasis, tol: float = TOL_CG,
                x0: np.ndarray | None = None, max_iter: int | None = None) -> tuple[np.ndarray, int]:
    """Solves K u = f with deflated CG. The matrix may be the full system or the free-free block of `basis`.

    Returns:
        tuple[np.ndarray, int]: the solution and the iteration count.
    """
    w = basis.matrix if matrix.shape[0] == basis.matrix.shape[0] else basis.free_matrix
    x0 = np.zeros(matrix.shape[0]) if x0 is None else x0
    return DeflatedCgSolver(w, tol=tol, max_iter=max_iter).solve(matrix, np.asarray(rhs, dtype=float), x0)


def pcg(matrix: sparse.spmatrix, rhs: np.ndarray, tol: float = TOL_CG, x0: np.ndarray | None = None,
        max_iter: int | None = None) -> tuple[np.ndarray, int]:
    """Solves K u = f with Jacobi preconditioned CG, the undeflated baseline."""
    x0 = np.zeros(matrix.shape[0]) if x0 is None else x0
    return JacobiPcgSolver(tol=tol, max_iter=max_iter).solve(matrix, np.asarray(rhs, dtype=float), x0)


class IncrementalAssembler(GlobalAssembler):
    """
    Stiffness assembler that, after the first full assembly, only updates the value slots of elements whose tangent
    changed: K_new = K_old + sum over changed elements of V B^T (C_new - C_old) B. The sparsity pattern never changes.

    Attributes:
        _data (np.ndarray | None): current CSR values.
    """
    def __init__(self, mesh: Mesh):
        super().__init__(mesh)
        self._data = None

    def stiffness(self, tangents: np.ndarray) -> sparse.csr_matrix:
        tangents = np.asarray(tangents, dtype=float)
        if self._data is None:
            matrix = super().stiffness(tangents)
            self._data = matrix.data.copy()
            return matrix

        changed = changed_elements(self._tangents, tangents)
        self._last_changed = changed
        if changed.size:
            delta = self.element_stiffnesses(tangents[changed] - self._tangents[changed], changed)
            np.add.at(self._data, self._scatter[changed].ravel(), delta.ravel())
            self._tangents[changed] = tangents[changed]
        logger.debug(f"Incremental assembly updated {changed.size} of {self._mesh.n_elements} elements")
        return self._matrix_from_data(self._data.copy())


def incremental_update(matrix: sparse.csr_matrix, mesh: Mesh, yielded: np.ndarray,
                       old_tangents: dict[int, np.ndarray] | np.ndarray,
                       new_tangents: dict[int, np.ndarray] | np.ndarray) -> sparse.csr_matrix:
    """Updates a stiffness matrix assembled from `old_tangents` for the yielded elements.

    Args:
        matrix (sparse.csr_matrix): matrix assembled on the canonical pattern of `mesh`.
        mesh (Mesh): the mesh.
        yielded (np.ndarray): indices of elements whose tangent changed.
        old_tangents (dict[int, np.ndarray] | np.ndarray): previous tangents, indexable by element.
        new_tangents (dict[int, np.ndarray] | np.ndarray): new tangents, indexable by element.

    Returns:
        sparse.csr_matrix: the updated matrix with unchanged sparsity pattern.
    """
    assembler = GlobalAssembler(mesh)
    if matrix.nnz != assembler.nnz:
        raise ValueError(f"Matrix has {matrix.nnz} stored entries, the mesh pattern has {assembler.nnz}")
    yielded = np.asarray(yielded, dtype=np.int64)
    data = matrix.data.copy()
    if yielded.size:
        try:
            delta_tangents = np.stack([np.asarray(new_tangents[e]) - np.asarray(old_tangents[e]) for e in yielded])
        except (KeyError, IndexError) as exc:
            raise ValueError(f"Missing tangent for yielded element {exc}") from exc
        delta = assembler.element_stiffnesses(delta_tangents, yielded)
        np.add.at(data, assembler.scatter[yielded].ravel(), delta.ravel())
    return sparse.csr_matrix((data, matrix.indices.copy(), matrix.indptr.copy()), shape=matrix.shape)


def idcg_newton(mesh: Mesh, dof_map: DofMap, load_factors: list[float], model: BaseConstitutiveModel,
                partition: ClusterPartition, tol_cg: float = TOL_CG, max_cg_iters: int | None = None,
                tol_newton: float = TOL_NEWTON, max_newton_iters: int = MAX_NEWTON_ITERS,
                max_bisections: int = MAX_BISECTIONS, external_force: np.ndarray | None = None,
                on_step: Callable[[StepResult], None] | None = None, **resume) -> SolutionHistory:
    """Newton solution with incremental stiffness assembly and deflated CG linear solves.

    Args:
        mesh (Mesh): the macroscale mesh.
        dof_map (DofMap): constraints at load factor 1.
        load_factors (list[float]): load factors of the steps.
        model (BaseConstitutiveModel): per-element constitutive model.
        partition (ClusterPartition): node clusters of the deflation basis.
        tol_cg (float): relative CG tolerance.
        max_cg_iters (int | None): CG iteration cap.
        tol_newton (float): relative Newton tolerance.
        max_newton_iters (int): Newton iteration cap per step.
        max_bisections (int): maximum step bisections.
        external_force (np.ndarray | None): nodal forces at load factor 1.
        on_step (Callable[[StepResult], None] | None): called after every converged step.
        **resume: `initial_displacement`, `start_factor` and `start_step` of a resumed run.

    Returns:
        SolutionHistory: the converged steps.
    """
    basis = build_deflation_basis(mesh, partition, dof_map)
    solver = DeflatedCgSolver(basis.free_matrix, tol=tol_cg, max_iter=max_cg_iters)
    return newton_solve(mesh, dof_map, load_factors, solver, model, external_force=external_force,
                        assembler=IncrementalAssembler(mesh), tol_newton=tol_newton,
                        max_newton_iters=max_newton_iters, max_bisections=max_bisections, on_step=on_step, **resume)


def dns_newton(mesh: Mesh, dof_map: DofMap, load_factors: list[float], model: BaseConstitutiveModel,
               tol_cg: float = TOL_CG, max_cg_iters: int | None = None, tol_newton: float = TOL_NEWTON,
               max_newton_iters: int = MAX_NEWTON_ITERS, max_bisections: int = MAX_BISECTIONS,
               external_force: np.ndarray | None = None, on_step: Callable[[StepResult], None] | None = None,
               **resume) -> SolutionHistory:
    """Reference Newton solution with full reassembly and Jacobi preconditioned CG."""
    solver = JacobiPcgSolver(tol=tol_cg, max_iter=max_cg_iters)
    return newton_solve(mesh, dof_map, load_factors, solver, model, external_force=external_force,
                        tol_newton=tol_newton, max_newton_iters=max_newton_iters, max_bisections=max_bisections,
                        on_step=on_step, **resume)

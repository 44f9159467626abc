"""
Module for the scale transition between a macroscopic deformation gradient and an RVE: uniform boundary displacements,
stress averaging, Hill-Mandel verification and the consistent homogenized tangent by static condensation.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from dcasim.globals import *
from dcasim.exceptions import BoundaryConditionError, ConvergenceError
from dcasim.general_functions import stress_to_voigt, sym, unit_strain_probe
from dcasim.mesh import DofMap, Mesh, rve_boundary_nodes
from dcasim.models.base_models import BaseMicroModel

logger = logging.getLogger(__name__)


def check_deformation_gradient(deformation_gradient: np.ndarray) -> np.ndarray:
    deformation_gradient = np.asarray(deformation_gradient, dtype=float)
    if deformation_gradient.shape != (3, 3):
        raise BoundaryConditionError(f"Deformation gradient must be 3x3, got shape {deformation_gradient.shape}")
    if np.linalg.det(deformation_gradient) <= 0.0:
        raise BoundaryConditionError(f"Deformation gradient must have positive determinant, got "
                                     f"{deformation_gradient.tolist()}")
    return deformation_gradient


def homogeneous_displacements(coords: np.ndarray, deformation_gradient: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Displacements (F - I)(x - x0) of the homogeneous deformation, shape (n, 3)."""
    return (np.asarray(coords) - x0) @ (np.asarray(deformation_gradient) - np.eye(3)).T


def apply_uniform_bc(mesh: Mesh, deformation_gradient: np.ndarray, nodes: np.ndarray | None = None) -> DofMap:
    """Prescribes u = (F - I)(x - x0) on the RVE boundary nodes, x0 being the center of the RVE box.

    Args:
        mesh (Mesh): the RVE mesh.
        deformation_gradient (np.ndarray): macroscopic deformation gradient.
        nodes (np.ndarray | None): constrained nodes; the outer RVE boundary when None.

    Returns:
        DofMap: the constrained DOFs and their values.
    """
    deformation_gradient = check_deformation_gradient(deformation_gradient)
    nodes = rve_boundary_nodes(mesh) if nodes is None else np.asarray(nodes, dtype=np.int64)
    dof_map = DofMap(mesh.n_nodes)
    values = homogeneous_displacements(mesh.nodes[nodes], deformation_gradient, mesh.center)
    dof_map.constrain(dof_map.node_dofs(nodes), values)
    return dof_map


def average_stress_volume(mesh: Mesh, stresses: np.ndarray, volume: float | None = None) -> np.ndarray:
    """Volume average (1/V) sum_e V_e sigma_e of Voigt element stresses over the RVE box volume, pores included.

    Returns:
        np.ndarray: the symmetric 3x3 average stress.
    """
    volume = mesh.box_volume if volume is None else volume
    average = (mesh.volumes[:, None] * np.asarray(stresses, dtype=float)).sum(axis=0) / volume
    tensor = np.zeros((3, 3))
    for idx, (i, j) in enumerate(VOIGT_PAIRS):
        tensor[i, j] = tensor[j, i] = average[idx]
    return tensor


def boundary_stress_average(forces: np.ndarray, positions: np.ndarray, x0: np.ndarray, volume: float) -> np.ndarray:
    """Stress (1/V) sym(sum_i f_i (x) (x_i - x0)) from nodal reaction forces, shape (3, 3)."""
    moment = np.einsum("ia,ib->ab", np.asarray(forces, dtype=float), np.asarray(positions, dtype=float) - x0)
    return sym(moment) / volume


def average_stress_boundary(mesh: Mesh, internal_force: np.ndarray, nodes: np.ndarray | None = None,
                            volume: float | None = None) -> np.ndarray:
    """Average stress from the reactions at the constrained RVE boundary nodes.

    Args:
        mesh (Mesh): the RVE mesh.
        internal_force (np.ndarray): converged internal force vector, the reactions at constrained DOFs.
        nodes (np.ndarray | None): constrained boundary nodes; the outer RVE boundary when None.
        volume (float | None): RVE volume; the box volume when None.

    Returns:
        np.ndarray: the symmetric 3x3 average stress.
    """
    nodes = rve_boundary_nodes(mesh) if nodes is None else np.asarray(nodes, dtype=np.int64)
    forces = np.asarray(internal_force, dtype=float).reshape(-1, 3)[nodes]
    return boundary_stress_average(forces, mesh.nodes[nodes], mesh.center,
                                   mesh.box_volume if volume is None else volume)


def average_deformation_gradient(mesh: Mesh, displacements: np.ndarray) -> np.ndarray:
    """Volume average of the element deformation gradients over the solid volume."""
    u_e = np.asarray(displacements, dtype=float).reshape(-1, 3)[mesh.tets]
    from_nodes = np.linalg.inv(mesh.nodes[mesh.tets][:, 1:] - mesh.nodes[mesh.tets][:, :1])
    grads = np.einsum("eaj,eai->eij", from_nodes.swapaxes(1, 2), u_e[:, 1:] - u_e[:, :1])
    return np.eye(3) + (mesh.volumes[:, None, None] * grads).sum(axis=0) / mesh.volumes.sum()


@dataclass(frozen=True)
class PrescribedDofs:
    """
    Prescribed DOFs of a micro system with the geometry needed by the condensation.

    Attributes:
        dofs (np.ndarray): prescribed DOF indices.
        positions (np.ndarray): position of the node or cluster owning every DOF, shape (n, 3).
        components (np.ndarray): displacement component 0-2 of translational DOFs, -1 for rotational ones.
        x0 (np.ndarray): RVE center.
        volume (float): RVE volume.
    """
    dofs: np.ndarray
    positions: np.ndarray
    components: np.ndarray
    x0: np.ndarray
    volume: float

    @classmethod
    def for_nodes(cls, mesh: Mesh, nodes: np.ndarray) -> "PrescribedDofs":
        """Translational DOFs of the given FE nodes."""
        nodes = np.asarray(nodes, dtype=np.int64)
        return cls(dofs=(3 * nodes[:, None] + np.arange(3)).ravel(), positions=np.repeat(mesh.nodes[nodes], 3, axis=0),
                   components=np.tile(np.arange(3), nodes.size), x0=mesh.center, volume=mesh.box_volume)

    def probe_values(self, strain: np.ndarray) -> np.ndarray:
        """Prescribed values of a homogeneous symmetric strain probe: E (x - x0) on translations, zero rotations."""
        translations = homogeneous_displacements(self.positions, np.eye(3) + strain, self.x0)
        translational = self.components >= 0
        values = np.zeros(self.dofs.size)
        values[translational] = translations[translational, self.components[translational]]
        return values

    def stress_from_forces(self, forces: np.ndarray) -> np.ndarray:
        """Boundary average stress from the forces at the prescribed DOFs."""
        translational = self.components >= 0
        nodal = np.zeros((self.dofs.size, 3))
        nodal[np.flatnonzero(translational), self.components[translational]] = forces[translational]
        return boundary_stress_average(nodal, self.positions, self.x0, self.volume)


def condensation_probes(stiffness: sparse.spmatrix, prescribed: PrescribedDofs) -> np.ndarray:
    """Displacement fields of the six canonical Voigt strain probes: homogeneous values on the prescribed DOFs and the
    statically condensed fluctuation -K_ff^-1 K_fp u_p on the free DOFs.

    Returns:
        np.ndarray: probe fields of shape (6, n_dofs).
    """
    n = stiffness.shape[0]
    stiffness = sparse.csr_matrix(stiffness)
    free_mask = np.ones(n, dtype=bool)
    free_mask[prescribed.dofs] = False
    free = np.flatnonzero(free_mask)

    probes = np.zeros((6, n))
    for j in range(6):
        probes[j, prescribed.dofs] = prescribed.probe_values(unit_strain_probe(j))
    if free.size:
        try:
            factor = splu(sparse.csc_matrix(stiffness[free][:, free]))
        except RuntimeError as exc:
            raise ConvergenceError("Free-free micro stiffness is singular; the RVE has an unconstrained region",
                                   {"free_dofs": int(free.size)}) from exc
        rhs = -(stiffness[free][:, prescribed.dofs] @ probes[:, prescribed.dofs].T)
        probes[:, free] = factor.solve(np.asarray(rhs)).T
    return probes


def condensed_tangent(stiffness: sparse.spmatrix, prescribed: PrescribedDofs,
                      probes: np.ndarray | None = None) -> np.ndarray:
    """Consistent homogenized tangent from the condensed stiffness K_pp - K_pf K_ff^-1 K_fp.

    Column j holds the boundary average stress of the reactions produced by the j-th canonical Voigt strain probe.
    Shear probes have unit engineering strain.

    Args:
        stiffness (sparse.spmatrix): converged micro stiffness over all DOFs.
        prescribed (PrescribedDofs): prescribed DOFs and their geometry.
        probes (np.ndarray | None): probe fields from `condensation_probes`, computed when None.

    Returns:
        np.ndarray: the 6x6 Voigt tangent.
    """
    probes = condensation_probes(stiffness, prescribed) if probes is None else probes
    reactions = (sparse.csr_matrix(stiffness) @ probes.T).T[:, prescribed.dofs]
    tangent = np.zeros((6, 6))
    for j in range(6):
        tangent[:, j] = stress_to_voigt(prescribed.stress_from_forces(reactions[j]))
    return tangent


def hill_mandel_residual(internal_force: np.ndarray, probes: np.ndarray, stress: np.ndarray, volume: float,
                        floor: float = HILL_MANDEL_STRESS_FLOOR) -> float:
    """Largest Hill-Mandel mismatch over the probe variations.

    For every probe field du_j the micro virtual work (1/V) du_j . f_int is compared with the macro work S : dE_j,
    relative to |S : dE_j| of the same probe. Probe works below `floor` are compared absolutely.

    Args:
        internal_force (np.ndarray): converged internal force vector.
        probes (np.ndarray): admissible variations of shape (6, n_dofs) for the canonical Voigt strain probes.
        stress (np.ndarray): homogenized 3x3 stress.
        volume (float): RVE volume.
        floor (float): smallest macro work used as a reference.

    Returns:
        float: the largest residual over the probes.
    """
    micro_work = probes @ np.asarray(internal_force, dtype=float) / volume
    macro_work = stress_to_voigt(np.asarray(stress, dtype=float))
    mismatch = np.abs(micro_work - macro_work) / np.maximum(np.abs(macro_work), floor)
    return float(mismatch.max())


def fd_tangent(micro_model: BaseMicroModel, deformation_gradient: np.ndarray,
               step: float = FD_TANGENT_STEP) -> np.ndarray:
    """Central finite difference tangent of the homogenized stress over symmetric strain perturbations. The micro
    solves do not commit.

    Returns:
        np.ndarray: the 6x6 Voigt tangent.
    """
    deformation_gradient = check_deformation_gradient(deformation_gradient)
    tangent = np.zeros((6, 6))
    for j in range(6):
        perturbation = unit_strain_probe(j, step)
        plus = micro_model.solve(deformation_gradient + perturbation).stress
        minus = micro_model.solve(deformation_gradient - perturbation).stress
        tangent[:, j] = (stress_to_voigt(plus) - stress_to_voigt(minus)) / (2.0 * step)
    return tangent


@dataclass(frozen=True)
class FieldComparison:
    """
    Pointwise comparison of two scalar fields.

    Attributes:
        error (float): (1/N) |a - b|_2.
        counts (np.ndarray): histogram counts of the relative pointwise differences.
        bin_edges (np.ndarray): histogram bin edges.
    """
    error: float
    counts: np.ndarray
    bin_edges: np.ndarray


def compare_fields(field_a: np.ndarray, field_b: np.ndarray, bins: int = 20) -> FieldComparison:
    """Compares two pointwise fields, typically von Mises stresses of a reference and a reduced solution.

    The histogram bins |a - b| / max|b|.
    """
    field_a = np.asarray(field_a, dtype=float).ravel()
    field_b = np.asarray(field_b, dtype=float).ravel()
    if field_a.size != field_b.size:
        raise ValueError(f"Field lengths differ: {field_a.size} and {field_b.size}")
    if field_a.size == 0:
        raise ValueError("Cannot compare empty fields")

    difference = field_a - field_b
    error = float(np.linalg.norm(difference) / field_a.size)
    scale = np.abs(field_b).max()
    relative = np.abs(difference) / scale if scale > 0.0 else np.abs(difference)
    counts, edges = np.histogram(relative, bins=bins)
    return FieldComparison(error=error, counts=counts, bin_edges=edges)

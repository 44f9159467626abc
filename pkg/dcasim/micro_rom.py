"""
Module for the cluster based reduced order model of an RVE. Node clusters become the vertices of a reduced tetrahedral
mesh with three translations and three rotations per vertex; nodal fields are restricted to the centroids by
polynomial augmented radial point interpolation and the reduced solution is prolongated back by rigid cluster motions.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay, QhullError

from dcasim.globals import *
from dcasim.exceptions import ConvergenceError, ReducedModelError
from dcasim.clustering import ClusterPartition, kmeans, solid_node_mask
from dcasim.fem_core import element_gradients
from dcasim.general_functions import axial_vector, skew, stress_to_voigt, voigt_to_strain, voigt_to_stress
from dcasim.homogenization import PrescribedDofs, check_deformation_gradient, condensation_probes, \
    condensed_tangent, hill_mandel_residual, homogeneous_displacements
from dcasim.macro_solver import rigid_body_block
from dcasim.material import ElasticConstants, HardeningCurve, MaterialPointState, elastic_tensor, return_map, \
    von_mises
from dcasim.mesh import Mesh, rve_boundary_nodes, signed_volumes
from dcasim.models.linear_solvers import DirectSolver

logger = logging.getLogger(__name__)

_TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_GAUSS_A = 0.5854101966249685
_GAUSS_B = 0.1381966011250105
# barycentric coordinates of the 4-point rule; point q lies closest to vertex q
_GAUSS_BARYCENTRIC = np.full((4, 4), _GAUSS_B) + np.eye(4) * (_GAUSS_A - _GAUSS_B)
PRPIM_CONDITION_LIMIT = 1e12

# (D_b theta)_a: derivative of (theta x r)_a with respect to x_b
_ROTATION_GRADIENT = np.zeros((3, 3, 3))
_ROTATION_GRADIENT[0] = [[0, 0, 0], [0, 0, 1], [0, -1, 0]]
_ROTATION_GRADIENT[1] = [[0, 0, -1], [0, 0, 0], [1, 0, 0]]
_ROTATION_GRADIENT[2] = [[0, 1, 0], [-1, 0, 0], [0, 0, 0]]


@dataclass(frozen=True)
class ClusterGraph:
    """
    Adjacency of clusters whose member nodes share at least one finite element.

    Attributes:
        k (int): number of clusters.
        edges (np.ndarray): sorted unique pairs (i, j) with i < j, shape (n_edges, 2).
    """
    k: int
    edges: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def _keys(self, first: np.ndarray, second: np.ndarray) -> np.ndarray:
        low, high = np.minimum(first, second), np.maximum(first, second)
        return low * self.k + high

    def contains(self, first: np.ndarray | int, second: np.ndarray | int) -> np.ndarray:
        """Elementwise test whether the cluster pairs are adjacent. Equal ids are never adjacent."""
        first, second = np.asarray(first, dtype=np.int64), np.asarray(second, dtype=np.int64)
        present = np.isin(self._keys(first, second), self._keys(self.edges[:, 0], self.edges[:, 1]))
        return present & (first != second)

    def neighbours(self, cluster: int) -> np.ndarray:
        mask = (self.edges == cluster).any(axis=1)
        return np.setdiff1d(self.edges[mask].ravel(), [cluster])


def build_cluster_graph(mesh: Mesh, partition: ClusterPartition) -> ClusterGraph:
    """Connects two clusters when nodes of both appear in the same element. Unclustered nodes are ignored."""
    labels = partition.assignment[mesh.tets]
    pairs = []
    for a, b in _TET_EDGES:
        la, lb = labels[:, a], labels[:, b]
        mask = (la >= 0) & (lb >= 0) & (la != lb)
        pairs.append(np.stack([np.minimum(la[mask], lb[mask]), np.maximum(la[mask], lb[mask])], axis=1))
    edges = np.unique(np.concatenate(pairs), axis=0) if pairs else np.zeros((0, 2), dtype=np.int64)
    logger.debug(f"Cluster graph has {edges.shape[0]} edges over {partition.k} clusters")
    return ClusterGraph(k=partition.k, edges=edges.astype(np.int64).reshape(-1, 2))


@dataclass(frozen=True)
class ReducedMesh:
    """
    Tetrahedral mesh over the cluster centroids.

    Attributes:
        vertices (np.ndarray): centroid coordinates of shape (k, 3).
        tets (np.ndarray): positively oriented connectivity of shape (m, 4).
        readmitted (np.ndarray): flags tets kept despite joining graph-disconnected clusters.
    """
    vertices: np.ndarray
    tets: np.ndarray
    readmitted: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.tets.shape[0]

    @property
    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.tets)


def build_reduced_mesh(centroids: np.ndarray, graph: ClusterGraph) -> ReducedMesh:
    """Delaunay tetrahedralization of the centroids, keeping tets whose six edges join adjacent clusters.

    A vertex left without tets is covered again by re-admitting dropped tets incident to it, fewest violated edges
    first.

    Args:
        centroids (np.ndarray): cluster centroids of shape (k, 3).
        graph (ClusterGraph): cluster adjacency.

    Returns:
        ReducedMesh: the reduced mesh.
    """
    centroids = np.asarray(centroids, dtype=float)
    k = centroids.shape[0]
    if k < 4:
        raise ReducedModelError(f"A reduced mesh needs at least 4 centroids, got {k}")
    centered = centroids - centroids.mean(axis=0)
    scale = float(np.abs(centered).max())
    if scale == 0.0 or np.linalg.matrix_rank(centered / scale, tol=1e-10) < 3:
        raise ReducedModelError("Cluster centroids are coplanar; no tetrahedral reduced mesh exists")
    try:
        tets = Delaunay(centroids).simplices.astype(np.int64)
    except QhullError as exc:
        raise ReducedModelError(f"Delaunay triangulation of {k} centroids failed: {exc}") from exc

    volumes = signed_volumes(centroids, tets)
    negative = volumes < 0.0
    tets[negative] = tets[negative][:, [0, 2, 1, 3]]
    tets = tets[np.abs(volumes) > DEGENERATE_VOLUME_TOL * scale ** 3]

    violations = np.zeros(tets.shape[0], dtype=np.int64)
    for a, b in _TET_EDGES:
        violations += ~graph.contains(tets[:, a], tets[:, b])
    keep = violations == 0
    covered = np.zeros(k, dtype=bool)
    covered[tets[keep].ravel()] = True

    readmitted = np.zeros(tets.shape[0], dtype=bool)
    if not covered.all():
        dropped = np.flatnonzero(~keep)
        for t in dropped[np.lexsort((dropped, violations[dropped]))]:
            if not covered[tets[t]].all():
                keep[t] = readmitted[t] = True
                covered[tets[t]] = True
        if readmitted.any():
            logger.warning(f"Re-admitted {int(readmitted.sum())} reduced tets joining non-adjacent clusters")
    if not covered.all():
        raise ReducedModelError(f"Centroids {np.flatnonzero(~covered).tolist()} belong to no reduced tet")

    logger.info(f"Reduced mesh: {k} vertices, {int(keep.sum())} tets "
                f"({int((~keep).sum())} dropped by the cluster graph)")
    return ReducedMesh(vertices=centroids, tets=tets[keep], readmitted=readmitted[keep])


def _least_squares_weights(relative: np.ndarray) -> np.ndarray:
    # centroid value of the minimum norm linear fit; exact for linear fields when the centroid is the member mean
    basis = np.column_stack([np.ones(relative.shape[0]), relative])
    return np.linalg.pinv(basis)[0]


def prpim_weights(member_coords: np.ndarray, centroid: np.ndarray) -> tuple[np.ndarray, bool]:
    """Polynomial augmented radial point interpolation weights of the cluster members at the centroid.

    Uses the cubic radial basis r^3 augmented with a linear polynomial basis. The interpolated centroid value of a
    nodal field v is w . v.

    Args:
        member_coords (np.ndarray): member node coordinates of shape (n, 3).
        centroid (np.ndarray): evaluation point.

    Returns:
        tuple[np.ndarray, bool]: the weight row and whether the least squares linear fit replaced the interpolation.
    """
    member_coords = np.asarray(member_coords, dtype=float)
    relative = member_coords - np.asarray(centroid, dtype=float)
    n = relative.shape[0]
    if n == 1:
        return np.ones(1), False
    scale = float(np.abs(relative).max())
    if scale == 0.0:
        return np.full(n, 1.0 / n), True
    relative = relative / scale

    if n >= 4:
        moments = np.linalg.norm(relative[:, None, :] - relative[None, :, :], axis=-1) ** 3
        poly = np.column_stack([np.ones(n), relative])
        if np.linalg.cond(moments) < PRPIM_CONDITION_LIMIT:
            inv_moments = np.linalg.inv(moments)
            projected = poly.T @ inv_moments @ poly
            if np.linalg.cond(projected) < PRPIM_CONDITION_LIMIT:
                s_b = np.linalg.solve(projected, poly.T @ inv_moments)
                s_a = inv_moments @ (np.eye(n) - poly @ s_b)
                radial_at_centroid = np.linalg.norm(relative, axis=1) ** 3
                return radial_at_centroid @ s_a + s_b[0], False

    logger.warning(f"PR-PIM system of a {n}-node cluster is singular; using the least squares linear fit")
    return _least_squares_weights(relative), True


@dataclass(frozen=True)
class RestrictionOperator:
    """
    Sparse restriction of nodal values to cluster centroids.

    Attributes:
        matrix (sparse.csr_matrix): weights of shape (k, n_nodes).
        fallback (np.ndarray): clusters whose weights come from the least squares fit.
    """
    matrix: sparse.csr_matrix
    fallback: np.ndarray


def build_restriction_operator(coords: np.ndarray, partition: ClusterPartition) -> RestrictionOperator:
    rows, cols, data = [], [], []
    fallback = np.zeros(partition.k, dtype=bool)
    for c, members in enumerate(partition.members):
        weights, fallback[c] = prpim_weights(coords[members], partition.centroids[c])
        rows.append(np.full(members.size, c))
        cols.append(members)
        data.append(weights)
    matrix = sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(partition.k, coords.shape[0]))
    if fallback.any():
        logger.warning(f"{int(fallback.sum())} of {partition.k} clusters use least squares restriction weights")
    return RestrictionOperator(matrix=matrix, fallback=fallback)


def restrict(operator: RestrictionOperator, field: np.ndarray) -> np.ndarray:
    """Centroid values of a nodal field of shape (n_nodes,) or (n_nodes, d)."""
    return operator.matrix @ np.asarray(field, dtype=float)


def prolongate(partition: ClusterPartition, coords: np.ndarray, cluster_dofs: np.ndarray) -> np.ndarray:
    """Nodal displacements u_i = t_c + theta_c x (x_i - centroid_c) of rigid cluster motions.

    Args:
        partition (ClusterPartition): node clusters.
        coords (np.ndarray): node coordinates of shape (n_nodes, 3).
        cluster_dofs (np.ndarray): translations and rotations of shape (k, 6) or (6k,).

    Returns:
        np.ndarray: displacements of shape (n_nodes, 3); unclustered nodes stay at zero.
    """
    cluster_dofs = np.asarray(cluster_dofs, dtype=float).reshape(-1, 6)
    nodes = partition.clustered_nodes
    owners = partition.assignment[nodes]
    blocks = rigid_body_block(coords[nodes] - partition.centroids[owners])
    displacements = np.zeros((coords.shape[0], 3))
    displacements[nodes] = np.einsum("nij,nj->ni", blocks, cluster_dofs[owners])
    return displacements


def sfr_b_matrices(vertices: np.ndarray, tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Strain operators of tetrahedra with vertex rotations at the 4 Gauss points.

    The displacement field is u(x) = sum_i N_i(x) (t_i + theta_i x (x - x_i)).

    Returns:
        tuple[np.ndarray, np.ndarray]: B matrices of shape (m, 4, 6, 24) mapping the vertex DOFs (t_i, theta_i) to
        Voigt engineering strains, and element volumes (m,).
    """
    grads, volumes = element_gradients(vertices, tets)
    coords = vertices[tets]
    points = np.einsum("qi,mid->mqd", _GAUSS_BARYCENTRIC, coords)
    relative = points[:, :, None, :] - coords[:, None, :, :]
    rigid = rigid_body_block(relative.reshape(-1, 3)).reshape(tets.shape[0], 4, 4, 3, 6)

    # gradient[m, q, a, b, i, j] = d u_a / d x_b per vertex DOF (i, j)
    gradient = np.einsum("mib,mqiaj->mqabij", grads, rigid)
    gradient[..., 3:] += np.einsum("qi,bac->qabic", _GAUSS_BARYCENTRIC, _ROTATION_GRADIENT)[None]
    gradient = gradient.reshape(tets.shape[0], 4, 3, 3, 24)

    b = np.empty((tets.shape[0], 4, 6, 24))
    for idx, (i, j) in enumerate(VOIGT_PAIRS):
        b[:, :, idx] = gradient[:, :, i, j] if i == j else gradient[:, :, i, j] + gradient[:, :, j, i]
    return b, volumes


def sfr_element_stiffness(vertices: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """24x24 stiffness of one reduced tetrahedron with vertex coordinates of shape (4, 3)."""
    b, volumes = sfr_b_matrices(np.asarray(vertices, dtype=float), np.arange(4)[None])
    return volumes[0] / 4.0 * np.einsum("qri,rs,qsj->ij", b[0], tangent, b[0])


@dataclass
class ClusterState:
    """
    Committed state of one reduced RVE.

    Attributes:
        material (MaterialPointState): batch state of the quadrature points of the reduced tets, four per tet.
        strain (np.ndarray): committed quadrature point strain tensors of shape (n_points, 3, 3).
        dofs (np.ndarray): committed reduced DOFs of shape (6k,).
        deformation_gradient (np.ndarray): committed macroscopic deformation gradient.
    """
    material: MaterialPointState
    strain: np.ndarray
    dofs: np.ndarray
    deformation_gradient: np.ndarray = field(default_factory=lambda: np.eye(3))

    @classmethod
    def virgin(cls, n_points: int, k: int) -> "ClusterState":
        return cls(material=MaterialPointState.virgin(n_points), strain=np.zeros((n_points, 3, 3)),
                   dofs=np.zeros(6 * k))

    @property
    def n_points(self) -> int:
        return self.strain.shape[0]

    def to_dict(self) -> dict:
        return {"material": self.material.to_dict(), "strain": self.strain.tolist(), "dofs": self.dofs.tolist(),
                "deformation_gradient": self.deformation_gradient.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterState":
        return cls(material=MaterialPointState.from_dict(data["material"]),
                   strain=np.asarray(data["strain"], dtype=float), dofs=np.asarray(data["dofs"], dtype=float),
                   deformation_gradient=np.asarray(data["deformation_gradient"], dtype=float))


@dataclass(frozen=True)
class MicroSolution:
    """
    Converged reduced RVE response.

    Attributes:
        stress (np.ndarray): homogenized 3x3 stress.
        tangent (np.ndarray): homogenized 6x6 Voigt tangent.
        state (ClusterState): trial state to commit.
        displacement (np.ndarray): prolongated nodal displacements (n_nodes, 3).
        cluster_stress (np.ndarray): postprocessed Voigt cluster stresses (k, 6).
        cluster_strain (np.ndarray): postprocessed Voigt cluster strains (k, 6).
        iterations (int): Newton iterations.
        hill_mandel_residual (float): Hill-Mandel mismatch of the converged solution.
    """
    stress: np.ndarray
    tangent: np.ndarray
    state: ClusterState
    displacement: np.ndarray
    cluster_stress: np.ndarray
    cluster_strain: np.ndarray
    iterations: int
    hill_mandel_residual: float = 0.0


def element_reduced_mesh(mesh: Mesh, partition: ClusterPartition) -> ReducedMesh:
    """Reduced mesh of a partition into single node clusters: the element connectivity relabelled by cluster ids.

    Delaunay triangulations of lattice nodes are not unique; the element connectivity is the one whose edges all join
    adjacent clusters.
    """
    if np.any(partition.sizes != 1) or np.any(partition.assignment[mesh.tets] < 0):
        raise ReducedModelError("Only a partition into single node clusters maps onto the element connectivity")
    tets = partition.assignment[mesh.tets]
    negative = signed_volumes(partition.centroids, tets) < 0.0
    tets[negative] = tets[negative][:, [0, 2, 1, 3]]
    logger.info(f"Reduced mesh: {partition.k} single node clusters on the {tets.shape[0]} mesh elements")
    return ReducedMesh(vertices=partition.centroids, tets=tets, readmitted=np.zeros(tets.shape[0], dtype=bool))


class ReducedOrderModel:
    """
    Offline data of the reduced model of one RVE geometry, shareable by every macro point that uses the geometry.

    Every reduced tet carries a material point at each of its four Gauss points. Cluster strains and stresses are the
    volume averages over the reduced tets incident to the cluster and hold for all member nodes. A single node
    cluster has no rotation of its own; its rotation follows the macroscopic one. With one node per cluster the
    reduced mesh is the element connectivity and the reduced solve is the FE solve.

    Attributes:
        mesh (Mesh): FE mesh of the RVE.
        partition (ClusterPartition): solid node clusters.
        graph (ClusterGraph): cluster adjacency.
        reduced_mesh (ReducedMesh): mesh over the centroids.
        restriction (RestrictionOperator): nodal-to-centroid restriction.
        elastic (ElasticConstants): matrix elastic constants.
        hardening (HardeningCurve): matrix hardening.
        boundary_rotations (str): "prescribed" fixes all DOFs of boundary clusters, "free" only their translations
            plus the rotations of two clusters.
    """

    def __init__(self, mesh: Mesh, partition: ClusterPartition, elastic: ElasticConstants, hardening: HardeningCurve,
                 boundary_rotations: str = ROTATIONS_PRESCRIBED_STR):
        if boundary_rotations not in (ROTATIONS_PRESCRIBED_STR, ROTATIONS_FREE_STR):
            raise ValueError(f"Unknown boundary rotation mode '{boundary_rotations}'")
        self.mesh = mesh
        self.partition = partition
        self.elastic = elastic
        self.hardening = hardening
        self.boundary_rotations = boundary_rotations
        self.graph = build_cluster_graph(mesh, partition)
        if np.all(partition.sizes == 1) and np.all(partition.assignment[mesh.tets] >= 0):
            self.reduced_mesh = element_reduced_mesh(mesh, partition)
        else:
            self.reduced_mesh = build_reduced_mesh(partition.centroids, self.graph)
        self.restriction = build_restriction_operator(mesh.nodes, partition)
        self.x0 = mesh.center
        self.volume = mesh.box_volume
        self.elastic_tangent = elastic_tensor(elastic)
        self._build_operators()
        self._build_constraints()

    @property
    def k(self) -> int:
        return self.partition.k

    @property
    def n_dofs(self) -> int:
        return 6 * self.k

    @property
    def n_points(self) -> int:
        return self.point_weights.size

    def _build_operators(self):
        tets = self.reduced_mesh.tets
        m = tets.shape[0]
        b, volumes = sfr_b_matrices(self.reduced_mesh.vertices, tets)
        # the reduced tets span the centroid hull; their weights add up to the solid volume of the FE mesh
        self.volume_scale = float(self.mesh.volumes.sum() / volumes.sum())
        self.point_weights = np.repeat(self.volume_scale * volumes / 4.0, 4)
        self.point_b = b.reshape(4 * m, 6, 24)
        self.tet_dofs = (6 * tets[:, :, None] + np.arange(6)).reshape(m, 24)
        self.point_dofs = np.repeat(self.tet_dofs, 4, axis=0)

        n = self.n_dofs
        rows = np.repeat(self.tet_dofs, 24, axis=1)
        cols = np.tile(self.tet_dofs, (1, 24))
        keys, scatter = np.unique((rows * n + cols).ravel(), return_inverse=True)
        self._indices = (keys % n).astype(np.int64)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(keys // n, minlength=n))]).astype(np.int64)
        self._scatter = scatter.reshape(m, 576)

        # row c weights the points of every reduced tet incident to cluster c
        shape = (m, 4, 4)
        incident = np.broadcast_to(tets[:, :, None], shape).ravel()
        points = np.broadcast_to(np.arange(4 * m).reshape(m, 1, 4), shape).ravel()
        weights = np.broadcast_to(self.point_weights.reshape(m, 1, 4), shape).ravel()
        incidence = sparse.csr_matrix((weights, (incident, points)), shape=(self.k, 4 * m))
        self.incident_volumes = np.asarray(incidence.sum(axis=1)).ravel()
        self.incidence_average = (sparse.diags(1.0 / self.incident_volumes) @ incidence).tocsr()

    def _build_constraints(self):
        boundary = np.unique(self.partition.assignment[rve_boundary_nodes(self.mesh)])
        boundary = boundary[boundary >= 0]
        if boundary.size == 0:
            raise ReducedModelError("No cluster owns an RVE boundary node")
        components = np.tile(np.arange(3), boundary.size)
        dofs = (6 * boundary[:, None] + np.arange(3)).ravel()
        owners = np.repeat(boundary, 3)
        if self.boundary_rotations == ROTATIONS_PRESCRIBED_STR:
            rotated = boundary
        else:
            first = boundary[0]
            distances = np.linalg.norm(self.partition.centroids[boundary] - self.partition.centroids[first], axis=1)
            rotated = np.unique([first, boundary[int(np.argmax(distances))]])
        rotated = np.union1d(rotated, np.flatnonzero(self.partition.sizes == 1))
        dofs = np.concatenate([dofs, (6 * rotated[:, None] + np.arange(3, 6)).ravel()])
        components = np.concatenate([components, np.full(3 * rotated.size, -1)])
        owners = np.concatenate([owners, np.repeat(rotated, 3)])

        order = np.argsort(dofs)
        self.boundary_clusters = boundary
        self.prescribed = PrescribedDofs(dofs=dofs[order], positions=self.partition.centroids[owners[order]],
                                         components=components[order], x0=self.x0, volume=self.volume)
        free = np.ones(self.n_dofs, dtype=bool)
        free[self.prescribed.dofs] = False
        self.free_dofs = np.flatnonzero(free)

    def virgin_state(self) -> ClusterState:
        return ClusterState.virgin(self.n_points, self.k)

    def homogeneous_dofs(self, deformation_gradient: np.ndarray) -> np.ndarray:
        """Reduced DOFs of the homogeneous deformation: restricted translations and the rotation of skew(F - I)."""
        nodal = homogeneous_displacements(self.mesh.nodes, deformation_gradient, self.x0)
        dofs = np.empty((self.k, 6))
        dofs[:, :3] = restrict(self.restriction, nodal)
        dofs[:, 3:] = axial_vector(skew(np.asarray(deformation_gradient) - np.eye(3)))
        return dofs.ravel()

    def point_strains(self, dofs: np.ndarray) -> np.ndarray:
        """Voigt strains at the quadrature points, shape (n_points, 6)."""
        return np.einsum("pri,pi->pr", self.point_b, np.asarray(dofs, dtype=float)[self.point_dofs])

    def cluster_average(self, point_values: np.ndarray) -> np.ndarray:
        """Volume average of quadrature point values over the reduced tets incident to every cluster."""
        return self.incidence_average @ np.asarray(point_values, dtype=float)

    def cluster_strains(self, dofs: np.ndarray) -> np.ndarray:
        return self.cluster_average(self.point_strains(dofs))

    def internal_force(self, point_stress: np.ndarray) -> np.ndarray:
        """Assembles f = sum_p w_p B_p^T sigma_p from Voigt quadrature point stresses."""
        local = self.point_weights[:, None] * np.einsum("pri,pr->pi", self.point_b, point_stress)
        return np.bincount(self.point_dofs.ravel(), weights=local.ravel(), minlength=self.n_dofs)

    def stiffness(self, point_tangents: np.ndarray) -> sparse.csr_matrix:
        weighted = self.point_weights[:, None, None] * np.einsum("prs,psj->prj", point_tangents, self.point_b)
        element = np.einsum("pri,prj->pij", self.point_b, weighted).reshape(-1, 4, 576).sum(axis=1)
        data = np.bincount(self._scatter.ravel(), weights=element.ravel(), minlength=self._indices.size)
        return sparse.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(self.n_dofs, self.n_dofs))

    def homogenized_stress(self, point_stress: np.ndarray) -> np.ndarray:
        """Volume average of the quadrature point stresses over the RVE box, shape (3, 3)."""
        return voigt_to_stress(self.point_weights @ np.asarray(point_stress, dtype=float) / self.volume)

    def nodal_field(self, cluster_values: np.ndarray) -> np.ndarray:
        """Broadcasts per-cluster values to the member nodes; unclustered nodes get zeros."""
        values = np.asarray(cluster_values)
        nodal = np.zeros((self.mesh.n_nodes,) + values.shape[1:])
        nodes = self.partition.clustered_nodes
        nodal[nodes] = values[self.partition.assignment[nodes]]
        return nodal

    @classmethod
    def construct_reduced_order_model(cls, mesh: Mesh, k: int, elastic: ElasticConstants, hardening: HardeningCurve,
                                      seed: int = 0,
                                      boundary_rotations: str = ROTATIONS_PRESCRIBED_STR) -> "ReducedOrderModel":
        """Clusters the solid nodes of an RVE mesh and builds the reduced model."""
        partition = kmeans(mesh.nodes, k, seed=seed, mask=solid_node_mask(mesh))
        return cls(mesh, partition, elastic, hardening, boundary_rotations=boundary_rotations)


def _prescribed_values(rom: ReducedOrderModel, deformation_gradient: np.ndarray) -> np.ndarray:
    strain = deformation_gradient - np.eye(3)
    values = np.zeros(rom.prescribed.dofs.size)
    translational = rom.prescribed.components >= 0
    translations = (rom.prescribed.positions - rom.x0) @ strain.T
    values[translational] = translations[translational, rom.prescribed.components[translational]]
    rotation = axial_vector(skew(strain))
    values[~translational] = rotation[rom.prescribed.dofs[~translational] % 6 - 3]
    return values


def postprocess_cluster_fields(rom: ReducedOrderModel, dofs: np.ndarray,
                               point_stress: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cluster stresses and strains as volume averages over the quadrature points of the incident reduced tets.

    Returns:
        tuple[np.ndarray, np.ndarray]: Voigt stresses and strains of shape (k, 6).
    """
    return rom.cluster_average(point_stress), rom.cluster_strains(dofs)


def micro_solve(rom: ReducedOrderModel, deformation_gradient: np.ndarray, state: ClusterState,
                tol: float = TOL_NEWTON, max_iters: int = MAX_NEWTON_ITERS) -> MicroSolution:
    """Solves the reduced RVE problem for a macroscopic deformation gradient from a committed cluster state.

    Boundary clusters follow the homogeneous deformation; Newton iterations on the remaining reduced DOFs settle the
    fluctuation. The returned state is a trial state.

    Args:
        rom (ReducedOrderModel): offline reduced model.
        deformation_gradient (np.ndarray): macroscopic deformation gradient.
        state (ClusterState): committed state.
        tol (float): relative residual tolerance.
        max_iters (int): Newton iteration cap.

    Returns:
        MicroSolution: homogenized response, trial state and fields.
    """
    deformation_gradient = check_deformation_gradient(deformation_gradient)
    if state.n_points != rom.n_points:
        raise ReducedModelError(f"Cluster state holds {state.n_points} material points, the reduced model "
                                f"{rom.n_points}")
    hom = rom.homogeneous_dofs(deformation_gradient)
    dofs = hom + state.dofs - rom.homogeneous_dofs(state.deformation_gradient)
    dofs[rom.prescribed.dofs] = _prescribed_values(rom, deformation_gradient)
    free = rom.free_dofs
    solver = DirectSolver()

    for iteration in range(max_iters + 1):
        strains = rom.point_strains(dofs)
        trial, tangents = return_map(state.material, voigt_to_strain(strains) - state.strain, rom.elastic,
                                     rom.hardening)
        stress = stress_to_voigt(trial.stress)
        force = rom.internal_force(stress)
        residual = -force[free]
        norm = float(np.linalg.norm(residual))
        threshold = max(tol * float(np.linalg.norm(force)), TOL_NEWTON_ABS)
        logger.debug(f"Reduced Newton iteration {iteration}: residual {norm:.3e}")
        if norm <= threshold:
            break
        if iteration == max_iters:
            raise ConvergenceError(f"Reduced Newton solve did not converge in {max_iters} iterations",
                                   {NEWTON_ITER_STR: iteration, RESIDUAL_STR: norm})
        stiffness = rom.stiffness(tangents)
        try:
            increment, _ = solver.solve(stiffness[free][:, free], residual, np.zeros(free.size))
        except ConvergenceError as exc:
            raise ReducedModelError("Reduced stiffness is singular", exc.diagnostics) from exc
        dofs[free] += increment

    stiffness = rom.stiffness(tangents)
    try:
        probes = condensation_probes(stiffness, rom.prescribed)
    except ConvergenceError as exc:
        raise ReducedModelError("Reduced stiffness is singular", exc.diagnostics) from exc
    tangent = condensed_tangent(stiffness, rom.prescribed, probes)
    homogenized = rom.homogenized_stress(stress)

    cluster_stress, cluster_strain = postprocess_cluster_fields(rom, dofs, stress)
    displacement = (homogeneous_displacements(rom.mesh.nodes, deformation_gradient, rom.x0)
                    + prolongate(rom.partition, rom.mesh.nodes, dofs - hom))
    new_state = ClusterState(material=trial, strain=voigt_to_strain(strains), dofs=dofs.copy(),
                             deformation_gradient=deformation_gradient.copy())
    return MicroSolution(stress=homogenized, tangent=tangent, state=new_state, displacement=displacement,
                         cluster_stress=cluster_stress, cluster_strain=cluster_strain, iterations=iteration,
                         hill_mandel_residual=hill_mandel_residual(force, probes, homogenized, rom.volume))


def cluster_von_mises(solution: MicroSolution) -> np.ndarray:
    """Von Mises stress of every cluster."""
    return von_mises(voigt_to_stress(solution.cluster_stress))

"""
Module for spatial domain decomposition of mesh nodes by k-means clustering.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from dcasim.globals import *
from dcasim.exceptions import ConfigError, ConvergenceError
from dcasim.mesh import Mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterPartition:
    """
    Partition of the clustered nodes of a mesh into k non-empty clusters.

    Attributes:
        k (int): number of clusters.
        assignment (np.ndarray): cluster id of every node, -1 for nodes excluded by the phase mask.
        centroids (np.ndarray): arithmetic mean coordinates of the cluster members, shape (k, 3).
        objective (float): within-cluster sum of squared distances.
    """
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    objective: float = 0.0

    @cached_property
    def members(self) -> list[np.ndarray]:
        """Node indices of every cluster in ascending order."""
        order = np.argsort(self.assignment, kind="stable")
        sorted_ids = self.assignment[order]
        bounds = np.searchsorted(sorted_ids, np.arange(self.k + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.k)]

    @property
    def clustered_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.assignment >= 0)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment[self.assignment >= 0], minlength=self.k)

    def to_dict(self) -> dict:
        return {"k": self.k, "assignment": self.assignment.tolist()}

    @classmethod
    def from_dict(cls, data: dict, coords: np.ndarray) -> "ClusterPartition":
        """Rebuilds a partition from its JSON form, recomputing centroids from the node coordinates."""
        assignment = np.asarray(data["assignment"], dtype=np.int64)
        k = int(data["k"])
        if assignment.size != coords.shape[0]:
            raise ConfigError(f"Partition covers {assignment.size} nodes, mesh has {coords.shape[0]}")
        centroids = _cluster_means(coords[assignment >= 0], assignment[assignment >= 0], k)
        return cls(k=k, assignment=assignment, centroids=centroids)


def _cluster_means(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise ConfigError(f"Clusters {np.flatnonzero(counts == 0).tolist()} have no members")
    sums = np.stack([np.bincount(labels, weights=points[:, d], minlength=k) for d in range(points.shape[1])], axis=1)
    return sums / counts[:, None]


def _objective(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(np.sum((points - centroids[labels]) ** 2))


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _repair_empty_clusters(labels: np.ndarray, distances: np.ndarray, k: int) -> np.ndarray:
    """Moves the point farthest from its centroid into every empty cluster."""
    labels = labels.copy()
    distances = distances.copy()
    for cluster in np.flatnonzero(np.bincount(labels, minlength=k) == 0):
        counts = np.bincount(labels, minlength=k)
        # only take points whose cluster keeps at least one member
        candidates = np.where(counts[labels] > 1, distances, -np.inf)
        farthest = int(np.argmax(candidates))
        logger.debug(f"Cluster {cluster} emptied; reseeding at point {farthest}")
        labels[farthest] = cluster
        distances[farthest] = -np.inf
    return labels


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    centroids = _kmeans_plus_plus(points, k, rng)
    labels = np.full(points.shape[0], -1, dtype=np.int64)
    objective = np.inf
    for iteration in range(1, max_iter + 1):
        distances, new_labels = cKDTree(centroids).query(points)
        new_labels = _repair_empty_clusters(new_labels.astype(np.int64), distances, k)
        centroids = _cluster_means(points, new_labels, k)
        new_objective = _objective(points, new_labels, centroids)
        if new_objective > objective * (1.0 + 1e-12) + 1e-300:
            raise ConvergenceError("k-means objective increased between Lloyd iterations",
                                   {"iteration": iteration, "previous": objective, "current": new_objective})
        objective = new_objective
        if np.array_equal(new_labels, labels):
            logger.debug(f"Lloyd iteration reached a fixed point after {iteration} iterations")
            break
        labels = new_labels
    else:
        logger.warning(f"k-means stopped at the iteration cap {max_iter} before reaching a fixed point")
    return new_labels, centroids, objective


def kmeans(coords: np.ndarray, k: int, seed: int = 0, mask: np.ndarray | None = None, n_init: int = 1,
           max_iter: int = MAX_KMEANS_ITERS) -> ClusterPartition:
    """Partitions points by k-means with k-means++ seeding and Lloyd iterations.

    Args:
        coords (np.ndarray): point coordinates of shape (n, 3).
        k (int): number of clusters.
        seed (int): seed of the random generator driving the seeding; equal inputs give equal partitions.
        mask (np.ndarray | None): boolean array selecting the points to cluster, e.g. the solid phase. Excluded
            points get the assignment -1.
        n_init (int): number of seeded restarts; the partition with the smallest objective is kept.
        max_iter (int): Lloyd iteration cap.

    Returns:
        ClusterPartition: the partition.
    """
    coords = np.asarray(coords, dtype=float)
    selected = np.ones(coords.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if selected.shape != (coords.shape[0],):
        raise ConfigError(f"Phase mask of shape {selected.shape} does not match {coords.shape[0]} points")
    points = coords[selected]
    if points.shape[0] == 0:
        raise ConfigError("Cannot cluster an empty point set")
    if not 1 <= k <= points.shape[0]:
        raise ConfigError(f"Cluster count k={k} must lie in [1, {points.shape[0]}]")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(n_init, 1)):
        labels, centroids, objective = _lloyd(points, k, rng, max_iter)
        if best is None or objective < best[2]:
            best = (labels, centroids, objective)

    assignment = np.full(coords.shape[0], -1, dtype=np.int64)
    assignment[selected] = best[0]
    logger.info(f"Clustered {points.shape[0]} points into {k} clusters (objective {best[2]:.6g})")
    return ClusterPartition(k=k, assignment=assignment, centroids=best[1], objective=best[2])


def nodal_volumes(mesh: Mesh) -> np.ndarray:
    """Tributary volume of every node: a quarter of the volume of each element containing the node."""
    weights = np.repeat(mesh.volumes / 4.0, 4)
    return np.bincount(mesh.tets.ravel(), weights=weights, minlength=mesh.n_nodes)


def cluster_volumes(mesh: Mesh, partition: ClusterPartition) -> np.ndarray:
    """Tributary volume of every cluster. The volumes sum to the mesh volume when all element nodes are clustered."""
    if partition.assignment.size != mesh.n_nodes:
        raise ValueError(f"Partition covers {partition.assignment.size} nodes, mesh has {mesh.n_nodes}")
    if np.any(partition.sizes == 0):
        raise ValueError(f"Clusters {np.flatnonzero(partition.sizes == 0).tolist()} have no member nodes")
    clustered = partition.clustered_nodes
    return np.bincount(partition.assignment[clustered], weights=nodal_volumes(mesh)[clustered],
                       minlength=partition.k)


def solid_node_mask(mesh: Mesh) -> np.ndarray:
    """Nodes that belong to at least one element; pore interiors carry no elements."""
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[np.unique(mesh.tets)] = True
    return mask

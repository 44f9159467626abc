import pytest

import numpy as np

from dcasim.globals import *
from dcasim.clustering import ClusterPartition, cluster_volumes, kmeans, nodal_volumes, solid_node_mask
from dcasim.exceptions import ConfigError
from dcasim.mesh import Mesh


def two_blobs(n: int = 20, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(0.0, 0.1, size=(n, 3)), rng.normal(10.0, 0.1, size=(n, 3))])


class TestKmeans:

    def test_separates_obvious_clusters(self):
        points = two_blobs()

        partition = kmeans(points, 2, seed=3)

        assert partition.k == 2
        assert len(set(partition.assignment[:20])) == 1
        assert len(set(partition.assignment[20:])) == 1
        assert partition.assignment[0] != partition.assignment[-1]
        np.testing.assert_array_equal(np.sort(partition.sizes), [20, 20])

    def test_same_seed_gives_same_partition(self, bracket_mesh):
        first = kmeans(bracket_mesh.nodes, 7, seed=11)
        second = kmeans(bracket_mesh.nodes, 7, seed=11)

        np.testing.assert_array_equal(first.assignment, second.assignment)
        np.testing.assert_allclose(first.centroids, second.centroids)

    def test_centroids_are_member_means(self, bracket_mesh):
        partition = kmeans(bracket_mesh.nodes, 5, seed=1)

        for cluster, members in enumerate(partition.members):
            np.testing.assert_allclose(partition.centroids[cluster], bracket_mesh.nodes[members].mean(axis=0))

    def test_objective_is_the_within_cluster_sum_of_squares(self, bracket_mesh):
        partition = kmeans(bracket_mesh.nodes, 4, seed=0)

        expected = np.sum((bracket_mesh.nodes - partition.centroids[partition.assignment]) ** 2)

        assert partition.objective == pytest.approx(expected)

    def test_more_restarts_never_increase_the_objective(self, bracket_mesh):
        single = kmeans(bracket_mesh.nodes, 6, seed=5, n_init=1)
        several = kmeans(bracket_mesh.nodes, 6, seed=5, n_init=4)

        assert several.objective <= single.objective + 1e-9

    def test_k_equal_to_point_count_gives_singletons(self, box_mesh):
        partition = kmeans(box_mesh.nodes, box_mesh.n_nodes)

        np.testing.assert_array_equal(partition.sizes, np.ones(box_mesh.n_nodes))
        assert partition.objective == pytest.approx(0.0)

    def test_mask_excludes_points(self):
        points = two_blobs()
        mask = np.zeros(40, dtype=bool)
        mask[:20] = True

        partition = kmeans(points, 3, mask=mask)

        assert np.all(partition.assignment[20:] == -1)
        assert np.all(partition.assignment[:20] >= 0)
        np.testing.assert_array_equal(partition.clustered_nodes, np.arange(20))

    @pytest.mark.parametrize("k", [0, 41])
    def test_invalid_k_raises(self, k):
        with pytest.raises(ConfigError, match="Cluster count"):
            kmeans(two_blobs(), k)

    def test_empty_selection_raises(self):
        with pytest.raises(ConfigError, match="empty"):
            kmeans(two_blobs(), 1, mask=np.zeros(40, dtype=bool))

    def test_mask_shape_is_checked(self):
        with pytest.raises(ConfigError, match="mask"):
            kmeans(two_blobs(), 2, mask=np.ones(3, dtype=bool))


class TestClusterPartition:

    def test_dict_round_trip_recomputes_centroids(self, bracket_mesh):
        partition = kmeans(bracket_mesh.nodes, 4, seed=2)

        restored = ClusterPartition.from_dict(partition.to_dict(), bracket_mesh.nodes)

        np.testing.assert_array_equal(restored.assignment, partition.assignment)
        np.testing.assert_allclose(restored.centroids, partition.centroids)

    def test_from_dict_checks_the_node_count(self, box_mesh):
        with pytest.raises(ConfigError, match="Partition covers"):
            ClusterPartition.from_dict({"k": 1, "assignment": [0, 0]}, box_mesh.nodes)

    def test_from_dict_rejects_empty_clusters(self):
        with pytest.raises(ConfigError, match="no members"):
            ClusterPartition.from_dict({"k": 3, "assignment": [0, 0, 1]}, np.zeros((3, 3)))


class TestVolumes:

    def test_nodal_volumes_sum_to_the_mesh_volume(self, bracket_mesh):
        assert nodal_volumes(bracket_mesh).sum() == pytest.approx(bracket_mesh.volumes.sum())

    def test_cluster_volumes_sum_to_the_mesh_volume(self, bracket_mesh):
        partition = kmeans(bracket_mesh.nodes, 5, seed=0)

        volumes = cluster_volumes(bracket_mesh, partition)

        assert volumes.shape == (5,)
        assert volumes.sum() == pytest.approx(bracket_mesh.volumes.sum())

    def test_cluster_volumes_check_the_partition_size(self, box_mesh, bracket_mesh):
        with pytest.raises(ValueError, match="Partition covers"):
            cluster_volumes(box_mesh, kmeans(bracket_mesh.nodes, 2))

    def test_solid_node_mask_drops_nodes_without_elements(self):
        nodes = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [5.0, 5.0, 5.0]]

        mask = solid_node_mask(Mesh(nodes, [[0, 1, 2, 3]]))

        np.testing.assert_array_equal(mask, [True, True, True, True, False])

    def test_voxel_meshes_carry_no_orphan_nodes(self, porous_rve_mesh):
        assert solid_node_mask(porous_rve_mesh).all()

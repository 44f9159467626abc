import logging

from dcasim.clustering import ClusterPartition, cluster_volumes, kmeans, solid_node_mask
from dcasim.config import Config
from dcasim.data_io import write_json
from dcasim.globals import *
from dcasim.mesh import Mesh, load_mesh, write_vtk

logger = logging.getLogger(__name__)


def run_cluster_process(config: Config) -> ClusterPartition:
    """Public function for clustering the solid nodes of the configured mesh into `clustering.k_macro` clusters.
    Writes the assignment JSON and a VTK file colored by cluster.

    Args:
        config (Config): run config.

    Returns:
        ClusterPartition: the partition.
    """
    mesh = load_mesh(config.get_mesh_path())
    partition = kmeans(mesh.nodes, config.get_k_macro(), seed=config.get_seed(), mask=solid_node_mask(mesh))
    _write_partition(mesh, partition, config)
    return partition


def _write_partition(mesh: Mesh, partition: ClusterPartition, config: Config):
    out_dir = config.get_out_dir()
    document = partition.to_dict()
    document["sizes"] = partition.sizes.tolist()
    document["volumes"] = cluster_volumes(mesh, partition).tolist()
    document["objective"] = partition.objective
    write_json(document, out_dir / "clusters.json")
    # elements take the cluster of their first node
    write_vtk(mesh, {CLUSTER_STR: partition.assignment.astype(float)},
              {CLUSTER_STR: partition.assignment[mesh.tets[:, 0]].astype(float)}, out_dir / "clusters.vtk")

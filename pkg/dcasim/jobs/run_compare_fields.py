import logging

import numpy as np

from dcasim.clustering import nodal_volumes, solid_node_mask
from dcasim.computations import comparison_table
from dcasim.config import Config
from dcasim.data_io import write_csv, write_json
from dcasim.globals import *
from dcasim.homogenization import FieldComparison, compare_fields
from dcasim.mesh import Mesh, load_mesh, write_vtk
from dcasim.models.base_models import BaseMicroModel, MicroResponse
from dcasim.multiscale_solver import construct_micro_model

logger = logging.getLogger(__name__)


def run_compare_fields_process(config: Config) -> FieldComparison:
    """Public function for comparing the nodal von Mises stress of the reduced model against the full-field solve of
    the same RVE at the end of the configured deformation path.

    Args:
        config (Config): run config; `paths.mesh` is the RVE mesh.

    Returns:
        FieldComparison: error and histogram of the reduced field against the full-field reference.
    """
    mesh = load_mesh(config.get_mesh_path())
    deformation_gradients = config.get_deformation_path()
    reference = _solve_path(construct_micro_model(config, mesh, MICRO_FULL_FIELD_STR), deformation_gradients)
    reduced = _solve_path(construct_micro_model(config, mesh, MICRO_ROM_STR), deformation_gradients)

    reference_nodal = element_to_nodal(mesh, reference.fields[VON_MISES_STR])
    reduced_nodal = reduced.fields[VON_MISES_STR]
    solid = solid_node_mask(mesh)
    comparison = compare_fields(reduced_nodal[solid], reference_nodal[solid])

    out_dir = config.get_out_dir()
    write_json({"error": comparison.error, "n_points": int(solid.sum()), "k": config.get_k_micro(),
                "reference_stress": reference.stress, "reduced_stress": reduced.stress},
               out_dir / "comparison.json")
    write_csv(comparison_table(comparison), out_dir / "comparison_histogram.csv")
    write_vtk(mesh, {"von_mises_reference": reference_nodal, "von_mises_reduced": reduced_nodal,
                     "von_mises_difference": reduced_nodal - reference_nodal}, None, out_dir / "comparison.vtk")
    logger.info(f"Field error {comparison.error:.4g} over {int(solid.sum())} nodes")
    return comparison


def _solve_path(micro_model: BaseMicroModel, deformation_gradients: list[np.ndarray]) -> MicroResponse:
    response = None
    for deformation_gradient in deformation_gradients:
        response = micro_model.solve(deformation_gradient, commit=True)
    return response


def element_to_nodal(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Volume weighted average of element values over the elements sharing each node; nodes without elements get 0."""
    weights = np.repeat(mesh.volumes / 4.0, 4)
    totals = np.bincount(mesh.tets.ravel(), weights=weights * np.repeat(np.asarray(values, dtype=float), 4),
                         minlength=mesh.n_nodes)
    volumes = nodal_volumes(mesh)
    return np.divide(totals, volumes, out=np.zeros(mesh.n_nodes), where=volumes > 0.0)

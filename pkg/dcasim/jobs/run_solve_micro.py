import logging

import numpy as np
import pandas as pd

from dcasim.computations import stress_strain_table, toughness_from_table
from dcasim.config import Config
from dcasim.data_io import write_csv, write_json
from dcasim.globals import *
from dcasim.material import von_mises
from dcasim.mesh import load_mesh, write_rve_fields
from dcasim.models.base_models import BaseMicroModel, MicroResponse
from dcasim.multiscale_solver import construct_micro_model

logger = logging.getLogger(__name__)


def run_solve_micro_process(config: Config) -> pd.DataFrame:
    """Public function for driving one RVE along the configured deformation path. Writes the homogenized
    stress-strain CSV, a VTK file of the final fields and a JSON summary with the toughness.

    Args:
        config (Config): run config; `paths.mesh` is the RVE mesh.

    Returns:
        pd.DataFrame: the stress-strain table.
    """
    mesh = load_mesh(config.get_mesh_path())
    micro_model = construct_micro_model(config, mesh)
    deformation_gradients = config.get_deformation_path()
    responses = _run_deformation_path(micro_model, deformation_gradients)

    out_dir = config.get_out_dir()
    table = stress_strain_table(deformation_gradients, [response.stress for response in responses])
    write_csv(table, out_dir / "stress_strain.csv")
    write_rve_fields(mesh, responses[-1].fields, out_dir / "micro.vtk")
    write_json({"model": micro_model.MODEL_NAME, "k": config.get_k_micro(), "increments": len(responses),
                "toughness": toughness_from_table(table),
                "newton_iterations": [response.iterations for response in responses],
                "final_stress": responses[-1].stress, "final_tangent": responses[-1].tangent},
               out_dir / "summary.json")
    return table


def _run_deformation_path(micro_model: BaseMicroModel, deformation_gradients: list[np.ndarray]) -> list[MicroResponse]:
    responses = []
    for increment, deformation_gradient in enumerate(deformation_gradients, start=1):
        response = micro_model.solve(deformation_gradient, commit=True)
        logger.info(f"Increment {increment}/{len(deformation_gradients)}: von Mises "
                    f"{float(von_mises(response.stress)):.4g} MPa in {response.iterations} iterations")
        responses.append(response)
    return responses

import logging

import numpy as np

from dcasim.config import Config
from dcasim.data_io import write_json
from dcasim.globals import *
from dcasim.general_functions import stress_to_voigt
from dcasim.homogenization import fd_tangent
from dcasim.mesh import load_mesh
from dcasim.models.base_models import BaseMicroModel
from dcasim.multiscale_solver import construct_micro_model

logger = logging.getLogger(__name__)


def run_homogenize_process(config: Config) -> list[dict]:
    """Public function for homogenizing an RVE along the configured deformation path. Every increment reports the
    homogenized stress, the consistent tangent and the Hill-Mandel residual, plus the finite difference tangent and
    its relative deviation when `micro.fd_check` is set.

    Args:
        config (Config): run config; `paths.mesh` is the RVE mesh.

    Returns:
        list[dict]: one record per increment.
    """
    mesh = load_mesh(config.get_mesh_path())
    micro_model = construct_micro_model(config, mesh)
    fd_check = config.get_micro_settings()["fd_check"]
    records = [_homogenize_increment(micro_model, F, increment, fd_check)
               for increment, F in enumerate(config.get_deformation_path(), start=1)]
    write_json({"model": micro_model.MODEL_NAME, "increments": records}, config.get_out_dir() / "homogenized.json")
    return records


def _homogenize_increment(micro_model: BaseMicroModel, deformation_gradient: np.ndarray, increment: int,
                          fd_check: bool) -> dict:
    record = {INCREMENT_STR: increment, "deformation_gradient": deformation_gradient}
    if fd_check:
        # finite differences first; they overwrite the trial state
        record["fd_tangent"] = fd_tangent(micro_model, deformation_gradient)
    response = micro_model.solve(deformation_gradient, commit=True)
    record.update({"stress": response.stress, "stress_voigt": stress_to_voigt(response.stress),
                   "tangent": response.tangent, HILL_MANDEL_STR: response.hill_mandel_residual,
                   NEWTON_ITER_STR: response.iterations})
    if fd_check:
        scale = np.abs(response.tangent).max()
        record["fd_tangent_error"] = float(np.abs(record["fd_tangent"] - response.tangent).max() / scale)
    logger.info(f"Increment {increment}: Hill-Mandel residual {response.hill_mandel_residual:.3e}")
    return record

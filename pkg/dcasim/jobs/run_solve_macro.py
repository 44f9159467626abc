import logging
from pathlib import Path

from dcasim.clustering import kmeans
from dcasim.computations import reaction_displacement_table
from dcasim.config import Config
from dcasim.data_io import write_csv, write_json
from dcasim.fem_core import SolutionHistory, StepResult
from dcasim.general_functions import voigt_to_stress
from dcasim.globals import *
from dcasim.macro_solver import dns_newton, idcg_newton
from dcasim.material import von_mises
from dcasim.mesh import Mesh, load_mesh, write_vtk
from dcasim.models.material_models import J2MaterialModel
from dcasim.multiscale_solver import loaded_dofs

logger = logging.getLogger(__name__)


def run_solve_macro_process(config: Config) -> SolutionHistory:
    """Public function for the single-scale elastoplastic solve of the configured mesh with IDCG or Jacobi-PCG Newton.
    Writes a VTK file per converged step, the reaction-force CSV and a JSON convergence log.

    Args:
        config (Config): run config.

    Returns:
        SolutionHistory: the converged steps.
    """
    mesh = load_mesh(config.get_mesh_path())
    dof_map = config.get_boundary_conditions(mesh)
    model = J2MaterialModel(mesh.n_elements, config.get_elastic_constants(), config.get_hardening_curve())
    settings = config.get_solver_settings()
    out_dir = config.get_out_dir()
    options = {"tol_cg": settings["tol_cg"], "max_cg_iters": settings["max_cg_iters"],
               "tol_newton": settings["tol_newton"], "max_newton_iters": settings["max_newton_iters"],
               "max_bisections": settings["max_bisections"],
               "on_step": lambda result: _write_step(mesh, result, out_dir)}

    if settings["method"] == SOLVER_IDCG_STR:
        partition = kmeans(mesh.nodes, min(config.get_k_macro(), mesh.n_nodes), seed=config.get_seed())
        history = idcg_newton(mesh, dof_map, config.get_load_factors(), model, partition, **options)
    else:
        history = dns_newton(mesh, dof_map, config.get_load_factors(), model, **options)

    reaction_dofs = loaded_dofs(dof_map, mesh, config.get_reaction_node_set())
    write_csv(reaction_displacement_table(history.steps, reaction_dofs, reaction_dofs), out_dir / "reaction_force.csv")
    _write_convergence_log(history, settings["method"], out_dir / "convergence.json")
    return history


def _write_step(mesh: Mesh, result: StepResult, out_dir: Path):
    write_vtk(mesh, {DISPLACEMENT_FIELD_STR: result.displacement.reshape(-1, 3)},
              {VON_MISES_STR: von_mises(voigt_to_stress(result.stresses)), "stress": result.stresses},
              out_dir / f"step_{result.step:04d}.vtk")


def _write_convergence_log(history: SolutionHistory, method: str, path: Path):
    """JSON log with the linear solver iterations of every Newton iteration of every step."""
    write_json({"method": method,
                "steps": [{STEP_STR: result.step, LOAD_FACTOR_STR: result.load_factor,
                           CG_ITER_STR: result.cg_iterations, RESIDUAL_STR: result.residual_norms,
                           YIELDED_FRAC_STR: result.yielded_fractions} for result in history.steps],
                "total_cg_iterations": sum(sum(result.cg_iterations) for result in history.steps)},
               path)

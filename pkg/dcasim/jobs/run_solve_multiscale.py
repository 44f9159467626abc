from dcasim.config import Config
from dcasim.fem_core import SolutionHistory
from dcasim.multiscale_solver import MultiscaleSolver


def run_solve_multiscale_process(config: Config) -> SolutionHistory:
    """Public function for the multiscale solve. Resumes from the configured checkpoint when it exists.

    Args:
        config (Config): run config with the macro mesh in `paths.mesh` and the RVE pool in `paths.rve_meshes`.

    Returns:
        SolutionHistory: the steps converged by this run.
    """
    solver = MultiscaleSolver.construct_multiscale_solver(config=config)
    return solver.solve()

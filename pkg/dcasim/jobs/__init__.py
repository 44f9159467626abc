from .run_generate_rve import run_generate_rve_process
from .run_cluster import run_cluster_process
from .run_solve_micro import run_solve_micro_process
from .run_solve_macro import run_solve_macro_process
from .run_homogenize import run_homogenize_process
from .run_solve_multiscale import run_solve_multiscale_process
from .run_compare_fields import run_compare_fields_process

__all__ = [
    "run_generate_rve_process", "run_cluster_process", "run_solve_micro_process", "run_solve_macro_process",
    "run_homogenize_process", "run_solve_multiscale_process", "run_compare_fields_process",
]

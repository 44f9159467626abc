"""
Module for the overall multiscale process: a macroscale Newton solve whose element stresses and tangents come from
RVE micro models attached to every macro integration point.
"""
import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd

from dcasim.globals import *
from dcasim.clustering import ClusterPartition, kmeans
from dcasim.computations import reaction_displacement_table
from dcasim.config import Config
from dcasim.data_io import CheckpointStore, DeltaWriter, write_csv, write_json
from dcasim.exceptions import ConfigError, ConvergenceError
from dcasim.fem_core import SolutionHistory, StepResult
from dcasim.macro_solver import dns_newton, idcg_newton
from dcasim.material import ElasticConstants, HardeningCurve, von_mises
from dcasim.general_functions import voigt_to_stress
from dcasim.mesh import DofMap, Mesh, load_mesh, write_rve_fields, write_vtk
from dcasim.micro_rom import ReducedOrderModel
from dcasim.models.base_models import BaseMicroModel
from dcasim.models.material_models import MultiscaleMaterialModel
from dcasim.models.micro_models import ClusterRomMicroModel, FullFieldMicroModel

logger = logging.getLogger(__name__)

HISTORY_DIR = "history"
REACTION_TABLE = "reaction_force"
CONVERGENCE_TABLE = "convergence"


def assign_rves(n_elements: int, pool_size: int, mode: str = ASSIGNMENT_UNIFORM_STR, seed: int = 0) -> np.ndarray:
    """RVE index of every macro element: the first RVE everywhere, or a seeded random draw from the pool."""
    if pool_size < 1:
        raise ConfigError("At least one RVE mesh is required")
    if mode == ASSIGNMENT_UNIFORM_STR:
        return np.zeros(n_elements, dtype=np.int64)
    if mode == ASSIGNMENT_RANDOM_STR:
        return np.random.default_rng(seed).integers(pool_size, size=n_elements)
    raise ConfigError(f"Unknown RVE assignment mode '{mode}'")


def build_micro_models(rve_meshes: list[Mesh], assignment: np.ndarray, elastic: ElasticConstants,
                       hardening: HardeningCurve, model: str = MICRO_ROM_STR, k: int = 100, seed: int = 0,
                       boundary_rotations: str = ROTATIONS_PRESCRIBED_STR,
                       tol: float = TOL_NEWTON) -> list[BaseMicroModel]:
    """One micro model per macro element. Reduced models of equal RVE geometries share their offline data."""
    if model == MICRO_ROM_STR:
        roms = {}
        micro_models = []
        for rve in assignment.tolist():
            if rve not in roms:
                rve_k = min(k, int(np.unique(rve_meshes[rve].tets).size))
                roms[rve] = ReducedOrderModel.construct_reduced_order_model(
                    rve_meshes[rve], rve_k, elastic, hardening, seed=seed, boundary_rotations=boundary_rotations)
            micro_models.append(ClusterRomMicroModel(roms[rve], tol=tol))
        return micro_models
    if model == MICRO_FULL_FIELD_STR:
        return [FullFieldMicroModel(rve_meshes[rve], elastic, hardening, tol=tol) for rve in assignment.tolist()]
    raise ConfigError(f"Unknown micro model '{model}'")


def construct_micro_model(config: Config, mesh: Mesh, model: str | None = None) -> BaseMicroModel:
    """Single RVE model with the material, cluster count and micro settings of a config."""
    micro = config.get_micro_settings()
    return build_micro_models([mesh], np.zeros(1, dtype=np.int64), config.get_elastic_constants(),
                              config.get_hardening_curve(), model=model or micro["model"], k=config.get_k_micro(),
                              seed=config.get_seed(), boundary_rotations=micro["boundary_rotations"],
                              tol=config.get_solver_settings()["micro_tol_newton"])[0]


def loaded_dofs(dof_map: DofMap, mesh: Mesh, node_set: str) -> np.ndarray:
    """Constrained DOFs of a node set with nonzero prescribed values, or all its constrained DOFs if none move."""
    set_dofs = dof_map.node_dofs(mesh.get_node_set(node_set)).ravel()
    constrained = dof_map.constrained_dofs
    in_set = np.isin(constrained, set_dofs)
    moving = in_set & (dof_map.constrained_values != 0.0)
    return constrained[moving] if moving.any() else constrained[in_set]


class MultiscaleSolver:
    """
    Class for solving a macroscale boundary value problem with RVE micro models at every element.

    Attributes:
        mesh (Mesh): the macroscale mesh.
        dof_map (DofMap): macroscale constraints at load factor 1.
        load_factors (list[float]): load factors of the macro steps.
        partition (ClusterPartition): macro node clusters of the deflation basis.
        micro_models (list[BaseMicroModel]): one micro model per macro element.
        assignment (np.ndarray): RVE index of every macro element.
        solver_settings (dict): tolerances and iteration caps.
        out_dir (Path): output directory.
        reaction_dofs (np.ndarray): DOFs of the reported reaction force and displacement.
        threads (int): worker threads of the micro solves.
        checkpoint (CheckpointStore | None): checkpoint of the committed state.
        snapshot_elements (list[int] | None): macro elements whose RVE fields are written with the results, None for
            the element of peak von Mises stress.
    """
    def __init__(self, mesh: Mesh, dof_map: DofMap, load_factors: list[float], partition: ClusterPartition,
                 micro_models: list[BaseMicroModel], assignment: np.ndarray, solver_settings: dict, out_dir: Path,
                 reaction_dofs: np.ndarray, threads: int = 1, checkpoint: CheckpointStore | None = None,
                 snapshot_elements: list[int] | None = None):
        if len(micro_models) != mesh.n_elements:
            raise ValueError(f"Got {len(micro_models)} micro models for {mesh.n_elements} macro elements")
        if snapshot_elements is not None and any(not 0 <= e < mesh.n_elements for e in snapshot_elements):
            raise ConfigError(f"Snapshot elements {snapshot_elements} must index the {mesh.n_elements} macro elements")
        self.mesh = mesh
        self.dof_map = dof_map
        self.load_factors = load_factors
        self.partition = partition
        self.micro_models = micro_models
        self.assignment = assignment
        self.solver_settings = solver_settings
        self.out_dir = Path(out_dir)
        self.reaction_dofs = reaction_dofs
        self.threads = threads
        self.checkpoint = checkpoint
        self.snapshot_elements = snapshot_elements
        self.material = MultiscaleMaterialModel(micro_models, threads=threads)
        self.writer = DeltaWriter(self.out_dir / HISTORY_DIR)
        self.steps: list[StepResult] = []
        self._start_time = None
        self._stale_tables = set()

    def _resume(self) -> dict:
        if self.checkpoint is None or not self.checkpoint.exists():
            return {}
        document = self.checkpoint.load()
        self.material.load_state_dict({"micro": document["micro"]})
        logger.info(f"Resuming from step {document[STEP_STR]} at load factor {document[LOAD_FACTOR_STR]:.6g}")
        return {"initial_displacement": np.asarray(document["macro"][DISPLACEMENT_FIELD_STR], dtype=float),
                "start_factor": float(document[LOAD_FACTOR_STR]), "start_step": int(document[STEP_STR])}

    def _write_history(self, df: pd.DataFrame, table_name: str, merge_keys: list[str]):
        if df.empty:
            return
        if table_name in self._stale_tables:
            self.writer.write_table(df, table_name, mode="overwrite")
            self._stale_tables.discard(table_name)
        else:
            self.writer.write_table(df, table_name, mode="merge", merge_keys=merge_keys)

    def _on_step(self, result: StepResult):
        self.steps.append(result)
        self._write_history(reaction_displacement_table([result], self.reaction_dofs, self.reaction_dofs),
                            REACTION_TABLE, [STEP_STR])
        self._write_history(SolutionHistory([result]).convergence_frame(), CONVERGENCE_TABLE,
                            [STEP_STR, NEWTON_ITER_STR])
        if self.checkpoint is not None:
            self.checkpoint.save(result.step, result.load_factor,
                                 {DISPLACEMENT_FIELD_STR: result.displacement.tolist()},
                                 self.material.state_dict()["micro"])

    def solve(self) -> SolutionHistory:
        """Runs the macro Newton solve, writing the run history after every step and the result files at the end.
        Results of the converged steps are flushed before a convergence failure propagates."""
        self._start_time = time.perf_counter()
        resume = self._resume()
        if not resume:
            # a fresh run replaces the history of earlier runs in the same directory
            self._stale_tables = {REACTION_TABLE, CONVERGENCE_TABLE}
        start_factor = resume.get("start_factor", 0.0)
        load_factors = [factor for factor in self.load_factors if factor > start_factor + 1e-12]
        settings = self.solver_settings
        options = {"tol_cg": settings["tol_cg"], "max_cg_iters": settings["max_cg_iters"],
                   "tol_newton": settings["tol_newton"], "max_newton_iters": settings["max_newton_iters"],
                   "max_bisections": settings["max_bisections"], "on_step": self._on_step}
        try:
            if settings.get("method", SOLVER_IDCG_STR) == SOLVER_PCG_STR:
                history = dns_newton(self.mesh, self.dof_map, load_factors, self.material, **options, **resume)
            else:
                history = idcg_newton(self.mesh, self.dof_map, load_factors, self.material, self.partition, **options,
                                      **resume)
        except ConvergenceError as exc:
            logger.error(f"Multiscale solve aborted: {exc}")
            self.write_results(aborted=True, diagnostics=exc.diagnostics)
            raise
        self.write_results()
        return history

    def write_results(self, aborted: bool = False, diagnostics: dict | None = None):
        """Reaction-displacement CSV, convergence CSV, macro VTK and RVE snapshots of the last converged step and the
        JSON run log."""
        write_csv(self.history_frame(REACTION_TABLE), self.out_dir / "reaction_force.csv")
        write_csv(self.history_frame(CONVERGENCE_TABLE), self.out_dir / "convergence.csv")
        snapshots = []
        if self.steps:
            final = self.steps[-1]
            element_von_mises = von_mises(voigt_to_stress(final.stresses))
            write_vtk(self.mesh, {DISPLACEMENT_FIELD_STR: final.displacement.reshape(-1, 3)},
                      {VON_MISES_STR: element_von_mises, "rve": self.assignment.astype(float)},
                      self.out_dir / "macro.vtk")
            snapshots = self.write_micro_snapshots(element_von_mises)
        write_json({"aborted": aborted, "diagnostics": diagnostics or {}, "steps": len(self.steps),
                    "newton_iterations": [result.newton_iterations for result in self.steps],
                    "cg_iterations": [int(sum(result.cg_iterations)) for result in self.steps],
                    "yielded_fractions": [result.yielded_fractions for result in self.steps],
                    "rve_assignment_counts": np.bincount(self.assignment).tolist(),
                    "micro_snapshots": snapshots},
                   self.out_dir / "run_log.json")
        # wall-clock times live apart from the reproducible outputs
        elapsed = None if self._start_time is None else time.perf_counter() - self._start_time
        write_json({"elapsed_seconds": elapsed, "threads": self.threads}, self.out_dir / "timings.json")

    def write_micro_snapshots(self, element_von_mises: np.ndarray) -> list[int]:
        """Writes the RVE fields of the selected macro elements at the last committed step to
        `micro/element_<e>.vtk`. Returns the elements written."""
        responses = self.material.committed_responses
        if responses is None:
            return []
        elements = self.snapshot_elements
        if elements is None:
            elements = [int(np.argmax(element_von_mises))]
        written = []
        for e in elements:
            rve_mesh = self.micro_models[e].rve_mesh
            if rve_mesh is None:
                logger.warning(f"Micro model of element {e} has no mesh to write its fields on")
                continue
            write_rve_fields(rve_mesh, responses[e].fields, self.out_dir / "micro" / f"element_{e}.vtk")
            written.append(int(e))
        return written

    def history_frame(self, table_name: str) -> pd.DataFrame:
        """Run history over all steps, including steps of earlier runs resumed from the checkpoint."""
        if table_name not in self._stale_tables and self.writer.table_exists(table_name):
            return self.writer.read_table(table_name)
        if table_name == REACTION_TABLE:
            return reaction_displacement_table(self.steps, self.reaction_dofs, self.reaction_dofs)
        return SolutionHistory(self.steps).convergence_frame()

    @classmethod
    def construct_multiscale_solver(cls, config: Config) -> "MultiscaleSolver":
        mesh = load_mesh(config.get_mesh_path())
        dof_map = config.get_boundary_conditions(mesh)
        rve_meshes = [load_mesh(path) for path in config.get_rve_mesh_paths()]
        micro = config.get_micro_settings()
        settings = config.get_solver_settings()
        assignment = assign_rves(mesh.n_elements, len(rve_meshes), micro["assignment"], micro["assignment_seed"])
        micro_models = build_micro_models(rve_meshes, assignment, config.get_elastic_constants(),
                                          config.get_hardening_curve(), model=micro["model"],
                                          k=config.get_k_micro(), seed=config.get_seed(),
                                          boundary_rotations=micro["boundary_rotations"],
                                          tol=settings["micro_tol_newton"])
        partition = kmeans(mesh.nodes, min(config.get_k_macro(), mesh.n_nodes), seed=config.get_seed())
        checkpoint_path = config.get_checkpoint_path()
        return cls(mesh=mesh, dof_map=dof_map, load_factors=config.get_load_factors(), partition=partition,
                   micro_models=micro_models, assignment=assignment, solver_settings=settings,
                   out_dir=config.get_out_dir(),
                   reaction_dofs=loaded_dofs(dof_map, mesh, config.get_reaction_node_set()),
                   threads=config.get_threads(),
                   checkpoint=None if checkpoint_path is None else CheckpointStore(checkpoint_path),
                   snapshot_elements=micro["snapshot_elements"])

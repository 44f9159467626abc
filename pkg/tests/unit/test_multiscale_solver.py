import pytest
from unittest.mock import patch

import numpy as np

from dcasim.globals import *
from dcasim.clustering import kmeans
from dcasim.data_io import CheckpointStore, read_json
from dcasim.exceptions import ConfigError, ConvergenceError
from dcasim.mesh import DofMap, read_vtk
from dcasim.micro_rom import ReducedOrderModel
from dcasim.models.micro_models import ClusterRomMicroModel, FullFieldMicroModel
from dcasim.multiscale_solver import CONVERGENCE_TABLE, REACTION_TABLE, MultiscaleSolver, assign_rves, \
    build_micro_models, construct_micro_model, loaded_dofs

SOLVER_SETTINGS = {"tol_cg": 1e-12, "max_cg_iters": None, "tol_newton": 1e-10, "max_newton_iters": 20,
                   "max_bisections": 2, "method": SOLVER_IDCG_STR}


def box_tension_dof_map(mesh, stretch: float = 0.01) -> DofMap:
    dof_map = DofMap(mesh.n_nodes)
    dof_map.constrain(dof_map.node_dofs(mesh.get_node_set("xmin")), 0.0)
    dof_map.constrain(dof_map.node_dofs(mesh.get_node_set("xmax"), [0]), stretch)
    return dof_map


@pytest.fixture
def box_solver_factory(box_mesh, solid_rve_mesh, linear_elastic_micro_factory, tmp_path):
    """
    Returns a factory for multiscale solvers on the box mesh with linear elastic micro models.
    """
    def _factory(load_factors: list[float], out_dir=None, checkpoint: bool = False,
                 method: str = SOLVER_IDCG_STR, snapshot_elements: list[int] | None = None) -> MultiscaleSolver:
        dof_map = box_tension_dof_map(box_mesh)
        out_dir = out_dir or tmp_path / "out"
        return MultiscaleSolver(mesh=box_mesh, dof_map=dof_map, load_factors=load_factors,
                                partition=kmeans(box_mesh.nodes, 2, seed=0),
                                micro_models=linear_elastic_micro_factory(box_mesh.n_elements, mesh=solid_rve_mesh),
                                assignment=np.zeros(box_mesh.n_elements, dtype=np.int64),
                                solver_settings={**SOLVER_SETTINGS, "method": method}, out_dir=out_dir,
                                reaction_dofs=loaded_dofs(dof_map, box_mesh, "xmax"),
                                checkpoint=CheckpointStore(out_dir / "checkpoint.json") if checkpoint else None,
                                snapshot_elements=snapshot_elements)

    return _factory


class TestRveAssignment:

    def test_uniform_assignment_uses_the_first_rve(self):
        np.testing.assert_array_equal(assign_rves(5, 3), np.zeros(5))

    def test_random_assignment_is_seeded(self):
        first = assign_rves(200, 3, ASSIGNMENT_RANDOM_STR, seed=4)

        np.testing.assert_array_equal(first, assign_rves(200, 3, ASSIGNMENT_RANDOM_STR, seed=4))
        assert set(first.tolist()) == {0, 1, 2}

    @pytest.mark.parametrize("pool_size, mode, match", [
        (0, ASSIGNMENT_UNIFORM_STR, "At least one RVE"),
        (2, "checkerboard", "Unknown RVE assignment"),
    ])
    def test_invalid_assignment_raises(self, pool_size, mode, match):
        with pytest.raises(ConfigError, match=match):
            assign_rves(4, pool_size, mode)


class TestBuildMicroModels:

    def test_reduced_models_share_offline_data_per_rve(self, solid_rve_mesh, porous_rve_mesh, elastic_constants,
                                                       elastic_hardening):
        micro_models = build_micro_models([solid_rve_mesh, porous_rve_mesh], np.array([0, 1, 0]), elastic_constants,
                                          elastic_hardening, k=8)

        assert all(isinstance(micro, ClusterRomMicroModel) for micro in micro_models)
        assert micro_models[0].rom is micro_models[2].rom
        assert micro_models[0].rom is not micro_models[1].rom
        assert micro_models[0].state is not micro_models[2].state

    def test_cluster_count_is_capped_by_the_solid_nodes(self, solid_rve_mesh, elastic_constants, elastic_hardening):
        with patch.object(ReducedOrderModel, ReducedOrderModel.construct_reduced_order_model.__name__) as mock:
            build_micro_models([solid_rve_mesh], np.zeros(1, dtype=np.int64), elastic_constants, elastic_hardening,
                               k=1000)

        mock.assert_called_once()
        assert mock.call_args.args[1] == solid_rve_mesh.n_nodes

    def test_full_field_models(self, porous_rve_mesh, elastic_constants, elastic_hardening):
        micro_models = build_micro_models([porous_rve_mesh], np.zeros(2, dtype=np.int64), elastic_constants,
                                          elastic_hardening, model=MICRO_FULL_FIELD_STR)

        assert all(isinstance(micro, FullFieldMicroModel) for micro in micro_models)

    def test_unknown_model_raises(self, porous_rve_mesh, elastic_constants, elastic_hardening):
        with pytest.raises(ConfigError, match="Unknown micro model"):
            build_micro_models([porous_rve_mesh], np.zeros(1, dtype=np.int64), elastic_constants,
                               elastic_hardening, model="fft")

    def test_construct_micro_model_reads_the_config(self, mock_config, porous_rve_mesh, elastic_constants,
                                                    elastic_hardening):
        mock_config.get_micro_settings.return_value = {"model": MICRO_ROM_STR,
                                                       "boundary_rotations": ROTATIONS_PRESCRIBED_STR}
        mock_config.get_elastic_constants.return_value = elastic_constants
        mock_config.get_hardening_curve.return_value = elastic_hardening
        mock_config.get_k_micro.return_value = 12
        mock_config.get_solver_settings.return_value = {"micro_tol_newton": 1e-9}

        micro = construct_micro_model(mock_config, porous_rve_mesh, MICRO_FULL_FIELD_STR)

        assert isinstance(micro, FullFieldMicroModel)
        assert micro.tol == 1e-9
        mock_config.get_micro_settings.assert_called_once()


class TestLoadedDofs:

    def test_moving_dofs_are_preferred(self, box_mesh):
        dof_map = box_tension_dof_map(box_mesh)

        dofs = loaded_dofs(dof_map, box_mesh, "xmax")

        np.testing.assert_array_equal(dofs, np.sort(dof_map.node_dofs(box_mesh.get_node_set("xmax"), [0]).ravel()))

    def test_fixed_sets_report_all_constrained_dofs(self, box_mesh):
        dof_map = box_tension_dof_map(box_mesh)

        dofs = loaded_dofs(dof_map, box_mesh, "xmin")

        assert dofs.size == 3 * box_mesh.get_node_set("xmin").size


class TestMultiscaleSolver:

    def test_micro_model_count_must_match(self, box_mesh, linear_elastic_micro_factory, tmp_path):
        with pytest.raises(ValueError, match="micro models"):
            MultiscaleSolver(box_mesh, box_tension_dof_map(box_mesh), [1.0], kmeans(box_mesh.nodes, 1),
                             linear_elastic_micro_factory(3), np.zeros(3, dtype=np.int64), SOLVER_SETTINGS,
                             tmp_path, np.array([0]))

    def test_solve_writes_results(self, box_solver_factory, solid_rve_mesh, tmp_path):
        solver = box_solver_factory([0.5, 1.0])

        history = solver.solve()

        out_dir = tmp_path / "out"
        for name in ("reaction_force.csv", "convergence.csv", "macro.vtk", "run_log.json", "timings.json"):
            assert (out_dir / name).is_file()
        run_log = read_json(out_dir / "run_log.json")
        assert run_log["aborted"] is False
        assert run_log["steps"] == 2
        assert run_log["rve_assignment_counts"] == [48]
        assert len(run_log["micro_snapshots"]) == 1
        _, point_fields, _ = read_vtk(out_dir / "micro" / f"element_{run_log['micro_snapshots'][0]}.vtk")
        assert point_fields[DISPLACEMENT_FIELD_STR].shape == (solid_rve_mesh.n_nodes, 3)
        reactions = solver.history_frame(REACTION_TABLE)
        assert list(reactions[STEP_STR]) == [1, 2]
        assert reactions[REACTION_STR].iloc[1] == pytest.approx(2.0 * reactions[REACTION_STR].iloc[0], rel=1e-8)
        assert reactions[REACTION_STR].iloc[1] == pytest.approx(history.final.reaction(solver.reaction_dofs))

    def test_selected_elements_get_rve_snapshots(self, box_solver_factory, tmp_path):
        box_solver_factory([1.0], snapshot_elements=[0, 5]).solve()

        out_dir = tmp_path / "out"
        assert read_json(out_dir / "run_log.json")["micro_snapshots"] == [0, 5]
        assert sorted(path.name for path in (out_dir / "micro").iterdir()) == ["element_0.vtk", "element_5.vtk"]

    def test_snapshot_elements_outside_the_mesh_raise(self, box_solver_factory):
        with pytest.raises(ConfigError, match="Snapshot elements"):
            box_solver_factory([1.0], snapshot_elements=[48])

    def test_idcg_and_pcg_agree(self, box_solver_factory, tmp_path):
        idcg = box_solver_factory([1.0], out_dir=tmp_path / "idcg").solve()
        pcg = box_solver_factory([1.0], out_dir=tmp_path / "pcg", method=SOLVER_PCG_STR).solve()

        np.testing.assert_allclose(idcg.final.displacement, pcg.final.displacement, rtol=1e-8, atol=1e-13)

    def test_resume_from_checkpoint(self, box_solver_factory, tmp_path):
        box_solver_factory([0.5], checkpoint=True).solve()

        resumed = box_solver_factory([0.5, 1.0], checkpoint=True)
        history = resumed.solve()
        fresh = box_solver_factory([0.5, 1.0], out_dir=tmp_path / "fresh").solve()

        assert [step.step for step in history.steps] == [2]
        assert list(resumed.history_frame(REACTION_TABLE)[STEP_STR]) == [1, 2]
        assert set(resumed.history_frame(CONVERGENCE_TABLE)[STEP_STR]) == {1, 2}
        np.testing.assert_allclose(history.final.displacement, fresh.final.displacement, rtol=1e-8, atol=1e-13)
        assert CheckpointStore(tmp_path / "out" / "checkpoint.json").load()[STEP_STR] == 2

    def test_fresh_run_replaces_earlier_history(self, box_solver_factory):
        box_solver_factory([0.25, 0.5, 1.0]).solve()

        solver = box_solver_factory([1.0])
        solver.solve()

        assert list(solver.history_frame(REACTION_TABLE)[STEP_STR]) == [1]

    def test_convergence_failure_writes_an_aborted_log(self, box_solver_factory, tmp_path):
        solver = box_solver_factory([1.0])
        failure = ConvergenceError("Newton iteration did not converge", {STEP_STR: 1})

        with patch("dcasim.multiscale_solver.idcg_newton", side_effect=failure):
            with pytest.raises(ConvergenceError):
                solver.solve()

        run_log = read_json(tmp_path / "out" / "run_log.json")
        assert run_log["aborted"] is True
        assert run_log["diagnostics"] == {STEP_STR: 1}
        assert run_log["steps"] == 0
        assert not (tmp_path / "out" / "macro.vtk").exists()

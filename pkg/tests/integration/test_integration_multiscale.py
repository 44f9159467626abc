import numpy as np
import pandas as pd

from dcasim.globals import *
from dcasim.config import Config
from dcasim.data_io import read_json
from dcasim.general_functions import voigt_to_stress
from dcasim.jobs import run_solve_macro_process, run_solve_multiscale_process
from dcasim.material import von_mises

HARDENING = {"mode": ISOTROPIC_STR, "points": [[0.0, 100.0], [0.1, 200.0]]}
SOLVER = {"tol_cg": 1e-12, "tol_newton": 1e-9, "micro_tol_newton": 1e-10}
BOX_TENSION = {
    "load_factors": [0.5, 1.0],
    "boundary_conditions": [
        {"node_set": "xmin", "components": [0, 1, 2], "values": 0.0},
        {"node_set": "xmax", "components": [0], "values": 0.005},
    ],
    "reaction_node_set": "xmax",
}


class TestIntegrationMultiscale:

    def test_solid_rves_reproduce_the_single_scale_solution(self, run_config_factory, box_mesh, solid_rve_mesh,
                                                           tmp_path):
        config_path = run_config_factory(mesh=box_mesh, rve_meshes=[solid_rve_mesh], material={"hardening": HARDENING},
                                         clustering={"k_macro": 2, "k_micro": 8}, solver=SOLVER, load=BOX_TENSION)

        multiscale = run_solve_multiscale_process(Config.from_file(config_path))
        single_scale = run_solve_macro_process(Config.from_file(config_path).apply_overrides(out=tmp_path / "macro"))

        scale = np.abs(single_scale.final.displacement).max()
        np.testing.assert_allclose(multiscale.final.displacement, single_scale.final.displacement, atol=1e-6 * scale)
        np.testing.assert_allclose(multiscale.final.stresses, single_scale.final.stresses, rtol=1e-5, atol=1e-3)
        reactions = pd.read_csv(tmp_path / "out" / "reaction_force.csv")
        reference = pd.read_csv(tmp_path / "macro" / "reaction_force.csv")
        np.testing.assert_allclose(reactions[REACTION_STR], reference[REACTION_STR], rtol=1e-5)
        run_log = read_json(tmp_path / "out" / "run_log.json")
        assert run_log["aborted"] is False
        assert von_mises(voigt_to_stress(multiscale.final.stresses)).max() > HARDENING["points"][0][1]

    def test_resumed_run_matches_an_uninterrupted_run(self, run_config_factory, box_mesh, solid_rve_mesh, tmp_path):
        sections = {"material": {"hardening": HARDENING}, "clustering": {"k_macro": 2, "k_micro": 8}, "solver": SOLVER}
        first_half = {**BOX_TENSION, "load_factors": [0.5]}
        config_path = run_config_factory(mesh=box_mesh, rve_meshes=[solid_rve_mesh], load=first_half,
                                         paths={"checkpoint": "out/checkpoint.json"}, **sections)
        run_solve_multiscale_process(Config.from_file(config_path))

        config_path = run_config_factory(mesh=box_mesh, rve_meshes=[solid_rve_mesh], load=BOX_TENSION,
                                         paths={"checkpoint": "out/checkpoint.json"}, **sections)
        resumed = run_solve_multiscale_process(Config.from_file(config_path))
        uninterrupted = run_solve_multiscale_process(
            Config.from_file(run_config_factory(mesh=box_mesh, rve_meshes=[solid_rve_mesh], load=BOX_TENSION,
                                                paths={"out_dir": "fresh"}, **sections)))

        assert [step.step for step in resumed.steps] == [2]
        scale = np.abs(uninterrupted.final.displacement).max()
        np.testing.assert_allclose(resumed.final.displacement, uninterrupted.final.displacement, atol=1e-8 * scale)
        reactions = pd.read_csv(tmp_path / "out" / "reaction_force.csv")
        assert list(reactions[STEP_STR]) == [1, 2]

    def test_random_rve_assignment(self, run_config_factory, box_mesh, solid_rve_mesh, porous_rve_mesh, tmp_path):
        load = {**BOX_TENSION, "load_factors": [0.2]}
        config = Config.from_file(run_config_factory(
            mesh=box_mesh, rve_meshes=[solid_rve_mesh, porous_rve_mesh], material={"hardening": HARDENING},
            clustering={"k_macro": 2, "k_micro": 8}, solver=SOLVER, load=load,
            micro={"assignment": ASSIGNMENT_RANDOM_STR, "assignment_seed": 3, "snapshot_elements": [0, 1]}))

        history = run_solve_multiscale_process(config)

        run_log = read_json(tmp_path / "out" / "run_log.json")
        counts = run_log["rve_assignment_counts"]
        assert sum(counts) == box_mesh.n_elements
        assert len(counts) == 2 and min(counts) > 0
        assert history.final.step == 1
        assert (tmp_path / "out" / "macro.vtk").is_file()
        assert run_log["micro_snapshots"] == [0, 1]
        for e in (0, 1):
            assert (tmp_path / "out" / "micro" / f"element_{e}.vtk").is_file()

# ---
# jupyter:
#   jupytext:
#     cell_metadata_filter: -all
#     formats: .jupytext-sync-ipynb//ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#       jupytext_version: 1.17.3
#   kernelspec:
#     display_name: dcasim-py3.13
#     language: python
#     name: python3
# ---

# %% [markdown]
# This notebook runs a small multiscale solve of the L-bracket with reduced RVE models and compares the
# reaction-displacement curve against the single-scale solve of the same bracket.

# %%
import json
import logging
from pathlib import Path

from dcasim.globals import *
from dcasim.config import Config
from dcasim.jobs import run_generate_rve_process, run_solve_macro_process, run_solve_multiscale_process
from dcasim.mesh import l_bracket_mesh, save_mesh

logging.basicConfig(level=logging.INFO)

# %% [markdown]
# We'll set up a work directory holding the bracket mesh and the run config. The RVE pool is generated first at
# a coarse voxel resolution to keep the offline stage short.

# %%
work_dir = Path.cwd() / "bracket_run"
work_dir.mkdir(exist_ok=True)
save_mesh(l_bracket_mesh(), work_dir / "bracket.json")

run_document = {
    "paths": {"mesh": "bracket.json", "rve_meshes": ["rves/rve_000/mesh.json"], "out_dir": "rves",
              "checkpoint": "multiscale/checkpoint.json"},
    "material": {"hardening": {"mode": ISOTROPIC_STR, "points": [[0.0, 100.0], [0.1, 200.0]]}},
    "clustering": {"k_macro": 8, "k_micro": 16, "seed": 0},
    "solver": {"tol_cg": 1e-8, "tol_newton": 1e-6, "method": SOLVER_IDCG_STR},
    "load": {"n_steps": 4, "boundary_conditions": [
        {"node_set": "fixed", "components": [0, 1, 2], "values": 0.0},
        {"node_set": "tip", "components": [1], "values": -0.2},
    ]},
    "mcr": {"descriptors": [0.08, 2, 1.5, 40.0], "resolution": 16},
    "run": {"threads": 4},
}
config_path = work_dir / "run.json"
config_path.write_text(json.dumps(run_document, indent=2))

# %%
run_generate_rve_process(Config.from_file(config_path))

# %% [markdown]
# With the RVE in place we run the multiscale solve and the single-scale reference into separate output directories.

# %%
multiscale = run_solve_multiscale_process(Config.from_file(config_path).apply_overrides(out=work_dir / "multiscale"))
single_scale = run_solve_macro_process(Config.from_file(config_path).apply_overrides(out=work_dir / "macro"))

# %%
for ms_step, ss_step in zip(multiscale.steps, single_scale.steps):
    print(f"Step {ms_step.step}: multiscale Newton iterations {ms_step.newton_iterations}, "
          f"single-scale Newton iterations {ss_step.newton_iterations}")

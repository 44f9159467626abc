# ---
# jupyter:
#   jupytext:
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
# This notebook is utilized for exploring the run history tables written by a multiscale solve. Run
# `run_job_multiscale_bracket.py` first.

# %%
from pathlib import Path

import numpy as np
import pandas as pd

from dcasim.globals import *
from dcasim.computations import compute_toughness
from dcasim.data_io import DeltaWriter, read_json

# %% [markdown]
# We'll initialize a DeltaWriter on the history directory of the run and read the reaction and convergence tables.

# %%
out_dir = Path.cwd() / "bracket_run" / "multiscale"
writer = DeltaWriter(base_path=out_dir / "history")

reactions = writer.read_table(table_name="reaction_force")
convergence = writer.read_table(table_name="convergence")

# %%
print(reactions.head())
print(convergence.groupby(STEP_STR)[CG_ITER_STR].sum())

# %% [markdown]
# The area under the reaction-displacement curve is the work done on the bracket. The curve starts from the unloaded
# state and both quantities flip sign, as the tip is pulled downwards.

# %%
displacement = np.concatenate([[0.0], -reactions[DISPLACEMENT_STR].to_numpy()])
force = np.concatenate([[0.0], -reactions[REACTION_STR].to_numpy()])
work = compute_toughness(displacement, force)
print(f"External work: {work:.4g} N mm")

# %%
run_log = read_json(out_dir / "run_log.json")
pd.DataFrame({STEP_STR: reactions[STEP_STR], NEWTON_ITER_STR: run_log["newton_iterations"]})

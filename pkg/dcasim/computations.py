"""
Module for tabulating and reducing solver results: stress-strain tables, toughness and field comparison summaries.
"""
import numpy as np
import pandas as pd

from dcasim.globals import *
from dcasim.general_functions import equivalent_strain, small_strain, strain_to_voigt, stress_to_voigt
from dcasim.homogenization import FieldComparison
from dcasim.material import von_mises


def stress_strain_table(deformation_gradients: list[np.ndarray], stresses: list[np.ndarray]) -> pd.DataFrame:
    """Homogenized stress-strain history with one row per load increment, starting from the unloaded state.

    Args:
        deformation_gradients (list[np.ndarray]): macroscopic deformation gradient of every increment.
        stresses (list[np.ndarray]): homogenized 3x3 stress of every increment.

    Returns:
        pd.DataFrame: Voigt strains (engineering shear) and stresses, von Mises stress and equivalent strain.
    """
    if len(deformation_gradients) != len(stresses):
        raise ValueError(f"Got {len(deformation_gradients)} deformation gradients for {len(stresses)} stresses")
    strains = np.array([np.zeros(6)] + [strain_to_voigt(small_strain(F)) for F in deformation_gradients])
    stress_tensors = np.array([np.zeros((3, 3))] + [np.asarray(s, dtype=float) for s in stresses])

    df = pd.DataFrame(strains, columns=list(STRAIN_COLUMNS))
    df[list(STRESS_COLUMNS)] = stress_to_voigt(stress_tensors)
    df[EQ_STRAIN_STR] = equivalent_strain(strains)
    df[VON_MISES_STR] = von_mises(stress_tensors)
    df.insert(0, INCREMENT_STR, np.arange(len(df)))
    return df


def compute_toughness(strain: np.ndarray, stress: np.ndarray) -> float:
    """Work density under a stress-strain curve by the trapezoidal rule.

    Args:
        strain (np.ndarray): strain history, typically the equivalent strain.
        stress (np.ndarray): stress history, typically the von Mises stress.

    Returns:
        float: the work density in the stress unit times the strain unit.
    """
    strain = np.asarray(strain, dtype=float)
    stress = np.asarray(stress, dtype=float)
    if strain.shape != stress.shape:
        raise ValueError(f"Strain and stress histories differ in shape: {strain.shape} and {stress.shape}")
    return float(np.sum(0.5 * (stress[1:] + stress[:-1]) * np.diff(strain)))


def toughness_from_table(table: pd.DataFrame) -> float:
    return compute_toughness(table[EQ_STRAIN_STR].to_numpy(), table[VON_MISES_STR].to_numpy())


def reaction_displacement_table(steps: list, reaction_dofs: np.ndarray, displacement_dofs: np.ndarray,
                                cg_iterations: bool = True) -> pd.DataFrame:
    """Reaction force against mean prescribed displacement of every converged macro step.

    Args:
        steps (list[StepResult]): converged steps.
        reaction_dofs (np.ndarray): DOFs whose reactions are summed.
        displacement_dofs (np.ndarray): DOFs whose displacements are averaged.
        cg_iterations (bool): whether to add the total linear solver iterations of each step.

    Returns:
        pd.DataFrame: one row per step.
    """
    rows = []
    for result in steps:
        row = {STEP_STR: result.step, LOAD_FACTOR_STR: result.load_factor,
               DISPLACEMENT_STR: float(result.displacement[displacement_dofs].mean()),
               REACTION_STR: result.reaction(reaction_dofs), NEWTON_ITER_STR: result.newton_iterations}
        if cg_iterations:
            row[CG_ITER_STR] = int(sum(result.cg_iterations))
        rows.append(row)
    return pd.DataFrame(rows)


def comparison_table(comparison: FieldComparison) -> pd.DataFrame:
    """Histogram bins of a field comparison."""
    return pd.DataFrame({"bin_low": comparison.bin_edges[:-1], "bin_high": comparison.bin_edges[1:],
                         "count": comparison.counts})

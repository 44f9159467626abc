import pytest

import numpy as np
import pandas as pd

from dcasim.globals import *
from dcasim.computations import comparison_table, compute_toughness, reaction_displacement_table, \
    stress_strain_table, toughness_from_table
from dcasim.fem_core import StepResult
from dcasim.homogenization import FieldComparison


class TestStressStrainTable:

    def test_table_starts_unloaded(self):
        table = stress_strain_table([np.diag([1.01, 1.0, 1.0]), np.diag([1.02, 1.0, 1.0])],
                                    [np.diag([100.0, 0.0, 0.0]), np.diag([150.0, 0.0, 0.0])])

        assert list(table[INCREMENT_STR]) == [0, 1, 2]
        np.testing.assert_allclose(table["strain_xx"], [0.0, 0.01, 0.02])
        np.testing.assert_allclose(table["stress_xx"], [0.0, 100.0, 150.0])
        np.testing.assert_allclose(table[VON_MISES_STR], [0.0, 100.0, 150.0])
        np.testing.assert_allclose(table[EQ_STRAIN_STR], [0.0, 2.0 / 3.0 * 0.01, 2.0 / 3.0 * 0.02])
        assert set(STRAIN_COLUMNS + STRESS_COLUMNS) <= set(table.columns)

    def test_shear_strain_is_engineering(self):
        gradient = np.eye(3)
        gradient[0, 1] = gradient[1, 0] = 0.005

        table = stress_strain_table([gradient], [np.zeros((3, 3))])

        assert table["strain_xy"].iloc[1] == pytest.approx(0.01)

    def test_lengths_must_match(self):
        with pytest.raises(ValueError, match="deformation gradients"):
            stress_strain_table([np.eye(3)], [])


class TestToughness:

    def test_linear_curve(self):
        strain = np.linspace(0.0, 0.01, 11)

        toughness = compute_toughness(strain, YOUNG_MODULUS * strain)

        assert toughness == pytest.approx(0.5 * YOUNG_MODULUS * 0.01 ** 2)

    def test_perfectly_plastic_plateau(self):
        assert compute_toughness([0.0, 0.01, 0.03], [0.0, 100.0, 100.0]) == pytest.approx(0.5 + 2.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="differ in shape"):
            compute_toughness(np.zeros(3), np.zeros(4))

    def test_toughness_from_table(self):
        table = pd.DataFrame({EQ_STRAIN_STR: [0.0, 0.1], VON_MISES_STR: [0.0, 10.0]})

        assert toughness_from_table(table) == pytest.approx(0.5)


class TestReactionDisplacementTable:

    def test_one_row_per_step(self):
        steps = [StepResult(step=s, load_factor=0.5 * s, displacement=np.array([0.0, 0.1 * s, 0.3 * s]),
                            internal_force=np.array([-2.0 * s, 1.0 * s, 1.0 * s]), stresses=np.zeros((1, 6)),
                            cg_iterations=[4, 2]) for s in (1, 2)]

        table = reaction_displacement_table(steps, np.array([1, 2]), np.array([1, 2]))

        assert list(table[STEP_STR]) == [1, 2]
        np.testing.assert_allclose(table[DISPLACEMENT_STR], [0.2, 0.4])
        np.testing.assert_allclose(table[REACTION_STR], [2.0, 4.0])
        assert list(table[NEWTON_ITER_STR]) == [2, 2]
        assert list(table[CG_ITER_STR]) == [6, 6]

    def test_cg_iterations_can_be_left_out(self):
        step = StepResult(step=1, load_factor=1.0, displacement=np.zeros(3), internal_force=np.zeros(3),
                          stresses=np.zeros((1, 6)))

        table = reaction_displacement_table([step], np.array([0]), np.array([0]), cg_iterations=False)

        assert CG_ITER_STR not in table.columns


def test_comparison_table():
    comparison = FieldComparison(error=0.1, counts=np.array([3, 1]), bin_edges=np.array([0.0, 0.5, 1.0]))

    table = comparison_table(comparison)

    np.testing.assert_allclose(table["bin_low"], [0.0, 0.5])
    np.testing.assert_allclose(table["bin_high"], [0.5, 1.0])
    assert list(table["count"]) == [3, 1]

import pytest

import numpy as np

from dcasim.globals import *
from dcasim.general_functions import LOAD_PATHS, axial_vector, dev, equivalent_strain, interpolate_deformation_path, \
    resolve_load_path, skew, small_strain, strain_to_voigt, stress_to_voigt, sym, unit_strain_probe, \
    voigt_to_strain, voigt_to_stress


class TestTensorAlgebra:

    def test_sym_and_skew_split_a_tensor(self):
        tensor = np.arange(9.0).reshape(3, 3)

        np.testing.assert_allclose(sym(tensor) + skew(tensor), tensor)
        np.testing.assert_allclose(sym(tensor), sym(tensor).T)
        np.testing.assert_allclose(skew(tensor), -skew(tensor).T)

    def test_dev_is_traceless(self):
        tensor = np.array([[3.0, 1.0, 0.0], [1.0, -2.0, 4.0], [0.0, 4.0, 5.0]])

        assert np.trace(dev(tensor)) == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(dev(tensor)[0, 1], 1.0)

    def test_axial_vector_reproduces_cross_product(self):
        tensor = np.random.default_rng(3).normal(size=(3, 3))
        r = np.array([0.3, -1.2, 2.0])

        np.testing.assert_allclose(skew(tensor) @ r, np.cross(axial_vector(tensor), r))

    def test_voigt_strain_uses_engineering_shear(self):
        strain = np.array([[1.0, 0.5, 0.25], [0.5, 2.0, 0.125], [0.25, 0.125, 3.0]])

        vector = strain_to_voigt(strain)

        np.testing.assert_allclose(vector, [1.0, 2.0, 3.0, 0.25, 0.5, 1.0])
        np.testing.assert_allclose(voigt_to_strain(vector), strain)

    def test_voigt_stress_keeps_tensor_shear(self):
        stress = np.array([[1.0, 6.0, 5.0], [6.0, 2.0, 4.0], [5.0, 4.0, 3.0]])

        np.testing.assert_allclose(stress_to_voigt(stress), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        np.testing.assert_allclose(voigt_to_stress(stress_to_voigt(stress)), stress)

    def test_voigt_conversion_broadcasts_over_batches(self):
        batch = np.random.default_rng(0).normal(size=(5, 6))

        assert voigt_to_stress(batch).shape == (5, 3, 3)
        np.testing.assert_allclose(stress_to_voigt(voigt_to_stress(batch)), batch)

    @pytest.mark.parametrize("component", range(6))
    def test_unit_strain_probe(self, component):
        probe = unit_strain_probe(component, 2.0)

        expected = np.zeros(6)
        expected[component] = 2.0
        np.testing.assert_allclose(strain_to_voigt(probe), expected)
        np.testing.assert_allclose(probe, probe.T)

    def test_small_strain_drops_rotation(self):
        rotation = np.array([[1.0, -0.01, 0.0], [0.01, 1.0, 0.0], [0.0, 0.0, 1.0]])

        np.testing.assert_allclose(small_strain(rotation), np.zeros((3, 3)), atol=1e-15)

    def test_equivalent_strain_of_isochoric_uniaxial_strain(self):
        strain = strain_to_voigt(np.diag([0.02, -0.01, -0.01]))

        assert float(equivalent_strain(strain)) == pytest.approx(0.02)


class TestLoadPaths:

    def test_interpolation_ends_at_control_points(self):
        control = [np.diag([1.02, 1.0, 1.0]), np.diag([0.98, 1.0, 1.0])]

        path = interpolate_deformation_path(control, increments_per_segment=4)

        assert len(path) == 8
        np.testing.assert_allclose(path[0], np.diag([1.005, 1.0, 1.0]))
        np.testing.assert_allclose(path[3], control[0])
        np.testing.assert_allclose(path[-1], control[1])

    def test_interpolation_rejects_zero_increments(self):
        with pytest.raises(ValueError):
            interpolate_deformation_path([np.eye(3)], increments_per_segment=0)

    @pytest.mark.parametrize("name", sorted(LOAD_PATHS))
    def test_named_paths_resolve_to_copies(self, name):
        resolved = resolve_load_path(name)
        resolved[0][0, 0] = 10.0

        assert LOAD_PATHS[name][0][0, 0] != 10.0
        assert all(np.linalg.det(matrix) > 0.0 for matrix in resolve_load_path(name))

    def test_unknown_path_raises(self):
        with pytest.raises(ValueError, match="Unknown load path"):
            resolve_load_path("torsion")

    def test_explicit_path_is_validated(self):
        assert len(resolve_load_path([np.eye(3).tolist(), np.diag([1.01, 1.0, 1.0]).tolist()])) == 2

        with pytest.raises(ValueError, match="3x3"):
            resolve_load_path([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="determinant"):
            resolve_load_path([np.diag([-1.0, 1.0, 1.0])])

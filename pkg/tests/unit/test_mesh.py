import pytest

import json

import numpy as np

from dcasim.globals import *
from dcasim.exceptions import BoundaryConditionError, MeshError
from dcasim.mesh import DofMap, Mesh, boundary_nodes, l_bracket_mesh, load_mesh, read_vtk, rve_boundary_nodes, \
    save_mesh, signed_volumes, structured_box_mesh, voxels_to_tets, write_vtk

UNIT_TET_NODES = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]


class TestMesh:

    def test_negative_elements_are_reoriented(self):
        mesh = Mesh(UNIT_TET_NODES, [[0, 2, 1, 3]])

        assert mesh.volumes[0] == pytest.approx(1.0 / 6.0)
        assert set(mesh.tets[0].tolist()) == {0, 1, 2, 3}

    def test_arrays_are_read_only(self):
        mesh = Mesh(UNIT_TET_NODES, [[0, 1, 2, 3]])

        with pytest.raises(ValueError):
            mesh.nodes[0, 0] = 5.0

    @pytest.mark.parametrize("nodes, tets, match", [
        (UNIT_TET_NODES, [[0, 1, 2, 4]], "node index 4"),
        (UNIT_TET_NODES + [[0.0, 0.0, 0.0]], [[0, 1, 2, 3]], "coincide"),
        ([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]], [[0, 1, 2, 3]], "Degenerate"),
    ])
    def test_invalid_meshes_raise(self, nodes, tets, match):
        with pytest.raises(MeshError, match=match):
            Mesh(nodes, tets)

    def test_node_set_out_of_range_raises(self):
        with pytest.raises(MeshError, match="Node set 'top'"):
            Mesh(UNIT_TET_NODES, [[0, 1, 2, 3]], node_sets={"top": [7]})

    def test_unknown_unit_raises(self):
        with pytest.raises(MeshError, match="unit"):
            Mesh(UNIT_TET_NODES, [[0, 1, 2, 3]], unit="inch")

    def test_missing_node_set_is_a_boundary_condition_error(self, box_mesh):
        with pytest.raises(BoundaryConditionError, match="'clamp'"):
            box_mesh.get_node_set("clamp")

    def test_geometry_properties(self, box_mesh):
        assert box_mesh.n_nodes == 27
        assert box_mesh.n_elements == 48
        assert box_mesh.n_dofs == 81
        assert box_mesh.volumes.sum() == pytest.approx(1.0)
        assert box_mesh.box_volume == pytest.approx(1.0)
        np.testing.assert_allclose(box_mesh.center, [0.5, 0.5, 0.5])

    def test_with_node_sets_keeps_existing_sets(self, box_mesh):
        extended = box_mesh.with_node_sets({"corner": [0]})

        np.testing.assert_array_equal(extended.get_node_set("corner"), [0])
        np.testing.assert_array_equal(extended.get_node_set("xmin"), box_mesh.get_node_set("xmin"))

    def test_from_dict_requires_nodes_and_tets(self):
        with pytest.raises(MeshError, match="missing key"):
            Mesh.from_dict({TETS_STR: [[0, 1, 2, 3]]})


class TestMeshIO:

    def test_load_sample_mesh(self, sample_mesh_json):
        mesh = load_mesh(sample_mesh_json)

        assert mesh.unit == "mm"
        assert mesh.volumes[0] > 0.0
        np.testing.assert_array_equal(mesh.get_node_set("base"), [0, 1, 2])

    def test_save_and_load(self, tmp_path, box_mesh):
        path = tmp_path / "nested" / "box.json"

        save_mesh(box_mesh, path)
        loaded = load_mesh(path)

        np.testing.assert_allclose(loaded.nodes, box_mesh.nodes)
        np.testing.assert_array_equal(loaded.tets, box_mesh.tets)
        assert sorted(loaded.node_sets) == sorted(box_mesh.node_sets)

    def test_invalid_json_raises_mesh_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nodes: [")

        with pytest.raises(MeshError, match="Failed to parse"):
            load_mesh(path)

    def test_vtk_fields_are_written_and_read(self, tmp_path, box_mesh):
        path = tmp_path / "box.vtk"
        displacement = np.arange(box_mesh.n_dofs, dtype=float).reshape(-1, 3)
        von_mises = np.linspace(0.0, 1.0, box_mesh.n_elements)

        write_vtk(box_mesh, {DISPLACEMENT_FIELD_STR: displacement}, {VON_MISES_STR: von_mises}, path)
        mesh, point_fields, cell_fields = read_vtk(path)

        assert path.read_text().startswith("# vtk DataFile")
        assert mesh.n_elements == box_mesh.n_elements
        np.testing.assert_allclose(point_fields[DISPLACEMENT_FIELD_STR], displacement)
        np.testing.assert_allclose(cell_fields[VON_MISES_STR], von_mises)

    def test_vtk_field_length_is_checked(self, tmp_path, box_mesh):
        with pytest.raises(ValueError, match="Cell field"):
            write_vtk(box_mesh, None, {VON_MISES_STR: np.zeros(3)}, tmp_path / "bad.vtk")


class TestDofMap:

    def test_node_dofs(self):
        dof_map = DofMap(4)

        np.testing.assert_array_equal(dof_map.node_dofs([1, 3], [0, 2]), [[3, 5], [9, 11]])
        assert dof_map.node_dofs([0]).shape == (1, 3)

    def test_constraints_are_sorted_and_free_dofs_complement_them(self):
        dof_map = DofMap(2)
        dof_map.constrain([4, 1], [0.5, 0.25])

        np.testing.assert_array_equal(dof_map.constrained_dofs, [1, 4])
        np.testing.assert_allclose(dof_map.constrained_values, [0.25, 0.5])
        np.testing.assert_array_equal(dof_map.free_dofs, [0, 2, 3, 5])

    def test_repeated_equal_constraint_is_allowed(self):
        dof_map = DofMap(2)
        dof_map.constrain([0, 1], 0.0)
        dof_map.constrain([1], 0.0)

        assert dof_map.constrained_dofs.size == 2

    def test_contradictory_constraint_raises(self):
        dof_map = DofMap(2)
        dof_map.constrain([1], 0.0)

        with pytest.raises(BoundaryConditionError, match="Contradictory"):
            dof_map.constrain([1], 0.1)

    def test_out_of_range_constraint_raises(self):
        with pytest.raises(BoundaryConditionError, match="out of range"):
            DofMap(2).constrain([6], 0.0)

    def test_scaled_copies_values(self):
        dof_map = DofMap(2)
        dof_map.constrain([0, 3], [1.0, -2.0])

        scaled = dof_map.scaled(0.5)

        np.testing.assert_allclose(scaled.constrained_values, [0.5, -1.0])
        np.testing.assert_allclose(dof_map.constrained_values, [1.0, -2.0])


class TestMeshGenerators:

    def test_voxel_split_fills_the_box(self):
        mesh = voxels_to_tets(np.ones((2, 1, 1), dtype=bool), (1.0, 2.0, 3.0))

        assert mesh.n_elements == 12
        assert mesh.volumes.sum() == pytest.approx(12.0)
        assert np.all(mesh.volumes > 0.0)

    def test_voxel_face_sets(self, box_mesh):
        for name in FACE_SET_NAMES:
            assert box_mesh.get_node_set(name).size == 9
        assert box_mesh.get_node_set(BOUNDARY_SET_STR).size == 26

    def test_empty_voxel_grid_raises(self):
        with pytest.raises(MeshError, match="solid voxels"):
            voxels_to_tets(np.zeros((2, 2, 2), dtype=bool), 1.0)

    def test_neighbouring_voxels_share_face_diagonals(self, box_mesh):
        faces = np.sort(box_mesh.tets[:, [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]].reshape(-1, 3), axis=1)
        _, counts = np.unique(faces, axis=0, return_counts=True)

        # every face is shared by at most two tets, so the mesh is conforming
        assert counts.max() == 2
        assert (counts == 1).sum() == 6 * 4 * 2

    def test_l_bracket(self):
        mesh = l_bracket_mesh(cells_per_leg=4, cells_thickness=2, leg_length=40.0, leg_width=20.0, thickness=10.0)

        assert mesh.volumes.sum() == pytest.approx(40.0 * 40.0 * 10.0 - 20.0 * 20.0 * 10.0)
        np.testing.assert_allclose(mesh.nodes[mesh.get_node_set("fixed"), 1], 40.0)
        np.testing.assert_allclose(mesh.nodes[mesh.get_node_set("tip"), 0], 40.0)
        assert mesh.nodes[mesh.get_node_set("fixed"), 0].max() == pytest.approx(20.0)

    def test_structured_box_mesh_origin_and_unit(self):
        mesh = structured_box_mesh((1, 1, 1), (100.0, 100.0, 100.0), origin=(-50.0, -50.0, -50.0), unit="um")

        assert mesh.unit == "um"
        np.testing.assert_allclose(mesh.center, [0.0, 0.0, 0.0])


class TestBoundaryNodes:

    def test_boundary_nodes_of_a_box_exclude_the_center(self, box_mesh):
        center = int(np.argmin(np.linalg.norm(box_mesh.nodes - 0.5, axis=1)))

        nodes = boundary_nodes(box_mesh)

        assert nodes.size == 26
        assert center not in nodes

    def test_rve_boundary_uses_the_boundary_set(self, porous_rve_mesh):
        np.testing.assert_array_equal(rve_boundary_nodes(porous_rve_mesh),
                                      porous_rve_mesh.get_node_set(BOUNDARY_SET_STR))

    def test_rve_boundary_excludes_pore_surfaces_without_the_set(self, porous_rve_mesh):
        bare = Mesh(porous_rve_mesh.nodes, porous_rve_mesh.tets, unit="um", validate=False)

        outer = rve_boundary_nodes(bare)

        assert boundary_nodes(bare).size > outer.size
        np.testing.assert_array_equal(outer, porous_rve_mesh.get_node_set(BOUNDARY_SET_STR))

    def test_signed_volumes(self):
        nodes = np.array(UNIT_TET_NODES)

        np.testing.assert_allclose(signed_volumes(nodes, np.array([[0, 1, 2, 3], [0, 2, 1, 3]])),
                                   [1.0 / 6.0, -1.0 / 6.0])

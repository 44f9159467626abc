"""
Module for the tetrahedral mesh representation, validation, geometric queries and file IO.
"""
import json
import logging
from functools import cached_property
from itertools import permutations
from pathlib import Path

import meshio
import numpy as np
from scipy.spatial import cKDTree

from dcasim.globals import *
from dcasim.exceptions import BoundaryConditionError, MeshError

logger = logging.getLogger(__name__)

# Faces of a tetrahedron as local node triples.
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


class Mesh:
    """
    Immutable linear tetrahedral mesh. Pores of a microstructure are represented by absent elements.

    Attributes:
        _nodes (np.ndarray): node coordinates of shape (n_nodes, 3).
        _tets (np.ndarray): connectivity of shape (n_elements, 4), canonically oriented to positive volume.
        _node_sets (dict[str, np.ndarray]): named node index sets.
        _unit (str): coordinate unit, "mm" for macro meshes and "um" for microstructures.
    """
    def __init__(self, nodes: np.ndarray, tets: np.ndarray, node_sets: dict[str, list[int]] | None = None,
                 unit: str = "mm", validate: bool = True):
        """
        Initializes a mesh, optionally validating it and re-orienting elements to positive volume.
        Args:
            nodes (np.ndarray): node coordinates of shape (n_nodes, 3).
            tets (np.ndarray): element connectivity of shape (n_elements, 4).
            node_sets (dict[str, list[int]] | None): named node index sets.
            unit (str): coordinate unit.
            validate (bool): whether to run the validation checks.
        """
        nodes = np.array(nodes, dtype=float).reshape(-1, 3)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        node_sets = {name: np.unique(np.asarray(indices, dtype=np.int64))
                     for name, indices in (node_sets or {}).items()}

        if unit not in ALLOWED_UNITS:
            raise MeshError(f"Unknown mesh unit '{unit}', expected one of {ALLOWED_UNITS}")

        if validate:
            tets = _validate_and_orient(nodes, tets, node_sets)

        nodes.setflags(write=False)
        tets.setflags(write=False)
        for indices in node_sets.values():
            indices.setflags(write=False)

        self._nodes = nodes
        self._tets = tets
        self._node_sets = node_sets
        self._unit = unit

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def tets(self) -> np.ndarray:
        return self._tets

    @property
    def node_sets(self) -> dict[str, np.ndarray]:
        return self._node_sets

    @property
    def unit(self) -> str:
        return self._unit

    @property
    def n_nodes(self) -> int:
        return self._nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self._tets.shape[0]

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @cached_property
    def volumes(self) -> np.ndarray:
        """Element volumes, all positive after canonical orientation."""
        return signed_volumes(self._nodes, self._tets)

    @cached_property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self._nodes.min(axis=0), self._nodes.max(axis=0)

    @property
    def center(self) -> np.ndarray:
        """Geometric center of the bounding box."""
        low, high = self.bounding_box
        return 0.5 * (low + high)

    @property
    def box_volume(self) -> float:
        """Volume of the bounding box, pores included."""
        low, high = self.bounding_box
        return float(np.prod(high - low))

    def get_node_set(self, name: str) -> np.ndarray:
        if name not in self._node_sets:
            raise BoundaryConditionError(f"Node set '{name}' not found in mesh, available: {sorted(self._node_sets)}")
        return self._node_sets[name]

    def with_node_sets(self, node_sets: dict[str, list[int]]) -> "Mesh":
        """Returns a copy of the mesh with additional node sets."""
        merged = {**self._node_sets, **node_sets}
        return Mesh(self._nodes, self._tets, merged, unit=self._unit, validate=False)

    def to_dict(self) -> dict:
        return {
            UNIT_STR: self._unit,
            NODES_STR: self._nodes.tolist(),
            TETS_STR: self._tets.tolist(),
            NODE_SETS_STR: {name: indices.tolist() for name, indices in self._node_sets.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        try:
            return cls(nodes=data[NODES_STR], tets=data[TETS_STR], node_sets=data.get(NODE_SETS_STR, {}),
                       unit=data.get(UNIT_STR, "mm"))
        except KeyError as exc:
            raise MeshError(f"Mesh document is missing key {exc}") from exc


class DofMap:
    """
    Maps nodes onto consecutive global degrees of freedom and holds the prescribed (constrained) ones.

    Attributes:
        n_nodes (int): number of nodes.
        dofs_per_node (int): number of consecutive DOFs per node.
        _constraints (dict[int, float]): constrained DOF index mapped to its prescribed value.
    """
    def __init__(self, n_nodes: int, dofs_per_node: int = 3):
        self.n_nodes = n_nodes
        self.dofs_per_node = dofs_per_node
        self._constraints = {}

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dofs_per_node

    def node_dofs(self, nodes: np.ndarray | list[int], components: list[int] | None = None) -> np.ndarray:
        """Global DOF indices of the given nodes, shape (len(nodes), len(components))."""
        nodes = np.asarray(nodes, dtype=np.int64)
        components = np.arange(self.dofs_per_node) if components is None else np.asarray(components)
        return nodes[:, None] * self.dofs_per_node + components[None, :]

    def constrain(self, dofs: np.ndarray, values: np.ndarray | float) -> None:
        """Adds prescribed values. Re-prescribing a DOF with the same value is allowed, a different value is not.

        Args:
            dofs (np.ndarray): global DOF indices.
            values (np.ndarray | float): prescribed values, broadcast against dofs.
        """
        dofs = np.asarray(dofs, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(values, dtype=float).ravel() if np.ndim(values) else values,
                                 dofs.shape)
        if dofs.size and (dofs.min() < 0 or dofs.max() >= self.n_dofs):
            raise BoundaryConditionError(f"Constrained DOF out of range 0..{self.n_dofs - 1}")

        for dof, value in zip(dofs.tolist(), values.tolist()):
            existing = self._constraints.get(dof)
            if existing is not None and not np.isclose(existing, value, rtol=1e-12, atol=1e-15):
                raise BoundaryConditionError(
                    f"Contradictory constraints on DOF {dof}: {existing} and {value}")
            self._constraints[dof] = value

    @property
    def constrained_dofs(self) -> np.ndarray:
        return np.array(sorted(self._constraints), dtype=np.int64)

    @property
    def constrained_values(self) -> np.ndarray:
        return np.array([self._constraints[dof] for dof in sorted(self._constraints)], dtype=float)

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    def scaled(self, factor: float) -> "DofMap":
        """Copy whose prescribed values are multiplied by a load factor."""
        scaled_map = DofMap(self.n_nodes, self.dofs_per_node)
        scaled_map._constraints = {dof: factor * value for dof, value in self._constraints.items()}
        return scaled_map


def signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed tetrahedron volumes det([x1-x0, x2-x0, x3-x0]) / 6."""
    x = nodes[tets]
    edges = x[:, 1:, :] - x[:, :1, :]
    return np.linalg.det(edges) / 6.0


def _validate_and_orient(nodes: np.ndarray, tets: np.ndarray, node_sets: dict[str, np.ndarray]) -> np.ndarray:
    """Checks indices, coincident nodes and element degeneracy. Returns connectivity re-oriented to positive volume."""
    n_nodes = nodes.shape[0]
    if not np.all(np.isfinite(nodes)):
        raise MeshError("Mesh contains non-finite node coordinates")
    if tets.size and (tets.min() < 0 or tets.max() >= n_nodes):
        bad = int(tets.max()) if tets.max() >= n_nodes else int(tets.min())
        raise MeshError(f"Element connectivity references node index {bad}, mesh has {n_nodes} nodes")
    for name, indices in node_sets.items():
        if indices.size and (indices.min() < 0 or indices.max() >= n_nodes):
            raise MeshError(f"Node set '{name}' contains indices out of range 0..{n_nodes - 1}")

    if n_nodes > 1:
        diagonal = float(np.linalg.norm(nodes.max(axis=0) - nodes.min(axis=0)))
        pairs = cKDTree(nodes).query_pairs(r=COINCIDENT_NODE_TOL * diagonal)
        if pairs:
            i, j = next(iter(pairs))
            raise MeshError(f"Nodes {i} and {j} coincide")

    volumes = signed_volumes(nodes, tets)
    degenerate = np.abs(volumes) < DEGENERATE_VOLUME_TOL
    if np.any(degenerate):
        raise MeshError(f"Degenerate element {int(np.argmax(degenerate))} with volume "
                        f"{volumes[np.argmax(degenerate)]:.3e}")

    oriented = tets.copy()
    flip = volumes < 0.0
    oriented[flip, 1], oriented[flip, 2] = tets[flip, 2], tets[flip, 1]
    return oriented


def load_mesh(path: str | Path) -> Mesh:
    """Loads and validates a mesh stored in the JSON mesh schema.

    Args:
        path (str | Path): path to the JSON file.

    Returns:
        Mesh: the validated mesh with elements oriented to positive volume.
    """
    try:
        with Path(path).open("r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise MeshError(f"Failed to parse mesh file {path}: {exc}") from exc

    mesh = Mesh.from_dict(data)
    logger.info(f"Loaded mesh {path} with {mesh.n_nodes} nodes and {mesh.n_elements} elements")
    return mesh


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    """Writes a mesh in the JSON mesh schema."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(mesh.to_dict(), f)
    logger.info(f"Wrote mesh {path}")


def boundary_nodes(mesh: Mesh) -> np.ndarray:
    """Nodes lying on faces that belong to exactly one element. For porous meshes this includes pore surfaces.

    Args:
        mesh (Mesh): a valid mesh.

    Returns:
        np.ndarray: sorted node indices.
    """
    faces = np.sort(mesh.tets[:, TET_FACES].reshape(-1, 3), axis=1)
    unique_faces, counts = np.unique(faces, axis=0, return_counts=True)
    return np.unique(unique_faces[counts == 1])


def rve_boundary_nodes(mesh: Mesh) -> np.ndarray:
    """Nodes of the outer RVE boundary, on which displacements are prescribed. Uses the 'boundary' node set when
    present, otherwise boundary nodes lying on the bounding box faces.
    """
    if BOUNDARY_SET_STR in mesh.node_sets:
        return mesh.node_sets[BOUNDARY_SET_STR]

    candidates = boundary_nodes(mesh)
    low, high = mesh.bounding_box
    tol = COINCIDENT_NODE_TOL * float(np.linalg.norm(high - low))
    coords = mesh.nodes[candidates]
    on_face = np.any((np.abs(coords - low) <= tol) | (np.abs(coords - high) <= tol), axis=1)
    return candidates[on_face]


def tet_volume(mesh: Mesh, e: int) -> float:
    """Volume of element e."""
    return float(mesh.volumes[e])


def write_vtk(mesh: Mesh, point_fields: dict[str, np.ndarray] | None, cell_fields: dict[str, np.ndarray] | None,
              path: str | Path) -> None:
    """Writes a legacy ASCII unstructured grid file.

    Args:
        mesh (Mesh): the mesh geometry.
        point_fields (dict[str, np.ndarray] | None): nodal fields with first dimension n_nodes.
        cell_fields (dict[str, np.ndarray] | None): element fields with first dimension n_elements.
        path (str | Path): output file path.
    """
    point_fields = point_fields or {}
    cell_fields = cell_fields or {}
    for name, values in point_fields.items():
        if np.shape(values)[0] != mesh.n_nodes:
            raise ValueError(f"Point field '{name}' has length {np.shape(values)[0]}, expected {mesh.n_nodes}")
    for name, values in cell_fields.items():
        if np.shape(values)[0] != mesh.n_elements:
            raise ValueError(f"Cell field '{name}' has length {np.shape(values)[0]}, expected {mesh.n_elements}")

    vtk_mesh = meshio.Mesh(
        points=np.asarray(mesh.nodes, dtype=float),
        cells=[("tetra", np.asarray(mesh.tets, dtype=np.int64))],
        point_data={name: np.asarray(values, dtype=float) for name, values in point_fields.items()},
        cell_data={name: [np.asarray(values, dtype=float)] for name, values in cell_fields.items()},
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meshio.write(path, vtk_mesh, file_format="vtk42", binary=False)
    logger.info(f"Wrote VTK file {path}")


def write_rve_fields(mesh: Mesh, fields: dict[str, np.ndarray], path: str | Path) -> None:
    """Writes the fields of an RVE solve, sorting nodal and element fields by their length. Nodal fields win when the
    mesh has as many nodes as elements."""
    point_fields, cell_fields = {}, {}
    for name, values in fields.items():
        if np.shape(values)[0] == mesh.n_nodes:
            point_fields[name] = values
        elif np.shape(values)[0] == mesh.n_elements:
            cell_fields[name] = values
        else:
            logger.warning(f"Skipping field '{name}' of length {np.shape(values)[0]}")
    write_vtk(mesh, point_fields, cell_fields, path)


def read_vtk(path: str | Path, unit: str = "mm") -> tuple[Mesh, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Reads an unstructured grid file written by write_vtk.

    Returns:
        tuple[Mesh, dict, dict]: the mesh, its point fields and its cell fields.
    """
    vtk_mesh = meshio.read(Path(path))
    tets = vtk_mesh.cells_dict.get("tetra")
    if tets is None:
        raise MeshError(f"No tetrahedral cells found in {path}")
    mesh = Mesh(vtk_mesh.points, tets, unit=unit)
    point_fields = {name: np.asarray(values) for name, values in vtk_mesh.point_data.items()}
    cell_fields = {name: np.asarray(blocks[0]) for name, blocks in vtk_mesh.cell_data.items()}
    return mesh, point_fields, cell_fields


def voxels_to_tets(solid: np.ndarray, spacing: float | tuple[float, float, float],
                   origin: tuple[float, float, float] = (0.0, 0.0, 0.0), unit: str = "mm") -> Mesh:
    """Splits every solid voxel into 6 tetrahedra sharing the voxel's main diagonal. All voxels use the same split,
    so the face diagonals of neighboring voxels coincide. Nodes are shared between voxels.

    Args:
        solid (np.ndarray): boolean occupancy of shape (nx, ny, nz), True for solid.
        spacing (float | tuple): voxel edge length(s).
        origin (tuple): coordinates of the grid corner.
        unit (str): coordinate unit of the resulting mesh.

    Returns:
        Mesh: the tetrahedral mesh with face node sets and the outer 'boundary' set.
    """
    solid = np.asarray(solid, dtype=bool)
    nx, ny, nz = solid.shape
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    origin = np.asarray(origin, dtype=float)

    voxel_ijk = np.argwhere(solid)
    if voxel_ijk.size == 0:
        raise MeshError("Cannot mesh a grid without solid voxels")

    def grid_index(ijk: np.ndarray) -> np.ndarray:
        return ijk[..., 0] + (nx + 1) * (ijk[..., 1] + (ny + 1) * ijk[..., 2])

    unit_vectors = np.eye(3, dtype=np.int64)
    local_tets = []
    for order in permutations(range(3)):
        path = [np.zeros(3, dtype=np.int64)]
        for axis in order:
            path.append(path[-1] + unit_vectors[axis])
        local_tets.append(path)
    local_tets = np.array(local_tets)  # (6, 4, 3)

    corner_ijk = voxel_ijk[:, None, None, :] + local_tets[None, :, :, :]
    grid_tets = grid_index(corner_ijk).reshape(-1, 4)

    used, tets = np.unique(grid_tets, return_inverse=True)
    tets = tets.reshape(-1, 4)
    i = used % (nx + 1)
    j = (used // (nx + 1)) % (ny + 1)
    k = used // ((nx + 1) * (ny + 1))
    grid_coords = np.stack([i, j, k], axis=1)
    nodes = origin + grid_coords * spacing

    node_sets = {
        "xmin": np.flatnonzero(i == 0), "xmax": np.flatnonzero(i == nx),
        "ymin": np.flatnonzero(j == 0), "ymax": np.flatnonzero(j == ny),
        "zmin": np.flatnonzero(k == 0), "zmax": np.flatnonzero(k == nz),
    }
    node_sets[BOUNDARY_SET_STR] = np.unique(np.concatenate(list(node_sets.values())))

    return Mesh(nodes, tets, node_sets, unit=unit)


def structured_box_mesh(shape: tuple[int, int, int], lengths: tuple[float, float, float],
                        origin: tuple[float, float, float] = (0.0, 0.0, 0.0), unit: str = "mm") -> Mesh:
    """Box of shape[0] x shape[1] x shape[2] voxels, each split into 6 tetrahedra."""
    spacing = np.asarray(lengths, dtype=float) / np.asarray(shape, dtype=float)
    return voxels_to_tets(np.ones(shape, dtype=bool), tuple(spacing), origin=origin, unit=unit)


def l_bracket_mesh(cells_per_leg: int = 4, cells_thickness: int = 2, leg_length: float = 40.0,
                   leg_width: float = 20.0, thickness: float = 10.0, unit: str = "mm") -> Mesh:
    """L-shaped beam with a sharp re-entrant corner. The grid covers a square of side leg_length in the xy-plane and
    removes the quadrant beyond the leg width, leaving two perpendicular legs.

    Node sets 'fixed' (end of the vertical leg, y = leg_length) and 'tip' (end of the horizontal leg,
    x = leg_length) are added next to the face sets.
    """
    cells_width = max(1, round(cells_per_leg * leg_width / leg_length))
    solid = np.ones((cells_per_leg, cells_per_leg, cells_thickness), dtype=bool)
    solid[cells_width:, cells_width:, :] = False

    spacing = (leg_length / cells_per_leg, leg_length / cells_per_leg, thickness / cells_thickness)
    mesh = voxels_to_tets(solid, spacing, unit=unit)

    y_top = np.isclose(mesh.nodes[:, 1], leg_length)
    x_end = np.isclose(mesh.nodes[:, 0], leg_length)
    return mesh.with_node_sets({"fixed": np.flatnonzero(y_top), "tip": np.flatnonzero(x_end)})

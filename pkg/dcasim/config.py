"""
Module for parsing run parameters from a JSON config document.
"""
import json
from pathlib import Path

import numpy as np

from dcasim.globals import *
from dcasim.exceptions import BoundaryConditionError, ConfigError
from dcasim.general_functions import interpolate_deformation_path, resolve_load_path
from dcasim.material import ElasticConstants, HardeningCurve
from dcasim.mcr import RveDescriptors, sample_descriptors
from dcasim.mesh import DofMap, Mesh

_SECTIONS = ("paths", "material", "clustering", "solver", "load", "micro", "mcr", "run")


class Config:
    """
    A common config class that can be used to access the run document and provide parameters elsewhere in the
    project. Accessors validate on access and fall back to the package defaults.

    Attributes:
        _data (dict): the parsed JSON document.
        _base_dir (Path): directory that relative paths are resolved against.
    """
    def __init__(self, data: dict, base_dir: str | Path = "."):
        if not isinstance(data, dict):
            raise ConfigError(f"Config must be a JSON object, got {type(data).__name__}")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"Unknown config sections {sorted(unknown)}, expected a subset of {list(_SECTIONS)}")
        self._data = {section: dict(data.get(section) or {}) for section in _SECTIONS}
        self._base_dir = Path(base_dir)

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        path = Path(path)
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
        return cls(data, base_dir=path.parent)

    def apply_overrides(self, seed: int | None = None, k: int | None = None, threads: int | None = None,
                        out: str | Path | None = None) -> "Config":
        """Applies command line overrides in place. `k` sets both the macro and the micro cluster counts."""
        if seed is not None:
            self._data["clustering"]["seed"] = seed
        if k is not None:
            self._data["clustering"]["k_macro"] = k
            self._data["clustering"]["k_micro"] = k
        if threads is not None:
            self._data["run"]["threads"] = threads
        if out is not None:
            self._data["paths"]["out_dir"] = str(out)
        return self

    def _section(self, section: str) -> dict:
        return self._data[section]

    def _resolve(self, path: str) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self._base_dir / path

    def _positive(self, section: str, key: str, default, cast=float):
        value = self._section(section).get(key, default)
        try:
            value = cast(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}.{key} must be a number, got {value!r}") from exc
        if value <= 0:
            raise ConfigError(f"{section}.{key} must be positive, got {value}")
        return value

    def _choice(self, section: str, key: str, default: str, allowed: tuple[str, ...]) -> str:
        value = self._section(section).get(key, default)
        if value not in allowed:
            raise ConfigError(f"{section}.{key} must be one of {list(allowed)}, got {value!r}")
        return value

    def get_mesh_path(self) -> Path:
        if "mesh" not in self._section("paths"):
            raise ConfigError("paths.mesh is required")
        return self._resolve(self._section("paths")["mesh"])

    def get_rve_mesh_paths(self) -> list[Path]:
        paths = self._section("paths").get("rve_meshes", [])
        if isinstance(paths, str):
            paths = [paths]
        return [self._resolve(path) for path in paths]

    def get_out_dir(self) -> Path:
        return self._resolve(self._section("paths").get("out_dir", "out"))

    def get_checkpoint_path(self) -> Path | None:
        path = self._section("paths").get("checkpoint")
        return None if path is None else self._resolve(path)

    def get_elastic_constants(self) -> ElasticConstants:
        material = self._section("material")
        try:
            return ElasticConstants(young_modulus=float(material.get("young_modulus", YOUNG_MODULUS)),
                                    poisson_ratio=float(material.get("poisson_ratio", POISSON_RATIO)))
        except ValueError as exc:
            raise ConfigError(f"Invalid elastic constants: {exc}") from exc

    def get_hardening_curve(self) -> HardeningCurve:
        if "hardening" not in self._section("material"):
            raise ConfigError("material.hardening is required")
        return HardeningCurve.from_config(self._section("material")["hardening"])

    def get_k_macro(self) -> int:
        return self._positive("clustering", "k_macro", 50, int)

    def get_k_micro(self) -> int:
        return self._positive("clustering", "k_micro", 100, int)

    def get_seed(self) -> int:
        return int(self._section("clustering").get("seed", 0))

    def get_threads(self) -> int:
        return self._positive("run", "threads", 1, int)

    def get_solver_settings(self) -> dict:
        """Tolerances and iteration caps of the macro and micro Newton solvers."""
        max_cg = self._section("solver").get("max_cg_iters")
        return {
            "tol_cg": self._positive("solver", "tol_cg", TOL_CG),
            "tol_newton": self._positive("solver", "tol_newton", TOL_NEWTON),
            "max_newton_iters": self._positive("solver", "max_newton_iters", MAX_NEWTON_ITERS, int),
            "max_cg_iters": None if max_cg is None else self._positive("solver", "max_cg_iters", max_cg, int),
            "max_bisections": int(self._section("solver").get("max_bisections", MAX_BISECTIONS)),
            "micro_tol_newton": self._positive("solver", "micro_tol_newton", TOL_NEWTON),
            "method": self._choice("solver", "method", SOLVER_IDCG_STR, (SOLVER_IDCG_STR, SOLVER_PCG_STR)),
        }

    def get_load_factors(self) -> list[float]:
        load = self._section("load")
        if "load_factors" in load:
            factors = [float(f) for f in load["load_factors"]]
            if not factors or np.any(np.diff([0.0] + factors) <= 0.0):
                raise ConfigError(f"load.load_factors must be nonempty and increasing, got {factors}")
            return factors
        n_steps = self._positive("load", "n_steps", 10, int)
        return list(np.linspace(0.0, 1.0, n_steps + 1)[1:])

    def get_boundary_conditions(self, mesh: Mesh) -> DofMap:
        """Displacement constraints at load factor 1 from the node set entries of the load section."""
        entries = self._section("load").get("boundary_conditions", [])
        if not entries:
            raise ConfigError("load.boundary_conditions must list at least one constraint")
        dof_map = DofMap(mesh.n_nodes)
        for entry in entries:
            try:
                nodes = mesh.get_node_set(entry["node_set"])
                components = entry.get("components", [0, 1, 2])
                values = entry.get("values", 0.0)
            except KeyError as exc:
                raise BoundaryConditionError(f"Invalid boundary condition {entry}: {exc}") from exc
            values = np.broadcast_to(np.asarray(values, dtype=float), (len(components),))
            dofs = dof_map.node_dofs(nodes, components)
            dof_map.constrain(dofs, np.broadcast_to(values, dofs.shape))
        return dof_map

    def get_reaction_node_set(self) -> str:
        load = self._section("load")
        if "reaction_node_set" in load:
            return load["reaction_node_set"]
        return self._section("load").get("boundary_conditions", [{}])[-1].get("node_set", BOUNDARY_SET_STR)

    def get_deformation_path(self) -> list[np.ndarray]:
        """Deformation gradients of every micro load increment."""
        load = self._section("load")
        try:
            control_points = resolve_load_path(load.get("deformation_path", "uniaxial"))
        except ValueError as exc:
            raise ConfigError(f"Invalid load.deformation_path: {exc}") from exc
        return interpolate_deformation_path(control_points, self._positive("load", "increments_per_segment", 10, int))

    def get_micro_settings(self) -> dict:
        micro = self._section("micro")
        return {
            "assignment": self._choice("micro", "assignment", ASSIGNMENT_UNIFORM_STR,
                                       (ASSIGNMENT_UNIFORM_STR, ASSIGNMENT_RANDOM_STR)),
            "assignment_seed": int(micro.get("assignment_seed", 0)),
            "boundary_rotations": self._choice("micro", "boundary_rotations", ROTATIONS_PRESCRIBED_STR,
                                               (ROTATIONS_PRESCRIBED_STR, ROTATIONS_FREE_STR)),
            "model": self._choice("micro", "model", MICRO_ROM_STR, (MICRO_ROM_STR, MICRO_FULL_FIELD_STR)),
            "fd_check": bool(micro.get("fd_check", False)),
            # None snapshots the element of peak von Mises stress
            "snapshot_elements": None if micro.get("snapshot_elements") is None
            else [int(e) for e in micro["snapshot_elements"]],
        }

    def get_rve_resolution(self) -> int:
        return self._positive("mcr", "resolution", RVE_RESOLUTION, int)

    def get_rve_descriptors(self) -> list[RveDescriptors]:
        """Explicit descriptor sets, or Sobol samples when only `n_samples` is given."""
        mcr = self._section("mcr")
        side_length = self._positive("mcr", "side_length", RVE_SIDE_LENGTH)
        if "descriptors" in mcr:
            descriptors = mcr["descriptors"]
            many = isinstance(descriptors, list) and descriptors and isinstance(descriptors[0], (list, dict))
            return [RveDescriptors.from_config(d, side_length) for d in (descriptors if many else [descriptors])]
        if "n_samples" in mcr:
            return sample_descriptors(self._positive("mcr", "n_samples", 1, int),
                                      skip=int(mcr.get("sobol_skip", 1)),
                                      volume_fraction=float(mcr.get("volume_fraction", PORE_VOLUME_FRACTION)),
                                      side_length=side_length)
        raise ConfigError("mcr section needs 'descriptors' or 'n_samples'")

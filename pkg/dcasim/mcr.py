"""
Module for the characterization and reconstruction of periodic porous RVEs from pore descriptors: Sobol sampling of
the descriptor space, pore placement by simulated annealing, pore size calibration against the voxelized volume
fraction, cleanup of floating solids and tetrahedral meshing.
"""
import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.stats import qmc

from dcasim.globals import *
from dcasim.exceptions import ConfigError, ConvergenceError, MeshError
from dcasim.mesh import Mesh, voxels_to_tets

logger = logging.getLogger(__name__)

MAX_CALIBRATION_ITERS = 40


@dataclass(frozen=True)
class RveDescriptors:
    """
    Pore descriptors of a porous RVE.

    Attributes:
        volume_fraction (float): pore volume fraction.
        n_pores (int): number of pores.
        aspect_ratio (float): major over minor semi-axis of the prolate pores.
        mean_distance (float): mean distance from every pore center to its nearest neighbour, periodic metric (um).
        side_length (float): RVE side length (um).
    """
    volume_fraction: float = PORE_VOLUME_FRACTION
    n_pores: int = 1
    aspect_ratio: float = 1.0
    mean_distance: float = RVE_SIDE_LENGTH
    side_length: float = RVE_SIDE_LENGTH

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 1.0:
            raise ConfigError(f"Pore volume fraction must lie in (0, 1), got {self.volume_fraction}")
        if int(self.n_pores) != self.n_pores or self.n_pores < 1:
            raise ConfigError(f"Pore count must be a positive integer, got {self.n_pores}")
        if self.aspect_ratio < 1.0:
            raise ConfigError(f"Aspect ratio must be at least 1, got {self.aspect_ratio}")
        if self.mean_distance <= 0.0 or self.side_length <= 0.0:
            raise ConfigError(f"Distances must be positive, got r_d={self.mean_distance}, L={self.side_length}")

    def to_list(self) -> list[float]:
        return [self.volume_fraction, self.n_pores, self.aspect_ratio, self.mean_distance]

    def to_dict(self) -> dict:
        return {"volume_fraction": self.volume_fraction, "n_pores": self.n_pores, "aspect_ratio": self.aspect_ratio,
                "mean_distance": self.mean_distance, "side_length": self.side_length}

    @classmethod
    def from_config(cls, descriptors: list | dict, side_length: float = RVE_SIDE_LENGTH) -> "RveDescriptors":
        """Reads the [V_f, N_p, A_r, r_d] list form or the keyed form."""
        if isinstance(descriptors, dict):
            return cls(side_length=descriptors.get("side_length", side_length),
                       **{key: value for key, value in descriptors.items() if key != "side_length"})
        if len(descriptors) != 4:
            raise ConfigError(f"Descriptor list must be [V_f, N_p, A_r, r_d], got {descriptors}")
        vf, n_pores, aspect, distance = descriptors
        return cls(float(vf), int(n_pores), float(aspect), float(distance), side_length)


def quaternion_to_matrix(quaternion: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(quaternion, dtype=float) / np.linalg.norm(quaternion)
    return np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                     [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                     [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


@dataclass(frozen=True)
class Pore:
    """
    Prolate ellipsoidal pore.

    Attributes:
        center (np.ndarray): center coordinates (um).
        semi_axes (np.ndarray): (r_a, r_b, r_b) along the local axes, the major axis first.
        quaternion (np.ndarray): unit quaternion (w, x, y, z) rotating the local axes into the RVE frame.
        image (bool): whether the pore is a periodic copy of another pore.
    """
    center: np.ndarray
    semi_axes: np.ndarray
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    image: bool = False

    @property
    def rotation(self) -> np.ndarray:
        return quaternion_to_matrix(self.quaternion)

    @property
    def volume(self) -> float:
        return float(4.0 / 3.0 * np.pi * np.prod(self.semi_axes))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Whether the points lie inside the ellipsoid."""
        local = (np.asarray(points) - self.center) @ self.rotation
        return np.sum((local / self.semi_axes) ** 2, axis=-1) <= 1.0

    def scaled(self, factor: float) -> "Pore":
        return Pore(self.center, self.semi_axes * factor, self.quaternion, self.image)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "semi_axes": self.semi_axes.tolist(),
                "quaternion": self.quaternion.tolist(), "image": self.image}


def periodic_images(pore: Pore, side_length: float) -> list[Pore]:
    """Copies of a pore shifted by the side length across every face its bounding sphere crosses."""
    radius = float(np.max(pore.semi_axes))
    shifts = []
    for c in pore.center:
        axis_shifts = [0.0]
        if c - radius < 0.0:
            axis_shifts.append(side_length)
        if c + radius > side_length:
            axis_shifts.append(-side_length)
        shifts.append(axis_shifts)
    return [Pore(pore.center + np.array(shift), pore.semi_axes, pore.quaternion, image=True)
            for shift in product(*shifts) if any(shift)]


@dataclass(frozen=True)
class PoreSet:
    """
    Pores of one RVE.

    Attributes:
        pores (list[Pore]): the original pores with centers inside the RVE.
        side_length (float): RVE side length (um).
    """
    pores: list[Pore]
    side_length: float = RVE_SIDE_LENGTH

    @property
    def n_pores(self) -> int:
        return len(self.pores)

    @property
    def centers(self) -> np.ndarray:
        return np.array([pore.center for pore in self.pores]).reshape(-1, 3)

    def with_images(self) -> list[Pore]:
        """The pores followed by the periodic images of every boundary crossing pore."""
        images = [image for pore in self.pores for image in periodic_images(pore, self.side_length)]
        return list(self.pores) + images

    def scaled(self, factor: float) -> "PoreSet":
        return PoreSet([pore.scaled(factor) for pore in self.pores], self.side_length)

    def to_dict(self) -> dict:
        return {"side_length": self.side_length, "pores": [pore.to_dict() for pore in self.with_images()]}


@dataclass(frozen=True)
class VoxelGrid:
    """
    Solid/pore occupancy of a cubic RVE sampled at voxel centers.

    Attributes:
        solid (np.ndarray): boolean array of shape (n, n, n), True for solid.
        side_length (float): RVE side length (um).
    """
    solid: np.ndarray
    side_length: float = RVE_SIDE_LENGTH

    @property
    def resolution(self) -> int:
        return self.solid.shape[0]

    @property
    def spacing(self) -> float:
        return self.side_length / self.resolution

    @property
    def pore_fraction(self) -> float:
        return float(1.0 - self.solid.mean())


def sobol_sample(dim: int, n: int, skip: int = 0) -> np.ndarray:
    """Unscrambled Sobol points in the unit hypercube.

    Args:
        dim (int): dimension, at most 4.
        n (int): number of points.
        skip (int): number of leading points skipped; the point with index 0 is the origin.

    Returns:
        np.ndarray: points of shape (n, dim).
    """
    if not 1 <= dim <= 4:
        raise ConfigError(f"Sobol sampling supports 1 to 4 dimensions, got {dim}")
    sampler = qmc.Sobol(d=dim, scramble=False)
    if skip:
        sampler.fast_forward(skip)
    return sampler.random(n)


def sample_descriptors(n: int, skip: int = 1, volume_fraction: float = PORE_VOLUME_FRACTION,
                       side_length: float = RVE_SIDE_LENGTH) -> list[RveDescriptors]:
    """Descriptor sets at a fixed volume fraction from Sobol points over the pore count, aspect ratio and mean
    distance ranges."""
    points = sobol_sample(3, n, skip)
    low = np.array([N_PORES_RANGE[0], ASPECT_RATIO_RANGE[0], PORE_DISTANCE_RANGE[0]], dtype=float)
    high = np.array([N_PORES_RANGE[1], ASPECT_RATIO_RANGE[1], PORE_DISTANCE_RANGE[1]], dtype=float)
    values = qmc.scale(points, low, high)
    return [RveDescriptors(volume_fraction, int(round(n_pores)), float(aspect), float(distance), side_length)
            for n_pores, aspect, distance in values]


def _wrap(centers: np.ndarray, side_length: float) -> np.ndarray:
    wrapped = np.mod(centers, side_length)
    wrapped[wrapped >= side_length] = 0.0
    return wrapped


def mean_nearest_distance(centers: np.ndarray, side_length: float) -> float:
    """Mean distance from every center to its nearest other center under the periodic metric. A single pore is
    nearest to its own image at one side length."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    if centers.shape[0] < 2:
        return float(side_length)
    wrapped = _wrap(centers, side_length)
    distances, _ = cKDTree(wrapped, boxsize=side_length).query(wrapped, k=2)
    return float(distances[:, 1].mean())


def anneal_centers(centers: np.ndarray, target: float, side_length: float, rng: np.random.Generator,
                   max_moves: int | None = None) -> tuple[np.ndarray, float]:
    """Moves pore centers by simulated annealing until their mean nearest neighbour distance matches the target.

    The temperature starts at half the distance descriptor range and cools geometrically once per sweep over the
    pores. Moves are uniform in a cube whose half width decays with the temperature from a quarter side length.

    Returns:
        tuple[np.ndarray, float]: the best centers found and their absolute distance error.
    """
    n = centers.shape[0]
    centers = _wrap(np.array(centers, dtype=float), side_length)
    if n < 2:
        return centers, 0.0
    max_moves = ANNEALING_MOVES_PER_PORE * n if max_moves is None else max_moves
    t0 = 0.5 * (PORE_DISTANCE_RANGE[1] - PORE_DISTANCE_RANGE[0])
    temperature = t0
    error = abs(mean_nearest_distance(centers, side_length) - target)
    best, best_error = centers.copy(), error

    for move in range(max_moves):
        if best_error <= 0.01 * target:
            break
        i = int(rng.integers(n))
        trial = centers.copy()
        amplitude = 0.25 * side_length * temperature / t0
        trial[i] = _wrap(trial[i] + rng.uniform(-amplitude, amplitude, 3), side_length)
        trial_error = abs(mean_nearest_distance(trial, side_length) - target)
        delta = trial_error - error
        if delta <= 0.0 or rng.random() < np.exp(-delta / max(temperature, 1e-300)):
            centers, error = trial, trial_error
            if error < best_error:
                best, best_error = centers.copy(), error
        if (move + 1) % n == 0:
            temperature *= ANNEALING_COOLING

    logger.debug(f"Annealing finished with mean distance error {best_error:.4g} um")
    return best, best_error


def random_quaternions(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit quaternions."""
    quaternions = rng.normal(size=(n, 4))
    return quaternions / np.linalg.norm(quaternions, axis=1, keepdims=True)


def voxel_centers(resolution: int, side_length: float) -> np.ndarray:
    axis = (np.arange(resolution) + 0.5) * side_length / resolution
    return np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)


def voxelize(pores: PoreSet, resolution: int = RVE_RESOLUTION) -> VoxelGrid:
    """Marks a voxel as pore when its center lies inside any pore or periodic image."""
    side_length = pores.side_length
    spacing = side_length / resolution
    centers = voxel_centers(resolution, side_length)
    solid = np.ones((resolution,) * 3, dtype=bool)
    for pore in pores.with_images():
        radius = float(np.max(pore.semi_axes))
        low = np.clip(np.floor((pore.center - radius) / spacing).astype(int), 0, resolution)
        high = np.clip(np.ceil((pore.center + radius) / spacing).astype(int) + 1, 0, resolution)
        if np.any(high <= low):
            continue
        window = tuple(slice(lo, hi) for lo, hi in zip(low, high))
        solid[window] &= ~pore.contains(centers[window])
    return VoxelGrid(solid=solid, side_length=side_length)


def remove_isolated_solids(grid: VoxelGrid) -> VoxelGrid:
    """Converts every 6-connected solid component except the largest into pore. Components joined across opposite
    RVE faces count as one."""
    labels, n_labels = ndimage.label(grid.solid)
    if n_labels == 0:
        raise MeshError("Voxel grid has no solid voxels")

    pairs = []
    for axis in range(3):
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        both = (first > 0) & (last > 0)
        pairs.append(np.stack([first[both], last[both]], axis=1))
    pairs = np.concatenate(pairs) - 1
    graph = coo_matrix((np.ones(pairs.shape[0]), (pairs[:, 0], pairs[:, 1])), shape=(n_labels, n_labels))
    _, merged = connected_components(graph, directed=False)

    component = np.zeros(labels.shape, dtype=np.int64) - 1
    component[labels > 0] = merged[labels[labels > 0] - 1]
    sizes = np.bincount(component[labels > 0])
    keep = int(np.argmax(sizes))
    solid = component == keep
    removed = int(grid.solid.sum() - solid.sum())
    if removed:
        logger.info(f"Removed {removed} voxels of {sizes.size - 1} isolated solid components")
    return VoxelGrid(solid=solid, side_length=grid.side_length)


def voxel_to_tets(grid: VoxelGrid) -> Mesh:
    """Tetrahedral mesh of the solid voxels in um, 6 tets per voxel, with the RVE boundary node set."""
    return voxels_to_tets(grid.solid, grid.spacing, unit="um")


def _base_pores(centers: np.ndarray, quaternions: np.ndarray, descriptors: RveDescriptors) -> list[Pore]:
    # minor semi-axis of non-overlapping pores adding up to the target volume
    pore_volume = descriptors.volume_fraction * descriptors.side_length ** 3 / descriptors.n_pores
    minor = (3.0 * pore_volume / (4.0 * np.pi * descriptors.aspect_ratio)) ** (1.0 / 3.0)
    semi_axes = np.array([descriptors.aspect_ratio * minor, minor, minor])
    return [Pore(center, semi_axes.copy(), quaternion) for center, quaternion in zip(centers, quaternions)]


def calibrate_volume_fraction(pores: PoreSet, target: float, resolution: int = RVE_RESOLUTION,
                              tol: float = VOLUME_FRACTION_TOL) -> tuple[PoreSet, VoxelGrid]:
    """Scales all semi-axes by one factor, found by bisection, until the voxelized pore fraction meets the target.
    Overlapping pores are compensated that way.

    Returns:
        tuple[PoreSet, VoxelGrid]: the scaled pores and their voxel grid.
    """
    low, high = 0.5, 1.0
    while voxelize(pores.scaled(high), resolution).pore_fraction < target:
        low, high = high, 1.5 * high
        if high > 10.0:
            raise ConvergenceError("Pore size calibration cannot reach the target volume fraction",
                                   {"target": target})

    best = None
    for _ in range(MAX_CALIBRATION_ITERS):
        factor = 0.5 * (low + high)
        grid = voxelize(pores.scaled(factor), resolution)
        error = grid.pore_fraction - target
        if best is None or abs(error) < abs(best[2]):
            best = (factor, grid, error)
        if abs(error) <= 0.25 * tol:
            break
        if error < 0.0:
            low = factor
        else:
            high = factor

    factor, grid, error = best
    if abs(error) > tol:
        raise ConvergenceError(f"Voxelized pore fraction misses the target {target} by {error:.4g}",
                               {"target": target, "error": error})
    return pores.scaled(factor), grid


def reconstruct(descriptors: RveDescriptors, seed: int = 0, resolution: int = RVE_RESOLUTION) -> PoreSet:
    """Reconstructs a periodic pore arrangement matching the descriptors: pore count, then center placement for the
    mean distance, then orientations and aspect ratio, and finally the sizes for the volume fraction.

    Args:
        descriptors (RveDescriptors): target descriptors.
        seed (int): seed of the random generator; equal inputs give equal pore sets.
        resolution (int): voxel resolution of the volume fraction calibration.

    Returns:
        PoreSet: the calibrated pores.
    """
    rng = np.random.default_rng(seed)
    side_length = descriptors.side_length
    centers = rng.uniform(0.0, side_length, size=(descriptors.n_pores, 3))
    centers, error = anneal_centers(centers, descriptors.mean_distance, side_length, rng)
    if descriptors.n_pores > 1 and error > PORE_DISTANCE_TOL * descriptors.mean_distance:
        raise ConvergenceError(f"Annealing reached a mean pore distance error of {error:.4g} um for the target "
                               f"{descriptors.mean_distance} um",
                               {"target": descriptors.mean_distance, "error": error})

    pores = PoreSet(_base_pores(centers, random_quaternions(descriptors.n_pores, rng), descriptors), side_length)
    pores, grid = calibrate_volume_fraction(pores, descriptors.volume_fraction, resolution)
    semi_axes = pores.pores[0].semi_axes
    if semi_axes[0] < MIN_MAJOR_AXIS or semi_axes[1] > MAX_MINOR_AXIS:
        logger.warning(f"Calibrated semi-axes {semi_axes.tolist()} leave the bounds [{MIN_MAJOR_AXIS}, "
                       f"{MAX_MINOR_AXIS}] um")
    logger.info(f"Reconstructed {descriptors.n_pores} pores, pore fraction {grid.pore_fraction:.4f}")
    return pores


def measure_descriptors(pores: PoreSet, grid: VoxelGrid | None = None) -> RveDescriptors:
    """Descriptors of a pore set. The volume fraction comes from the voxel grid when given, otherwise from the pore
    volumes ignoring overlaps."""
    if pores.n_pores == 0:
        raise ValueError("Cannot measure descriptors of an empty pore set")
    if grid is not None:
        volume_fraction = grid.pore_fraction
    else:
        volume_fraction = sum(pore.volume for pore in pores.pores) / pores.side_length ** 3
    semi_axes = pores.pores[0].semi_axes
    return RveDescriptors(volume_fraction=volume_fraction, n_pores=pores.n_pores,
                          aspect_ratio=float(semi_axes[0] / semi_axes[1]),
                          mean_distance=mean_nearest_distance(pores.centers, pores.side_length),
                          side_length=pores.side_length)


def mean_surface_gap(pores: PoreSet) -> float:
    """Mean nearest neighbour gap between the equivalent volume spheres of the pores, periodic metric."""
    if pores.n_pores < 2:
        return float("nan")
    centers = _wrap(pores.centers, pores.side_length)
    radii = np.array([np.prod(pore.semi_axes) ** (1.0 / 3.0) for pore in pores.pores])
    distances, neighbours = cKDTree(centers, boxsize=pores.side_length).query(centers, k=2)
    return float(np.mean(distances[:, 1] - radii - radii[neighbours[:, 1]]))


def descriptor_report(pores: PoreSet, grid: VoxelGrid, target: RveDescriptors | None = None) -> dict:
    """Measured descriptors, their errors against the target and the surface gap alternative to the center distance.
    """
    measured = measure_descriptors(pores, grid)
    report = {"measured": measured.to_dict(), "mean_surface_gap": mean_surface_gap(pores),
              "distance_metric": "periodic center-to-center", "resolution": grid.resolution}
    if target is not None:
        report["target"] = target.to_dict()
        report["errors"] = {
            "volume_fraction": measured.volume_fraction - target.volume_fraction,
            "n_pores": measured.n_pores - target.n_pores,
            "aspect_ratio": measured.aspect_ratio - target.aspect_ratio,
            "mean_distance_relative": (measured.mean_distance - target.mean_distance) / target.mean_distance,
        }
    return report


def centered_pore_grid(shape: str = "sphere", volume_fraction: float = PORE_VOLUME_FRACTION,
                       resolution: int = RVE_RESOLUTION, side_length: float = RVE_SIDE_LENGTH) -> VoxelGrid:
    """RVE with one pore at its center: a sphere or a cylindrical hole along z with the analytic size of the volume
    fraction."""
    centers = voxel_centers(resolution, side_length) - 0.5 * side_length
    if shape == "sphere":
        radius = (3.0 * volume_fraction * side_length ** 3 / (4.0 * np.pi)) ** (1.0 / 3.0)
        pore = np.sum(centers ** 2, axis=-1) <= radius ** 2
    elif shape == "cylinder":
        radius = np.sqrt(volume_fraction * side_length ** 2 / np.pi)
        pore = np.sum(centers[..., :2] ** 2, axis=-1) <= radius ** 2
    else:
        raise ConfigError(f"Unknown pore shape '{shape}', expected 'sphere' or 'cylinder'")
    return VoxelGrid(solid=~pore, side_length=side_length)


def generate_rve(descriptors: RveDescriptors, seed: int = 0,
                 resolution: int = RVE_RESOLUTION) -> tuple[PoreSet, VoxelGrid, Mesh]:
    """Reconstruction, voxelization, cleanup and meshing of one RVE.

    Cleanup turns isolated solid into pore. While the cleaned grid misses the volume fraction, the pores are
    recalibrated to a target lowered by the pore fraction the cleanup added.
    """
    pores = reconstruct(descriptors, seed=seed, resolution=resolution)
    target = descriptors.volume_fraction
    calibration_target = target
    for attempt in range(MAX_CLEANUP_RECALIBRATIONS + 1):
        grid = remove_isolated_solids(voxelize(pores, resolution))
        error = grid.pore_fraction - target
        if abs(error) <= VOLUME_FRACTION_TOL:
            return pores, grid, voxel_to_tets(grid)
        calibration_target -= error
        if attempt == MAX_CLEANUP_RECALIBRATIONS or calibration_target <= 0.0:
            break
        logger.info(f"Cleaned pore fraction {grid.pore_fraction:.4f} misses {target}; recalibrating to "
                    f"{calibration_target:.4f}")
        pores, _ = calibrate_volume_fraction(pores, calibration_target, resolution, tol=0.5 * VOLUME_FRACTION_TOL)

    raise ConvergenceError(f"Pore fraction after removing isolated solids misses the target {target} by {error:.4g}",
                           {"target": target, "error": error})

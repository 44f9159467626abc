"""
Module for general functions used in various places: tensor algebra in Voigt notation and load path handling.
"""

import numpy as np

from dcasim.globals import *


LOAD_PATHS = {
    "uniaxial": [
        np.diag([1.02, 0.99, 0.99]),
    ],
    "multiaxial": [
        np.array([[1.01, 0.02, 0.025],
                  [0.02, 1.02, 0.03],
                  [0.025, 0.03, 0.97]]),
    ],
    "load_reverse": [
        np.array([[1.01, 0.005, 0.01],
                  [0.005, 1.02, 0.015],
                  [0.01, 0.015, 0.97]]),
        np.array([[0.97, 0.015, 0.02],
                  [0.015, 1.01, 0.005],
                  [0.02, 0.005, 1.02]]),
    ],
    "cyclic_shear": [
        np.array([[1.0, 0.005, 0.0], [0.005, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        np.array([[1.0, -0.01, 0.0], [-0.01, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        np.array([[1.0, 0.015, 0.0], [0.015, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    ],
    "tension": [
        np.diag([1.04, 0.98, 0.98]),
    ],
}


def sym(tensor: np.ndarray) -> np.ndarray:
    """Symmetric part of a (batch of) 3x3 tensor(s)."""
    return 0.5 * (tensor + np.swapaxes(tensor, -1, -2))


def skew(tensor: np.ndarray) -> np.ndarray:
    """Skew-symmetric part of a (batch of) 3x3 tensor(s)."""
    return 0.5 * (tensor - np.swapaxes(tensor, -1, -2))


def dev(tensor: np.ndarray) -> np.ndarray:
    """Deviatoric part of a (batch of) 3x3 tensor(s)."""
    trace = np.trace(tensor, axis1=-2, axis2=-1)
    return tensor - trace[..., None, None] / 3.0 * np.eye(3)


def axial_vector(tensor: np.ndarray) -> np.ndarray:
    """Axial vector w of the skew part of a tensor, such that skew(tensor) @ r = w x r.

    Args:
        tensor (np.ndarray): array of shape (..., 3, 3).

    Returns:
        np.ndarray: array of shape (..., 3).
    """
    w = skew(tensor)
    return np.stack([w[..., 2, 1], w[..., 0, 2], w[..., 1, 0]], axis=-1)


def small_strain(deformation_gradient: np.ndarray) -> np.ndarray:
    """Infinitesimal strain sym(F - I) of a deformation gradient."""
    return sym(np.asarray(deformation_gradient, dtype=float) - np.eye(3))


def strain_to_voigt(tensor: np.ndarray) -> np.ndarray:
    """Converts strain tensors to Voigt vectors with engineering shear components."""
    factors = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
    return np.stack([tensor[..., i, j] for i, j in VOIGT_PAIRS], axis=-1) * factors


def stress_to_voigt(tensor: np.ndarray) -> np.ndarray:
    """Converts stress tensors to Voigt vectors."""
    return np.stack([tensor[..., i, j] for i, j in VOIGT_PAIRS], axis=-1)


def voigt_to_strain(vector: np.ndarray) -> np.ndarray:
    """Converts Voigt strain vectors with engineering shear back to symmetric tensors."""
    vector = np.asarray(vector, dtype=float)
    factors = np.array([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])
    return voigt_to_stress(vector * factors)


def voigt_to_stress(vector: np.ndarray) -> np.ndarray:
    """Converts Voigt stress vectors back to symmetric tensors."""
    vector = np.asarray(vector, dtype=float)
    tensor = np.zeros(vector.shape[:-1] + (3, 3))
    for idx, (i, j) in enumerate(VOIGT_PAIRS):
        tensor[..., i, j] = vector[..., idx]
        tensor[..., j, i] = vector[..., idx]
    return tensor


def unit_strain_probe(component: int, magnitude: float = 1.0) -> np.ndarray:
    """Symmetric strain tensor whose Voigt representation is `magnitude` times the unit vector of `component`.

    Args:
        component (int): Voigt index 0-5.
        magnitude (float): size of the engineering strain component.

    Returns:
        np.ndarray: 3x3 symmetric tensor.
    """
    vector = np.zeros(6)
    vector[component] = magnitude
    return voigt_to_strain(vector)


def equivalent_strain(strain_voigt: np.ndarray) -> np.ndarray:
    """Von Mises equivalent strain sqrt(2/3 e:e) of (a batch of) Voigt strain vectors."""
    e = dev(voigt_to_strain(strain_voigt))
    return np.sqrt(2.0 / 3.0 * np.sum(e * e, axis=(-2, -1)))


def interpolate_deformation_path(control_points: list[np.ndarray],
                                 increments_per_segment: int = 10) -> list[np.ndarray]:
    """Interpolates a deformation program linearly in F. The program starts from the identity, which is not part of
    the returned list.

    Args:
        control_points (list[np.ndarray]): 3x3 deformation gradients visited in order.
        increments_per_segment (int): number of equal increments between consecutive control points.

    Returns:
        list[np.ndarray]: deformation gradients of every increment.
    """
    if increments_per_segment < 1:
        raise ValueError(f"increments_per_segment must be positive, got {increments_per_segment}")

    path = []
    previous = np.eye(3)
    for target in control_points:
        target = np.asarray(target, dtype=float)
        for fraction in np.arange(1, increments_per_segment + 1) / increments_per_segment:
            path.append(previous + fraction * (target - previous))
        previous = target
    return path


def resolve_load_path(path: str | list) -> list[np.ndarray]:
    """Returns the control points of a named load path or validates an explicit list of matrices."""
    if isinstance(path, str):
        if path not in LOAD_PATHS:
            raise ValueError(f"Unknown load path '{path}', expected one of {sorted(LOAD_PATHS)}")
        return [matrix.copy() for matrix in LOAD_PATHS[path]]

    matrices = [np.asarray(matrix, dtype=float) for matrix in path]
    for matrix in matrices:
        if matrix.shape != (3, 3):
            raise ValueError(f"Deformation gradients must be 3x3, got shape {matrix.shape}")
        if np.linalg.det(matrix) <= 0.0:
            raise ValueError(f"Deformation gradient must have positive determinant, got {matrix.tolist()}")
    return matrices

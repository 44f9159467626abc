"""
Module for base model classes that define the public APIs of constitutive models, linear solvers and micro models.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from dcasim.globals import *
from dcasim.mesh import Mesh


class _RequiredAttributesMixin:
    """Enforces the existence of the class attributes listed in `required_class_attributes` on subclasses."""
    required_class_attributes: list[str] = []

    def __init_subclass__(cls, **kwargs):
        """
        Subclass initialization is modified to enforce the existence of the required class attributes. Abstract
        intermediate classes are exempt.
        Args:
            **kwargs:
        """
        super().__init_subclass__(**kwargs)
        if ABC in cls.__bases__:
            return
        for attr in cls.required_class_attributes:
            if not hasattr(cls, attr):
                raise TypeError(f"{cls.__name__} must define class attribute '{attr}'")


class BaseConstitutiveModel(_RequiredAttributesMixin, ABC):
    """Base class for per-element constitutive models of the macroscale problem. A model evaluates trial stresses and
    tangents for given displacement gradients from its committed state, and commits the last trial state on request.

    Attributes:
        n_elements (int): number of elements (integration points) the model holds a state for.
    """
    required_class_attributes = ["MODEL_NAME"]

    def __init__(self, n_elements: int):
        self.n_elements = n_elements

    @abstractmethod
    def update(self, displacement_gradients: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Evaluates trial stresses and consistent tangents without committing.

        Args:
            displacement_gradients (np.ndarray): total displacement gradients of shape (n_elements, 3, 3).

        Returns:
            tuple[np.ndarray, np.ndarray]: Voigt stresses (n_elements, 6) and tangents (n_elements, 6, 6).
        """
        ...

    @abstractmethod
    def commit(self):
        """Accepts the last trial state as the committed state."""
        ...

    @abstractmethod
    def state_dict(self) -> dict:
        """Serializable committed state for checkpoints."""
        ...

    @abstractmethod
    def load_state_dict(self, state: dict):
        ...


class BaseLinearSolver(_RequiredAttributesMixin, ABC):
    """Base class for solvers of the free-free tangent systems K u = f arising in the Newton iterations."""
    required_class_attributes = ["SOLVER_NAME"]

    @abstractmethod
    def solve(self, matrix: sparse.spmatrix, rhs: np.ndarray, x0: np.ndarray) -> tuple[np.ndarray, int]:
        """Solves the system.

        Args:
            matrix (sparse.spmatrix): SPD system matrix.
            rhs (np.ndarray): right-hand side.
            x0 (np.ndarray): initial guess.

        Returns:
            tuple[np.ndarray, int]: the solution and the number of iterations used.
        """
        ...


@dataclass
class MicroResponse:
    """Homogenized response of one RVE to a macroscopic deformation gradient.

    Attributes:
        stress (np.ndarray): homogenized 3x3 stress in MPa.
        tangent (np.ndarray): consistent homogenized 6x6 Voigt tangent in MPa.
        fields (dict[str, np.ndarray]): nodal or cluster fields for postprocessing.
        iterations (int): Newton iterations used.
        hill_mandel_residual (float | None): Hill-Mandel mismatch of the converged micro solution.
    """
    stress: np.ndarray
    tangent: np.ndarray
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    iterations: int = 0
    hill_mandel_residual: float | None = None


class BaseMicroModel(_RequiredAttributesMixin, ABC):
    """Base class for RVE models attached to macroscale integration points. Solves are history dependent: every solve
    starts from the committed state, and `commit` accepts the state of the last solve.
    """
    required_class_attributes = ["MODEL_NAME"]

    @property
    def rve_mesh(self) -> Mesh | None:
        """Mesh the nodal and element response fields live on, None for models without one."""
        return None

    @abstractmethod
    def solve(self, deformation_gradient: np.ndarray, commit: bool = False) -> MicroResponse:
        """Solves the RVE under uniform boundary displacements derived from `deformation_gradient`.

        Args:
            deformation_gradient (np.ndarray): macroscopic 3x3 deformation gradient.
            commit (bool): whether to commit the resulting state.

        Returns:
            MicroResponse: homogenized stress, tangent and fields.
        """
        ...

    @abstractmethod
    def commit(self):
        ...

    @abstractmethod
    def state_dict(self) -> dict:
        ...

    @abstractmethod
    def load_state_dict(self, state: dict):
        ...

from .base_models import BaseConstitutiveModel, BaseLinearSolver, BaseMicroModel, MicroResponse
from .material_models import J2MaterialModel, MultiscaleMaterialModel, macro_point_update
from .linear_solvers import DeflatedCgSolver, DirectSolver, JacobiPcgSolver
from .micro_models import ClusterRomMicroModel, FullFieldMicroModel

__all__ = [
    "BaseConstitutiveModel", "BaseLinearSolver", "BaseMicroModel", "MicroResponse",
    "J2MaterialModel", "MultiscaleMaterialModel", "macro_point_update",
    "DeflatedCgSolver", "DirectSolver", "JacobiPcgSolver",
    "ClusterRomMicroModel", "FullFieldMicroModel"
]

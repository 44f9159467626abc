"""
Module for per-element constitutive models of the macroscale problem.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from dcasim.globals import *
from dcasim.general_functions import stress_to_voigt, sym
from dcasim.material import ElasticConstants, HardeningCurve, MaterialPointState, return_map
from dcasim.models.base_models import BaseConstitutiveModel, BaseMicroModel, MicroResponse

logger = logging.getLogger(__name__)


class J2MaterialModel(BaseConstitutiveModel):
    """
    J2 elastoplastic material evaluated at the single integration point of every element.

    Attributes:
        elastic (ElasticConstants): elastic constants.
        hardening (HardeningCurve): hardening curve and mode.
        _committed (MaterialPointState): committed batch state.
        _committed_strain (np.ndarray): total strain of the committed state, shape (n_elements, 3, 3).
        _trial (MaterialPointState | None): state of the last update.
        _trial_strain (np.ndarray | None): total strain of the last update.
    """
    MODEL_NAME = "j2"

    def __init__(self, n_elements: int, elastic: ElasticConstants, hardening: HardeningCurve):
        super().__init__(n_elements)
        self.elastic = elastic
        self.hardening = hardening
        self._committed = MaterialPointState.virgin(n_elements)
        self._committed_strain = np.zeros((n_elements, 3, 3))
        self._trial = None
        self._trial_strain = None

    @property
    def state(self) -> MaterialPointState:
        return self._committed

    def update(self, displacement_gradients: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        strain = sym(np.asarray(displacement_gradients, dtype=float))
        self._trial, tangents = return_map(self._committed, strain - self._committed_strain, self.elastic,
                                           self.hardening)
        self._trial_strain = strain
        return stress_to_voigt(self._trial.stress), tangents

    def commit(self):
        if self._trial is None:
            return
        self._committed = self._trial
        self._committed_strain = self._trial_strain
        self._trial = None
        self._trial_strain = None

    def snapshot(self) -> tuple[MaterialPointState, np.ndarray]:
        """Committed state references; commits replace these objects rather than mutating them."""
        return self._committed, self._committed_strain

    def restore(self, snapshot: tuple[MaterialPointState, np.ndarray]):
        self._committed, self._committed_strain = snapshot
        self._trial = None
        self._trial_strain = None

    def state_dict(self) -> dict:
        return {"state": self._committed.to_dict(), "strain": self._committed_strain.tolist()}

    def load_state_dict(self, state: dict):
        self._committed = MaterialPointState.from_dict(state["state"])
        self._committed_strain = np.asarray(state["strain"], dtype=float)

    @classmethod
    def from_config(cls, n_elements: int, material: dict) -> "J2MaterialModel":
        elastic = ElasticConstants(young_modulus=material.get("young_modulus", YOUNG_MODULUS),
                                   poisson_ratio=material.get("poisson_ratio", POISSON_RATIO))
        return cls(n_elements=n_elements, elastic=elastic, hardening=HardeningCurve.from_config(material["hardening"]))


class MultiscaleMaterialModel(BaseConstitutiveModel):
    """
    Macroscale material whose stress and tangent at every element come from an RVE micro model. The micro solves of
    one update are independent and run on a thread pool.

    Attributes:
        micro_models (list[BaseMicroModel]): one micro model per macro element.
        threads (int): worker threads for the micro solves.
        _trial (list[MicroResponse] | None): responses of the last update.
        committed_responses (list[MicroResponse] | None): responses of the last committed update.
    """
    MODEL_NAME = "multiscale"

    def __init__(self, micro_models: list[BaseMicroModel], threads: int = 1):
        super().__init__(len(micro_models))
        self.micro_models = micro_models
        self.threads = max(int(threads), 1)
        self._trial = None
        self.committed_responses = None

    @property
    def last_responses(self) -> list[MicroResponse] | None:
        return self._trial

    def update(self, displacement_gradients: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        deformation_gradients = np.eye(3) + np.asarray(displacement_gradients, dtype=float)
        self._trial = macro_point_update(self.micro_models, deformation_gradients, threads=self.threads)
        stresses = np.stack([stress_to_voigt(response.stress) for response in self._trial])
        tangents = np.stack([response.tangent for response in self._trial])
        return stresses, tangents

    def commit(self):
        for micro_model in self.micro_models:
            micro_model.commit()
        self.committed_responses = self._trial
        self._trial = None

    def state_dict(self) -> dict:
        return {"micro": [micro_model.state_dict() for micro_model in self.micro_models]}

    def load_state_dict(self, state: dict):
        for micro_model, micro_state in zip(self.micro_models, state["micro"], strict=True):
            micro_model.load_state_dict(micro_state)


def macro_point_update(micro_models: list[BaseMicroModel], deformation_gradients: np.ndarray,
                       threads: int = 1) -> list[MicroResponse]:
    """Solves the micro model of every macro integration point for its deformation gradient without committing.

    Args:
        micro_models (list[BaseMicroModel]): one micro model per point.
        deformation_gradients (np.ndarray): array of shape (n_points, 3, 3).
        threads (int): worker threads; results do not depend on the thread count.

    Returns:
        list[MicroResponse]: responses in point order.
    """
    if len(micro_models) != deformation_gradients.shape[0]:
        raise ValueError(f"Got {deformation_gradients.shape[0]} deformation gradients for {len(micro_models)} "
                         f"micro models")
    if threads <= 1:
        return [model.solve(F) for model, F in zip(micro_models, deformation_gradients)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(lambda args: args[0].solve(args[1]), zip(micro_models, deformation_gradients)))

"""
Module for J2 (von Mises) small-strain elastoplasticity with piecewise linear isotropic hardening or linear kinematic
hardening. Stress updates use radial return mapping with the algorithmically consistent tangent.

All functions accept a single material point or a batch of points with a leading dimension.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from dcasim.globals import *
from dcasim.exceptions import ConfigError, ConvergenceError
from dcasim.general_functions import dev, stress_to_voigt

logger = logging.getLogger(__name__)

_I_SYM = np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])
_I_DEV = _I_SYM - np.outer(IDENTITY_VOIGT, IDENTITY_VOIGT) / 3.0


@dataclass(frozen=True)
class ElasticConstants:
    """Isotropic elastic constants.

    Attributes:
        young_modulus (float): Young's modulus in MPa.
        poisson_ratio (float): Poisson's ratio.
    """
    young_modulus: float = YOUNG_MODULUS
    poisson_ratio: float = POISSON_RATIO

    def __post_init__(self):
        if self.young_modulus <= 0.0:
            raise ConfigError(f"Young's modulus must be positive, got {self.young_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ConfigError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson_ratio}")

    @property
    def shear_modulus(self) -> float:
        return self.young_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lame_lambda(self) -> float:
        nu = self.poisson_ratio
        return self.young_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def bulk_modulus(self) -> float:
        return self.young_modulus / (3.0 * (1.0 - 2.0 * self.poisson_ratio))


@dataclass(frozen=True)
class HardeningCurve:
    """Piecewise linear hardening curve sigma_Y(eps_bar), extrapolated with the slope of the last segment.

    In kinematic mode the yield surface keeps the initial radius sigma_Y(0) and translates with the back stress,
    d(alpha) = 2/3 H d(eps_p).

    Attributes:
        points (np.ndarray): array of shape (n, 2) of [equivalent plastic strain, yield stress in MPa].
        mode (str): "isotropic" or "kinematic".
        kinematic_modulus (float | None): H in MPa. Defaults to the slope of the first curve segment.
    """
    points: np.ndarray
    mode: str = ISOTROPIC_STR
    kinematic_modulus: float | None = None
    _slopes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if points.shape[1] != 2 or points.shape[0] < 1:
            raise ConfigError(f"Hardening curve must be a list of [eps_p, sigma_y] pairs, got shape {points.shape}")
        if points[0, 0] != 0.0:
            raise ConfigError(f"Hardening curve must start at eps_p = 0, got {points[0, 0]}")
        if np.any(np.diff(points[:, 0]) <= 0.0):
            raise ConfigError("Hardening curve strains must be strictly increasing")
        if np.any(points[:, 1] <= 0.0) or np.any(np.diff(points[:, 1]) < 0.0):
            raise ConfigError("Hardening curve yield stresses must be positive and nondecreasing")
        if self.mode not in (ISOTROPIC_STR, KINEMATIC_STR):
            raise ConfigError(f"Unknown hardening mode '{self.mode}'")

        if points.shape[0] > 1:
            slopes = np.diff(points[:, 1]) / np.diff(points[:, 0])
        else:
            slopes = np.zeros(1)

        kinematic_modulus = self.kinematic_modulus
        if self.mode == KINEMATIC_STR and kinematic_modulus is None:
            kinematic_modulus = float(slopes[0])
        if kinematic_modulus is not None and kinematic_modulus < 0.0:
            raise ConfigError(f"Kinematic modulus must be nonnegative, got {kinematic_modulus}")

        object.__setattr__(self, "points", points)
        object.__setattr__(self, "kinematic_modulus", kinematic_modulus)
        object.__setattr__(self, "_slopes", slopes)

    @property
    def initial_yield_stress(self) -> float:
        return float(self.points[0, 1])

    @property
    def kinematic_slope(self) -> float:
        return float(self.kinematic_modulus) if self.mode == KINEMATIC_STR else 0.0

    def _segment(self, eps_bar: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.points[:, 0], eps_bar, side="right") - 1
        return np.clip(idx, 0, self._slopes.size - 1)

    def yield_stress(self, eps_bar: np.ndarray | float) -> np.ndarray:
        """Yield stress at the given equivalent plastic strain(s)."""
        eps_bar = np.asarray(eps_bar, dtype=float)
        if self.mode == KINEMATIC_STR:
            return np.full_like(eps_bar, self.initial_yield_stress)
        idx = self._segment(eps_bar)
        return self.points[idx, 1] + self._slopes[idx] * (eps_bar - self.points[idx, 0])

    def hardening_slope(self, eps_bar: np.ndarray | float) -> np.ndarray:
        """Isotropic hardening modulus d(sigma_Y)/d(eps_bar), right-continuous at the knots."""
        eps_bar = np.asarray(eps_bar, dtype=float)
        if self.mode == KINEMATIC_STR:
            return np.zeros_like(eps_bar)
        return self._slopes[self._segment(eps_bar)]

    @classmethod
    def from_config(cls, hardening: dict) -> "HardeningCurve":
        try:
            return cls(points=np.asarray(hardening["points"], dtype=float),
                       mode=hardening.get("mode", ISOTROPIC_STR),
                       kinematic_modulus=hardening.get("kinematic_modulus"))
        except KeyError as exc:
            raise ConfigError(f"Hardening config is missing key {exc}") from exc


@dataclass
class MaterialPointState:
    """Internal variables of one material point, or of a batch of points when the arrays carry a leading dimension.

    Attributes:
        plastic_strain (np.ndarray): plastic strain tensor(s), shape (..., 3, 3).
        eq_plastic_strain (np.ndarray): equivalent plastic strain(s), shape (...).
        back_stress (np.ndarray): deviatoric back stress tensor(s) in MPa, shape (..., 3, 3).
        stress (np.ndarray): stress tensor(s) in MPa, shape (..., 3, 3).
    """
    plastic_strain: np.ndarray
    eq_plastic_strain: np.ndarray
    back_stress: np.ndarray
    stress: np.ndarray

    @classmethod
    def virgin(cls, n_points: int | None = None) -> "MaterialPointState":
        """Stress-free state without plastic history. A batch state is returned when n_points is given."""
        lead = () if n_points is None else (n_points,)
        return cls(plastic_strain=np.zeros(lead + (3, 3)), eq_plastic_strain=np.zeros(lead),
                   back_stress=np.zeros(lead + (3, 3)), stress=np.zeros(lead + (3, 3)))

    @property
    def n_points(self) -> int | None:
        return None if self.eq_plastic_strain.ndim == 0 else self.eq_plastic_strain.shape[0]

    def copy(self) -> "MaterialPointState":
        return MaterialPointState(self.plastic_strain.copy(), np.array(self.eq_plastic_strain, copy=True),
                                  self.back_stress.copy(), self.stress.copy())

    def take(self, indices: np.ndarray | int) -> "MaterialPointState":
        """Sub-batch (or single point for an integer index) of a batch state."""
        return MaterialPointState(self.plastic_strain[indices].copy(),
                                  np.array(self.eq_plastic_strain[indices], copy=True),
                                  self.back_stress[indices].copy(), self.stress[indices].copy())

    def to_dict(self) -> dict:
        return {
            "plastic_strain": self.plastic_strain.tolist(),
            "eq_plastic_strain": np.asarray(self.eq_plastic_strain).tolist(),
            "back_stress": self.back_stress.tolist(),
            "stress": self.stress.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MaterialPointState":
        return cls(plastic_strain=np.asarray(data["plastic_strain"], dtype=float),
                   eq_plastic_strain=np.asarray(data["eq_plastic_strain"], dtype=float),
                   back_stress=np.asarray(data["back_stress"], dtype=float),
                   stress=np.asarray(data["stress"], dtype=float))


def von_mises(stress: np.ndarray) -> np.ndarray:
    """Von Mises equivalent stress sqrt(3/2 dev(s):dev(s)) of (a batch of) symmetric tensors."""
    s = dev(np.asarray(stress, dtype=float))
    return np.sqrt(1.5 * np.sum(s * s, axis=(-2, -1)))


def elastic_tensor(ec: ElasticConstants) -> np.ndarray:
    """Isotropic elasticity tensor in Voigt notation, mapping engineering strains to stresses."""
    return (ec.lame_lambda * np.outer(IDENTITY_VOIGT, IDENTITY_VOIGT)
            + 2.0 * ec.shear_modulus * _I_SYM)


def return_map(state: MaterialPointState, strain_increment: np.ndarray, ec: ElasticConstants,
               hc: HardeningCurve) -> tuple[MaterialPointState, np.ndarray]:
    """Radial return mapping from a committed state under a strain increment.

    Args:
        state (MaterialPointState): committed state of one point or a batch of points.
        strain_increment (np.ndarray): symmetric strain increment tensor(s), shape (..., 3, 3).
        ec (ElasticConstants): elastic constants.
        hc (HardeningCurve): hardening curve and mode.

    Returns:
        tuple[MaterialPointState, np.ndarray]: the updated state and the consistent tangent(s) of shape (..., 6, 6).
    """
    single = state.n_points is None
    if single:
        state = MaterialPointState(state.plastic_strain[None], np.atleast_1d(state.eq_plastic_strain),
                                   state.back_stress[None], state.stress[None])
        strain_increment = np.asarray(strain_increment, dtype=float)[None]

    mu = ec.shear_modulus
    lam = ec.lame_lambda
    d_eps = np.asarray(strain_increment, dtype=float)
    trace = np.trace(d_eps, axis1=-2, axis2=-1)

    stress_trial = state.stress + lam * trace[:, None, None] * np.eye(3) + 2.0 * mu * d_eps
    xi = dev(stress_trial) - state.back_stress
    xi_norm = np.sqrt(np.sum(xi * xi, axis=(-2, -1)))
    q_trial = np.sqrt(1.5) * xi_norm

    tol = 1e-10 * hc.initial_yield_stress
    plastic = q_trial - hc.yield_stress(state.eq_plastic_strain) > tol

    new_state = MaterialPointState(state.plastic_strain.copy(), state.eq_plastic_strain.copy(),
                                   state.back_stress.copy(), stress_trial)
    tangent = np.broadcast_to(elastic_tensor(ec), (d_eps.shape[0], 6, 6)).copy()

    if np.any(plastic):
        q_p = q_trial[plastic]
        eps_bar_n = state.eq_plastic_strain[plastic]
        d_gamma = _solve_plastic_multiplier(q_p, eps_bar_n, mu, hc)

        normal = xi[plastic] / xi_norm[plastic][:, None, None]
        d_eps_p = np.sqrt(1.5) * d_gamma[:, None, None] * normal

        new_state.plastic_strain[plastic] += d_eps_p
        new_state.eq_plastic_strain[plastic] += d_gamma
        new_state.back_stress[plastic] += (np.sqrt(2.0 / 3.0) * hc.kinematic_slope
                                           * d_gamma[:, None, None] * normal)
        new_state.stress[plastic] = stress_trial[plastic] - 2.0 * mu * d_eps_p

        h_iso = hc.hardening_slope(eps_bar_n + d_gamma)
        theta = 1.0 - 3.0 * mu * d_gamma / q_p
        theta_bar = 1.0 / (1.0 + (h_iso + hc.kinematic_slope) / (3.0 * mu)) - (1.0 - theta)
        n_voigt = stress_to_voigt(normal)
        tangent[plastic] = (ec.bulk_modulus * np.outer(IDENTITY_VOIGT, IDENTITY_VOIGT)[None]
                            + 2.0 * mu * theta[:, None, None] * _I_DEV[None]
                            - 2.0 * mu * theta_bar[:, None, None] * np.einsum("pi,pj->pij", n_voigt, n_voigt))

    if single:
        return new_state.take(0), tangent[0]
    return new_state, tangent


def _solve_plastic_multiplier(q_trial: np.ndarray, eps_bar_n: np.ndarray, mu: float,
                              hc: HardeningCurve) -> np.ndarray:
    """Solves q_trial - (3 mu + H) dg - sigma_Y(eps_bar_n + dg) = 0 for the equivalent plastic strain increment dg with
    a bracketed Newton iteration.
    """
    denom = 3.0 * mu + hc.kinematic_slope
    tol = 1e-10 * hc.initial_yield_stress
    d_gamma = np.zeros_like(q_trial)
    lower = np.zeros_like(q_trial)
    upper = q_trial / denom

    for _ in range(MAX_RETURN_MAP_ITERS):
        residual = q_trial - denom * d_gamma - hc.yield_stress(eps_bar_n + d_gamma)
        converged = np.abs(residual) <= tol
        if np.all(converged):
            return d_gamma

        lower = np.where(residual > 0.0, d_gamma, lower)
        upper = np.where(residual < 0.0, d_gamma, upper)
        derivative = -denom - hc.hardening_slope(eps_bar_n + d_gamma)
        candidate = d_gamma - residual / derivative
        outside = (candidate <= lower) | (candidate >= upper)
        candidate = np.where(outside, 0.5 * (lower + upper), candidate)
        d_gamma = np.where(converged, d_gamma, candidate)

    raise ConvergenceError("Plastic multiplier iteration did not converge; check the hardening curve",
                           {"max_iterations": MAX_RETURN_MAP_ITERS,
                            "max_residual": float(np.max(np.abs(residual)))})

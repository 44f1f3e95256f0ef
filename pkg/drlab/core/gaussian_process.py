"""Exact GP regression with a fixed isotropic Matern-5/2 kernel."""
import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from drlab.errors import FactorizationFailure, NegativeVariance, NonPositiveHyperparameter, ValidationError

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
JITTER = 1e-6


class KernelParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    signal_variance: float = Field(default=1.0)
    lengthscale: float = Field(default=0.5)

    def check(self) -> None:
        if not (self.signal_variance > 0 and self.lengthscale > 0):
            raise NonPositiveHyperparameter(
                f"kernel needs positive hyperparameters, got signal_variance={self.signal_variance}, "
                f"lengthscale={self.lengthscale}"
            )


def _matern_from_distance(r: np.ndarray, params: KernelParams) -> np.ndarray:
    s = SQRT5 * r / params.lengthscale
    return params.signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52(x, x2, params: KernelParams = KernelParams()) -> float:
    params.check()
    a = np.atleast_1d(np.asarray(x, dtype=np.float64))
    b = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if a.shape != b.shape:
        raise ValidationError(f"kernel inputs differ in shape: {a.shape} vs {b.shape}")
    return float(_matern_from_distance(np.linalg.norm(a - b), params))


def kernel_matrix(A: np.ndarray, B: np.ndarray, params: KernelParams) -> np.ndarray:
    params.check()
    return _matern_from_distance(cdist(np.atleast_2d(A), np.atleast_2d(B)), params)


@dataclass(frozen=True)
class GaussianProcessModel:
    X: np.ndarray
    y: np.ndarray
    y_mean: float
    params: KernelParams
    noise_variance: float
    factor: Tuple[np.ndarray, bool]
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def gp_fit(X, y, params: KernelParams = KernelParams(), noise_variance: float = 1e-4) -> GaussianProcessModel:
    """Factorize K + noise*I; retried once with 1e-6 jitter before giving up."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"gp_fit needs n >= 1 matching rows, got X {X.shape} and y {y.shape}")
    if noise_variance < 0:
        raise NonPositiveHyperparameter("noise variance must be non-negative")
    if noise_variance == 0 and len(np.unique(X, axis=0)) < X.shape[0]:
        raise FactorizationFailure("duplicate inputs with zero noise make the kernel matrix singular")

    K = kernel_matrix(X, X, params)
    y_mean = float(np.mean(y))
    centered = y - y_mean
    jitter = 0.0
    for extra in (0.0, JITTER):
        try:
            factor = cho_factor(K + (noise_variance + extra) * np.eye(len(X)), lower=True)
            jitter = extra
            break
        except LinAlgError:
            logger.debug(f"Cholesky failed with jitter {extra}")
    else:
        raise FactorizationFailure(f"kernel matrix not positive definite even with jitter {JITTER}")
    alpha = cho_solve(factor, centered)
    return GaussianProcessModel(X, y, y_mean, params, noise_variance, factor, alpha, jitter)


def gp_posterior_batch(model: GaussianProcessModel, Xq) -> Tuple[np.ndarray, np.ndarray]:
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    if Xq.shape[1] != model.dim:
        raise ValidationError(f"query dimension {Xq.shape[1]} != model dimension {model.dim}")
    Ks = kernel_matrix(Xq, model.X, model.params)
    mean = model.y_mean + Ks @ model.alpha
    v = cho_solve(model.factor, Ks.T)
    var = model.params.signal_variance - np.sum(Ks * v.T, axis=1)
    var = np.where(var < 0, 0.0, var)
    return mean, var


def gp_posterior(model: GaussianProcessModel, x) -> Tuple[float, float]:
    mean, var = gp_posterior_batch(model, np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(1, -1))
    return float(mean[0]), float(var[0])


def ucb(mean, variance, kappa: float = 5.0):
    v = np.asarray(variance, dtype=np.float64)
    if np.any(v < 0):
        raise NegativeVariance(f"variance must be >= 0, got {variance}")
    out = np.asarray(mean, dtype=np.float64) + kappa * np.sqrt(v)
    return float(out) if out.ndim == 0 else out

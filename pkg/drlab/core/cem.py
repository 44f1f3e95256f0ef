"""Cross-entropy method over box-constrained vectors with truncated-Gaussian sampling."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Tuple

import numpy as np
from scipy.stats import truncnorm

from drlab.core.dr_space import OptimizationHistory, call_objective
from drlab.errors import EliteCountExceedsSamples, ValidationError

logger = logging.getLogger(__name__)

CEMInit = Literal["default_mean_var", "rapp_uniform_init"]
VARIANCE_FLOOR = 1e-4


@dataclass
class CEMState:
    mean: np.ndarray
    variance: np.ndarray
    elite_count: int
    iteration: int = 0
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        self.variance = np.maximum(self.variance, self.variance_floor)

    def sample(self, n: int, lower: np.ndarray, upper: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        draws = np.tile(lower, (n, 1))
        # truncnorm rejects a == b, so zero-width coordinates stay at their bound
        open_ = upper > lower
        if np.any(open_):
            lo, hi = lower[open_], upper[open_]
            mean = np.clip(self.mean[open_], lo, hi)
            std = np.sqrt(self.variance[open_])
            a, b = (lo - mean) / std, (hi - mean) / std
            draws[:, open_] = truncnorm.rvs(a, b, loc=mean, scale=std, size=(n, len(mean)), random_state=rng)
        return np.clip(draws, lower, upper)

    def refit(self, samples: np.ndarray, scores: np.ndarray) -> np.ndarray:
        """Refit to the elite set; a stable sort keeps earlier samples first on ties."""
        order = np.argsort(-scores, kind="stable")[: self.elite_count]
        elites = samples[order]
        self.mean = elites.mean(axis=0)
        self.variance = np.maximum(elites.var(axis=0), self.variance_floor)
        self.iteration += 1
        return elites


def initial_state(
    init: CEMInit,
    lower: np.ndarray,
    upper: np.ndarray,
    elite_count: int,
    rng: np.random.Generator,
    init_mean: Optional[np.ndarray] = None,
    init_samples: int = 4,
) -> CEMState:
    if init == "default_mean_var":
        if init_mean is None:
            raise ValidationError("default_mean_var needs the default vector as init_mean")
        return CEMState(mean=np.asarray(init_mean, dtype=np.float64), variance=np.ones(len(lower)),
                        elite_count=elite_count)
    if init == "rapp_uniform_init":
        draws = rng.uniform(lower, upper, size=(init_samples, len(lower)))
        return CEMState(mean=draws.mean(axis=0), variance=draws.var(axis=0), elite_count=elite_count)
    raise ValidationError(f"unknown CEM init '{init}'")


def cem_optimize(
    objective: Callable[[np.ndarray], float],
    lower,
    upper,
    init: CEMInit = "rapp_uniform_init",
    iterations: int = 4,
    samples_per_iter: int = 4,
    elite_count: int = 2,
    rng: Optional[np.random.Generator] = None,
    init_mean=None,
    workers: int = 1,
) -> Tuple[np.ndarray, OptimizationHistory]:
    """Calls ``objective`` exactly ``iterations * samples_per_iter`` times."""
    if elite_count > samples_per_iter:
        raise EliteCountExceedsSamples(f"elite_count {elite_count} > samples_per_iter {samples_per_iter}")
    if elite_count < 1 or iterations < 1:
        raise ValidationError("CEM needs elite_count >= 1 and iterations >= 1")
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if lower.shape != upper.shape or np.any(lower > upper) or not np.all(np.isfinite([lower, upper])):
        raise ValidationError("CEM box must be finite with lower <= upper")
    rng = rng if rng is not None else np.random.default_rng(0)

    state = initial_state(init, lower, upper, elite_count, rng, init_mean, samples_per_iter)
    history = OptimizationHistory()
    for it in range(iterations):
        samples = state.sample(samples_per_iter, lower, upper, rng)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda v: call_objective(objective, v), samples))
        else:
            results = [call_objective(objective, v) for v in samples]
        for v, (value, error) in zip(samples, results):
            history.add(v, value, error, it, f"cem-{it}")
        scores = np.array([r[0] for r in results])
        elites = state.refit(samples, scores)
        logger.info(
            f"CEM iteration {it}: best {scores.max():.4f}, elite mean objective "
            f"{np.mean(np.sort(scores)[::-1][: len(elites)]):.4f}"
        )
    return history.best().vector, history

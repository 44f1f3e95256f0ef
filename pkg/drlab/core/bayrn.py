"""
Bayesian optimization of DR configs: uniform initial design, then one
GP-UCB pick per iteration.

The GP runs on unit-normalized coordinates with standardized targets.
UCB is mean + kappa * std; ``xi`` is accepted for config compatibility and
has no effect.
"""
import logging
from typing import Callable, Optional, Tuple

import numpy as np

from drlab.core.dr_space import OptimizationHistory
from drlab.core.gaussian_process import KernelParams, gp_fit, gp_posterior_batch, ucb
from drlab.errors import ValidationError

logger = logging.getLogger(__name__)

N_CANDIDATES = 2048


def _standardize(y: np.ndarray) -> np.ndarray:
    std = float(np.std(y))
    return (y - np.mean(y)) / (std if std > 1e-12 else 1.0)


def propose_next(
    X_unit: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    kernel_params: KernelParams,
    noise_variance: float,
    kappa: float,
    n_candidates: int = N_CANDIDATES,
) -> np.ndarray:
    """Argmax of UCB over uniform candidates plus the incumbent, in unit coordinates."""
    dim = X_unit.shape[1]
    candidates = rng.uniform(0.0, 1.0, size=(n_candidates, dim))
    finite = np.isfinite(y)
    if not np.any(finite):
        return candidates[0]
    Xf, yf = X_unit[finite], y[finite]
    incumbent = Xf[int(np.argmax(yf))]
    candidates = np.vstack([candidates, incumbent])
    model = gp_fit(Xf, _standardize(yf), kernel_params, noise_variance)
    mean, var = gp_posterior_batch(model, candidates)
    scores = ucb(mean, var, kappa)
    return candidates[int(np.argmax(scores))]


def bayrn_optimize(
    objective: Callable[[np.ndarray], float],
    lower,
    upper,
    n_init: int = 8,
    n_iter: int = 8,
    rng: Optional[np.random.Generator] = None,
    kernel_params: KernelParams = KernelParams(),
    noise_variance: float = 1e-4,
    kappa: float = 5.0,
    xi: float = 1.0,
    n_candidates: int = N_CANDIDATES,
) -> Tuple[np.ndarray, OptimizationHistory]:
    """Calls ``objective`` exactly ``n_init + n_iter`` times; failed calls count as -inf."""
    if n_init < 1 or n_iter < 0:
        raise ValidationError("BayRn needs n_init >= 1 and n_iter >= 0")
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if lower.shape != upper.shape or np.any(lower > upper) or not np.all(np.isfinite([lower, upper])):
        raise ValidationError("BayRn box must be finite with lower <= upper")
    rng = rng if rng is not None else np.random.default_rng(0)
    span = upper - lower

    history = OptimizationHistory()
    X_unit = rng.uniform(0.0, 1.0, size=(n_init, len(lower)))
    for i, u in enumerate(X_unit):
        history.record(objective, lower + u * span, i, "init")

    for it in range(n_iter):
        y = history.objectives()
        u = propose_next(X_unit, y, rng, kernel_params, noise_variance, kappa, n_candidates)
        value = history.record(objective, lower + u * span, n_init + it, "bo")
        X_unit = np.vstack([X_unit, u])
        logger.info(f"BayRn iteration {it}: objective {value:.4f}, best so far {history.best().objective:.4f}")
    return history.best().vector, history

"""Moment and kernel components of the hybrid statistic.

``v0`` is the weighted residual mean, ``v1`` the off-diagonal kernel
U-statistic, and ``sigma0_sq_hat`` the plug-in variance of ``sqrt(n) v0``
after accounting for the estimated parameter.  ``zheng_statistic`` is the
classical local-smoothing test built from the same ``v1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateVarianceError, RankDeficiencyError
from .model import FitResult, ParametricModel

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class KernelConfig:
    """Product-Gaussian kernel with bandwidth ``h``.

    When ``h`` is None it is set from ``c_h * n ** (-1 / (p + 4))``.
    """

    h: Optional[float] = None
    c_h: float = 1.5

    def __post_init__(self) -> None:
        if self.h is not None and not self.h > 0:
            raise ValueError("bandwidth must be positive")
        if not self.c_h > 0:
            raise ValueError("bandwidth multiplier must be positive")

    def bandwidth(self, n: int, p: int) -> float:
        if self.h is not None:
            return float(self.h)
        return bandwidth_rule(n, p, self.c_h)


@dataclass(frozen=True)
class WeightConfig:
    c: float = 0.1

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError("weight constant must be positive")


def bandwidth_rule(n: int, p: int, c_h: float = 1.5) -> float:
    return c_h * n ** (-1.0 / (p + 4))


def gaussian_kernel(u: np.ndarray) -> np.ndarray:
    """Standard product-Gaussian density; the last axis indexes dimension."""
    u = np.asarray(u, dtype=float)
    p = u.shape[-1]
    return np.exp(-0.5 * np.sum(u * u, axis=-1)) / _SQRT_2PI**p


def weight(x: np.ndarray, cfg: WeightConfig = WeightConfig()) -> float | np.ndarray:
    """``c * exp(-||x||)``; a 2-D input is weighted row by row."""
    x = np.asarray(x, dtype=float)
    out = cfg.c * np.exp(-np.linalg.norm(x, axis=-1))
    return float(out) if out.ndim == 0 else out


def v0(residuals: np.ndarray, weights: np.ndarray) -> float:
    residuals = np.asarray(residuals, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if residuals.shape != weights.shape:
        raise ValueError("residuals and weights must have equal length")
    return float(np.mean(residuals * weights))


def _pair_kernel(x: np.ndarray, h: float) -> np.ndarray:
    """Matrix of ``K((x_j - x_k) / h) / h**p`` over all pairs."""
    z = x / h
    sq = np.sum(z * z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-0.5 * d2) / (_SQRT_2PI * h) ** x.shape[1]


def _pair_kernel_exact(x: np.ndarray, h: float) -> np.ndarray:
    diff = (x[:, None, :] - x[None, :, :]) / h
    return gaussian_kernel(diff) / h ** x.shape[1]


def _kernel_matrix(x: np.ndarray, h: float) -> np.ndarray:
    # the direct difference form is exactly symmetric; the Gram form is
    # faster but only symmetric up to rounding, so use it only for big n*p
    if x.shape[0] * x.shape[0] * x.shape[1] <= 4_000_000:
        return _pair_kernel_exact(x, h)
    kmat = _pair_kernel(x, h)
    return 0.5 * (kmat + kmat.T)


def v1(residuals: np.ndarray, x: np.ndarray, cfg: KernelConfig = KernelConfig(), *, h: Optional[float] = None) -> float:
    """Off-diagonal kernel U-statistic.

    ``1/(n(n-1)) * sum_{j != k} e_j e_k K((x_j - x_k)/h) / h**p``.  The
    upper-triangle terms are summed with ``math.fsum`` and doubled, so the
    result does not depend on the order of the sample.
    """
    residuals = np.asarray(residuals, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, p = x.shape
    if n < 2:
        raise ValueError("v1 needs at least two observations")
    if h is None:
        h = cfg.bandwidth(n, p)
    kmat = _kernel_matrix(x, h)
    iu = np.triu_indices(n, 1)
    terms = residuals[iu[0]] * residuals[iu[1]] * kmat[iu]
    return 2.0 * math.fsum(terms) / (n * (n - 1))


def sigma0_sq_hat(
    fit: FitResult,
    x: np.ndarray,
    model: ParametricModel,
    wcfg: WeightConfig = WeightConfig(),
    *,
    weights: Optional[np.ndarray] = None,
) -> float:
    """Plug-in variance of the weighted residual mean.

    ``mean(e**2) * [mean(w**2) - b' G^{-1} b]`` with ``b = mean(gdot * w)``
    and ``G = mean(gdot gdot')``; ``gdot`` is the model gradient at the
    fitted parameter evaluated on ``x``.  ``weights`` overrides ``w(x)``
    (the test pipeline weights standardised covariates).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    resid = np.asarray(fit.residuals, dtype=float)
    n = resid.size
    w = weight(x, wcfg) if weights is None else np.asarray(weights, dtype=float)
    gdot = model.jacobian(x, fit.theta_hat)
    gram = gdot.T @ gdot / n
    b = gdot.T @ w / n
    try:
        cho = np.linalg.cholesky(gram)
        cond = np.linalg.cond(gram)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        raise RankDeficiencyError(
            "the gradient Gram matrix mean(gdot gdot') is singular; "
            "the nonsingularity condition on E[gdot gdot'] fails for this fit"
        )
    z = np.linalg.solve(cho, b)
    bracket = float(np.mean(w * w) - z @ z)
    return float(np.mean(resid * resid)) * bracket


def zheng_statistic(
    residuals: np.ndarray, x: np.ndarray, cfg: KernelConfig = KernelConfig(), *, h: Optional[float] = None
) -> tuple[float, float]:
    """Standardised kernel test ``n h^{p/2} V1 / sqrt(Sigma)`` and its upper-tail p-value."""
    residuals = np.asarray(residuals, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, p = x.shape
    if n < 2:
        raise ValueError("zheng_statistic needs at least two observations")
    if h is None:
        h = cfg.bandwidth(n, p)
    if not np.any(residuals):
        return 0.0, 0.5
    kmat = _kernel_matrix(x, h)
    iu = np.triu_indices(n, 1)
    e2 = residuals * residuals
    stat_terms = residuals[iu[0]] * residuals[iu[1]] * kmat[iu]
    # kmat carries 1/h^p; K^2/h^p = kmat^2 * h^p
    var_terms = e2[iu[0]] * e2[iu[1]] * kmat[iu] ** 2 * h**p
    vstat = 2.0 * math.fsum(stat_terms) / (n * (n - 1))
    sigma = 2.0 * 2.0 * math.fsum(var_terms) / (n * (n - 1))
    if not sigma > 0:
        raise DegenerateVarianceError("Zheng variance estimate is not positive")
    stat = n * h ** (p / 2.0) * vstat / math.sqrt(sigma)
    return stat, 0.5 * math.erfc(stat / math.sqrt(2.0))

"""Adaptive-to-model hybrid test.

When the estimated indicative dimension is zero the statistic is the
squared weighted residual mean ``n V0**2 / sigma0**2``; otherwise it is the
kernel U-statistic on the same scale, ``n |V1| / sigma0**2``.  Both are
referred to the chi-square(1) upper tail.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dimension import DimensionEstimate, RidgeConfig, default_ridges, estimate_dimension
from .errors import ContractViolation, DegenerateVarianceError, InsufficientSampleError
from .kernel_stats import KernelConfig, WeightConfig, sigma0_sq_hat, v0, v1, weight
from .model import Dataset, FitOptions, FitResult, ParametricModel, fit_least_squares


def chi2_1_upper_tail(t: float) -> float:
    """``P(chi2_1 > t) = erfc(sqrt(t / 2))``."""
    if t < 0 or math.isnan(t):
        raise ContractViolation(f"chi-square statistic must be >= 0, got {t}")
    return math.erfc(math.sqrt(t / 2.0))


def standardize(x: np.ndarray) -> np.ndarray:
    """Centre each column and scale it to unit (population) variance."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - x.mean(axis=0)) / sd


@dataclass(frozen=True)
class HybridConfig:
    weight: WeightConfig = field(default_factory=WeightConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    ridges: Optional[RidgeConfig] = None
    fit: FitOptions = field(default_factory=FitOptions)
    standardize: bool = True
    init: Optional[tuple[float, ...]] = None

    def to_dict(self) -> dict:
        return {
            "c": self.weight.c,
            "c_h": self.kernel.c_h,
            "h": self.kernel.h,
            "ridges": None if self.ridges is None else asdict(self.ridges),
            "standardize": self.standardize,
            "seed": self.fit.seed,
        }


@dataclass(frozen=True)
class TestOutcome:
    q_hat: int
    branch: str
    v0: float
    v1: float
    sigma0_sq: float
    t_n: float
    p_value: float
    h: float
    theta_hat: tuple[float, ...]
    n: int
    p: int
    model: str
    config: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HybridDetails:
    """Everything computed along the way, for diagnostics and the CLI."""

    outcome: TestOutcome
    fit: FitResult
    dimension: DimensionEstimate


def hybrid_statistic(
    q_hat: int, v0_value: float, v1_value: float, sigma0_sq: float, n: int
) -> tuple[str, float]:
    if q_hat == 0:
        return "moment", n * v0_value * v0_value / sigma0_sq
    return "kernel", n * abs(v1_value) / sigma0_sq


def hybrid_test_details(
    data: Dataset, model: ParametricModel, config: HybridConfig = HybridConfig()
) -> HybridDetails:
    n, p = data.n, data.p
    if n < p + 2:
        raise InsufficientSampleError(f"need n >= p + 2, got n={n}, p={p}")
    init = None if config.init is None else np.asarray(config.init, dtype=float)
    fit = fit_least_squares(data, model, init=init, options=config.fit)
    resid = fit.residuals
    z = standardize(data.x) if config.standardize else data.x

    ridges = config.ridges if config.ridges is not None else default_ridges(n)
    dim = estimate_dimension(z, resid, ridges)

    w = weight(z, config.weight)
    sig = sigma0_sq_hat(fit, data.x, model, config.weight, weights=w)
    if sig < 1e-12 * (1.0 + float(np.mean(resid * resid))):
        raise DegenerateVarianceError(
            f"estimated null variance {sig:.3e} is numerically zero"
        )
    h = config.kernel.bandwidth(n, p)
    v0_value = v0(resid, w)
    v1_value = v1(resid, z, h=h)
    branch, t_n = hybrid_statistic(dim.q_hat, v0_value, v1_value, sig, n)
    outcome = TestOutcome(
        q_hat=dim.q_hat,
        branch=branch,
        v0=v0_value,
        v1=v1_value,
        sigma0_sq=sig,
        t_n=t_n,
        p_value=chi2_1_upper_tail(t_n),
        h=h,
        theta_hat=tuple(float(t) for t in fit.theta_hat),
        n=n,
        p=p,
        model=model.name,
        config=config.to_dict(),
    )
    return HybridDetails(outcome=outcome, fit=fit, dimension=dim)


def hybrid_test(
    data: Dataset, model: ParametricModel, config: HybridConfig = HybridConfig()
) -> TestOutcome:
    """Fit ``model`` to ``data`` and run the hybrid specification test.

    Covariates are standardised before the weight, kernel, and target
    matrix are evaluated; the model itself sees raw covariates.
    """
    return hybrid_test_details(data, model, config).outcome

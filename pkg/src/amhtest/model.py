"""Parametric regression families and their least-squares fit.

A :class:`ParametricModel` bundles a mean function ``g(x, theta)`` with an
optional analytic gradient.  Evaluators are vectorised over rows: they take
an ``(n, p)`` covariate matrix and a ``(d,)`` parameter vector and return
an ``(n,)`` mean vector or an ``(n, d)`` Jacobian.  Families without an
analytic gradient fall back to central differences.

:func:`fit_least_squares` minimises ``sum_j (y_j - g(x_j, theta))**2`` with
a Levenberg-Marquardt iteration, optionally from several random starts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivergedError, IllPosedError, InvalidDataError

MeanFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
GradFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_FD_SCALE = np.finfo(float).eps ** (1.0 / 3.0)


@dataclass(frozen=True)
class Dataset:
    """Covariate rows ``x`` (n x p) and responses ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or y.ndim != 1:
            raise InvalidDataError("x must be 2-D and y 1-D")
        if x.shape[0] != y.shape[0]:
            raise InvalidDataError(
                f"x has {x.shape[0]} rows but y has {y.shape[0]} entries"
            )
        if x.shape[0] < 2:
            raise InvalidDataError("need at least 2 observations")
        if x.shape[1] < 1:
            raise InvalidDataError("need at least one covariate")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidDataError("x and y must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class ParametricModel:
    """A regression family ``g(x, theta)`` with ``d`` parameters.

    ``design`` is set for families linear in the parameters; it maps the
    covariates to the feature matrix whose columns multiply ``theta``.
    """

    name: str
    d: int
    mean: MeanFn
    gradient: Optional[GradFn] = None
    default_init: Optional[np.ndarray] = None
    design: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def evaluate(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.asarray(self.mean(np.atleast_2d(x), np.asarray(theta, float)), float)

    def jacobian(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Return ``dg/dtheta`` at every row, shape ``(n, d)``."""
        x = np.atleast_2d(x)
        theta = np.asarray(theta, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(x, theta), dtype=float).reshape(x.shape[0], self.d)
        return finite_difference_jacobian(self, x, theta)


def finite_difference_jacobian(
    model: ParametricModel, x: np.ndarray, theta: np.ndarray
) -> np.ndarray:
    """Central differences with step ``eps**(1/3) * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    jac = np.empty((x.shape[0], theta.size))
    for i in range(theta.size):
        step = _FD_SCALE * max(1.0, abs(theta[i]))
        up = theta.copy()
        down = theta.copy()
        up[i] += step
        down[i] -= step
        jac[:, i] = (model.evaluate(x, up) - model.evaluate(x, down)) / (up[i] - down[i])
    return jac


def gradient_check(
    model: ParametricModel, theta: np.ndarray, probes: Sequence[np.ndarray]
) -> float:
    """Max relative error between the analytic and central-difference gradients.

    For each probe row the error is ``max|analytic - fd| / max(1, max|fd|)``.
    """
    if model.gradient is None:
        raise ValueError(f"model {model.name!r} has no analytic gradient")
    x = np.atleast_2d(np.asarray(probes, dtype=float))
    analytic = model.jacobian(x, theta)
    numeric = finite_difference_jacobian(model, x, np.asarray(theta, dtype=float))
    scale = np.maximum(1.0, np.max(np.abs(numeric), axis=1))
    err = np.max(np.abs(analytic - numeric), axis=1) / scale
    return float(np.max(err))


@dataclass(frozen=True)
class FitOptions:
    """Levenberg-Marquardt controls.

    ``n_starts`` random standard-normal starts are used only when no
    initial value is passed to :func:`fit_least_squares`.
    """

    max_iter: int = 200
    ftol: float = 1e-10
    gtol: float = 1e-8
    damping: float = 1e-3
    damping_factor: float = 10.0
    n_starts: int = 10
    seed: int = 0
    polish: bool = True


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    residuals: np.ndarray
    rss: float
    converged: bool
    iterations: int
    gradient_norm: float
    starts: int = 1

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "rss": self.rss,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "starts": self.starts,
        }


def _eval_residuals(model, x, y, theta):
    r = y - model.evaluate(x, theta)
    return r, float(r @ r)


def _gradient_norm(jac: np.ndarray, r: np.ndarray) -> float:
    return float(np.max(np.abs(jac.T @ r))) / r.size


# overflow in trial steps is expected and handled by the finiteness checks
@np.errstate(over="ignore", invalid="ignore")
def _lm_single(model, x, y, theta0, opts: FitOptions) -> FitResult:
    theta = np.array(theta0, dtype=float)
    r, rss = _eval_residuals(model, x, y, theta)
    if not np.isfinite(rss):
        raise DivergedError(f"model {model.name!r} is not finite at the initial value")
    jac = model.jacobian(x, theta)
    if not np.all(np.isfinite(jac)):
        raise DivergedError(f"gradient of {model.name!r} is not finite at the initial value")
    n, d = jac.shape
    mu = opts.damping
    scale = np.zeros(d)
    iterations = 0
    polishing = False

    while iterations < opts.max_iter:
        gnorm = _gradient_norm(jac, r)
        if gnorm < opts.gtol and not polishing:
            if not opts.polish:
                break
            polishing = True
        # column scaling is the running max of diag(J^T J), as in MINPACK
        colsq = np.einsum("ij,ij->j", jac, jac)
        scale = np.maximum(scale, colsq)
        floor = 1e-12 * max(float(scale.max()), 1e-300)
        diag = np.sqrt(np.maximum(scale, floor))

        accepted = False
        while not accepted and iterations < opts.max_iter:
            iterations += 1
            lam = 0.0 if polishing else mu
            aug = np.vstack([jac, np.diag(np.sqrt(lam) * diag)]) if lam > 0 else jac
            rhs = np.concatenate([r, np.zeros(d)]) if lam > 0 else r
            step = np.linalg.lstsq(aug, rhs, rcond=None)[0]
            trial = theta + step
            r_new, rss_new = _eval_residuals(model, x, y, trial)
            if np.isfinite(rss_new) and rss_new < rss:
                accepted = True
                break
            if polishing:
                break
            mu *= opts.damping_factor
            if mu > 1e16:
                break
        if not accepted:
            break

        rel = (rss - rss_new) / rss if rss > 0 else 0.0
        step_small = np.max(np.abs(step)) <= 1e-15 * (1.0 + np.max(np.abs(theta)))
        theta, r, rss = trial, r_new, rss_new
        jac = model.jacobian(x, theta)
        if not np.all(np.isfinite(jac)):
            raise DivergedError(f"gradient of {model.name!r} became non-finite")
        mu = max(mu / opts.damping_factor, 1e-15)
        if polishing:
            if step_small:
                break
            continue
        if rel < opts.ftol:
            if not opts.polish:
                break
            polishing = True

    gnorm = _gradient_norm(jac, r)
    converged = gnorm <= 1e-6 * (1.0 + rss)
    return FitResult(
        theta_hat=theta,
        residuals=r,
        rss=rss,
        converged=bool(converged),
        iterations=iterations,
        gradient_norm=gnorm,
    )


def fit_least_squares(
    data: Dataset,
    model: ParametricModel,
    init: Optional[np.ndarray] = None,
    options: FitOptions = FitOptions(),
) -> FitResult:
    """Least-squares fit of ``model`` to ``data``.

    With ``init`` given, a single Levenberg-Marquardt run starts there.
    Otherwise the model's ``default_init`` (if any) plus
    ``options.n_starts`` standard-normal starts drawn from ``options.seed``
    are tried and the smallest-rss fit is kept.
    """
    if model.d >= data.n:
        raise IllPosedError(f"{model.d} parameters for {data.n} observations")
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (model.d,):
            raise IllPosedError(f"init has shape {init.shape}, expected ({model.d},)")
        return _lm_single(model, data.x, data.y, init, options)

    starts = []
    if model.default_init is not None:
        starts.append(np.asarray(model.default_init, dtype=float))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([options.seed, 0x5EED])))
    starts.extend(rng.standard_normal((options.n_starts, model.d)))

    best = None
    failures = []
    for start in starts:
        try:
            res = _lm_single(model, data.x, data.y, start, options)
        except DivergedError as exc:
            failures.append(exc)
            continue
        if best is None or res.rss < best.rss:
            best = res
    if best is None:
        raise DivergedError(f"all {len(starts)} starts diverged: {failures[0]}")
    return FitResult(
        theta_hat=best.theta_hat,
        residuals=best.residuals,
        rss=best.rss,
        converged=best.converged,
        iterations=best.iterations,
        gradient_norm=best.gradient_norm,
        starts=len(starts),
    )


# ------------------------------------------------------------------ #
# Built-in families
# ------------------------------------------------------------------ #


def linear_in_parameters(name: str, design: Callable[[np.ndarray], np.ndarray], d: int) -> ParametricModel:
    """Family ``g(x, theta) = design(x) @ theta``."""
    return ParametricModel(
        name=name,
        d=d,
        mean=lambda x, theta: design(x) @ theta,
        gradient=lambda x, theta: design(x),
        default_init=np.zeros(d),
        design=design,
    )


def linear_model(p: int) -> ParametricModel:
    return linear_in_parameters("linear", lambda x: x, p)


def affine_model(p: int) -> ParametricModel:
    return linear_in_parameters(
        "affine", lambda x: np.column_stack([np.ones(x.shape[0]), x]), p + 1
    )


def polynomial_model(p: int, degree: int) -> ParametricModel:
    """Intercept plus powers ``x_i**m`` for ``m = 1..degree`` of every column."""
    if degree < 1:
        raise ValueError("polynomial degree must be >= 1")

    def design(x):
        cols = [np.ones(x.shape[0])]
        for i in range(x.shape[1]):
            for m in range(1, degree + 1):
                cols.append(x[:, i] ** m)
        return np.column_stack(cols)

    return linear_in_parameters(f"polynomial:{degree}", design, 1 + p * degree)


def exp_index_model(p: int) -> ParametricModel:
    """``theta_1 * exp(theta_2' x)``; the Study 1 and Study 3 null family."""

    def mean(x, theta):
        return theta[0] * np.exp(x @ theta[1:])

    def gradient(x, theta):
        e = np.exp(x @ theta[1:])
        return np.column_stack([e, theta[0] * e[:, None] * x])

    init = np.zeros(p + 1)
    init[0] = 1.0
    return ParametricModel("exp-index", p + 1, mean, gradient, default_init=init)


def quad_index_model(p: int) -> ParametricModel:
    """``beta' x + gamma (beta' x)**2``; the Study 2 null family."""

    def mean(x, theta):
        u = x @ theta[:-1]
        return u + theta[-1] * u * u

    def gradient(x, theta):
        u = x @ theta[:-1]
        return np.column_stack([(1.0 + 2.0 * theta[-1] * u)[:, None] * x, u * u])

    init = np.full(p + 1, 1.0 / np.sqrt(p))
    init[-1] = 0.0
    return ParametricModel("quad-index", p + 1, mean, gradient, default_init=init)


def _study4_design(x):
    return np.column_stack(
        [x[:, 0], x[:, 1] ** 2, x[:, 2] ** 3, x[:, 3] * x[:, 4], np.sin(x[:, 5])]
    )


def study4_model(p: int) -> ParametricModel:
    if p < 6:
        raise ValueError("the additive Study 4 family needs p >= 6")
    return linear_in_parameters("additive", _study4_design, 5)


def _quadratic_geo_design(x):
    return np.column_stack(
        [np.ones(x.shape[0]), x[:, :6], x[:, 4] ** 2, x[:, 5] ** 2, x[:, 4] * x[:, 5]]
    )


def quadratic_geo_model(p: int) -> ParametricModel:
    """Intercept, six main effects, and a quadratic in columns 5 and 6."""
    if p != 6:
        raise ValueError("quadratic-geo expects exactly 6 covariates")
    return linear_in_parameters("quadratic-geo", _quadratic_geo_design, 10)


_REGISTRY: dict[str, Callable[[int], ParametricModel]] = {
    "linear": linear_model,
    "affine": affine_model,
    "exp-index": exp_index_model,
    "quad-index": quad_index_model,
    "additive": study4_model,
    "quadratic-geo": quadratic_geo_model,
}


def available_models() -> list[str]:
    return sorted(_REGISTRY) + ["polynomial:k"]


def get_model(name: str, p: int) -> ParametricModel:
    """Look up a built-in family by name for ``p`` covariates."""
    m = re.fullmatch(r"polynomial:(\d+)", name)
    if m:
        return polynomial_model(p, int(m.group(1)))
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown model {name!r}; choose from {', '.join(available_models())}"
        ) from None
    return factory(p)

"""Data-generating processes and the Monte Carlo size/power driver.

Every replication draws from its own Philox stream keyed by
``(seed, study, n, p, covariance, a, rep)``, so a table is reproducible
regardless of how replications are distributed across workers.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import HybridTestError, SimulationFailure
from .hybrid import HybridConfig, hybrid_test_details, standardize
from .kernel_stats import zheng_statistic
from .model import Dataset, get_model

logger = logging.getLogger(__name__)

COVARIANCES = ("identity", "ar_half")

# fitted null family per study; each nests the generating null
NULL_FAMILIES = {1: "exp-index", 2: "quad-index", 3: "exp-index", 4: "additive"}

_STUDY4_C = np.array([1.0, 1.0 / 2.0, 1.0 / 3.0, 1.0, 1.0])
STUDY4_COEF = _STUDY4_C / np.linalg.norm(_STUDY4_C)


@dataclass(frozen=True)
class StudySpec:
    study: int
    n: int = 200
    p: int = 2
    a: float = 0.0
    covariance: str = "identity"
    null_family: Optional[str] = None

    def __post_init__(self) -> None:
        if self.study not in (1, 2, 3, 4):
            raise ValueError(f"unknown study {self.study}")
        if self.covariance not in COVARIANCES:
            raise ValueError(f"covariance must be one of {COVARIANCES}")
        if self.study != 1 and self.covariance != "identity":
            raise ValueError("only Study 1 uses the AR(0.5) covariance")
        if self.study in (1, 2) and self.p % 2:
            raise ValueError("Studies 1 and 2 need an even p")
        if self.study == 3 and self.p != 8:
            raise ValueError("Study 3 is defined for p = 8")
        if self.study == 4 and self.p < 6:
            raise ValueError("Study 4 needs p >= 6")
        if self.n < self.p + 2:
            raise ValueError("n must be at least p + 2")
        if self.null_family is None:
            object.__setattr__(self, "null_family", NULL_FAMILIES[self.study])

    @property
    def key(self) -> tuple:
        return (self.study, self.n, self.p, self.covariance, self.a)


@lru_cache(maxsize=None)
def _cholesky(p: int, covariance: str) -> np.ndarray:
    if covariance == "identity":
        return np.eye(p)
    idx = np.arange(p)
    cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(cov)


def covariance_matrix(p: int, covariance: str) -> np.ndarray:
    chol = _cholesky(p, covariance)
    return chol @ chol.T


def mvn_sample(rng: np.random.Generator, p: int, covariance: str, size: Optional[int] = None) -> np.ndarray:
    """Draw ``N(0, Sigma)`` vectors; ``size`` rows when given, else one p-vector."""
    if covariance not in COVARIANCES:
        raise ValueError(f"covariance must be one of {COVARIANCES}")
    chol = _cholesky(p, covariance)
    z = rng.standard_normal(p if size is None else (size, p))
    return z @ chol.T


def index_vectors(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors over the first and second halves of the coordinates."""
    half = p // 2
    alpha = np.zeros(p)
    beta = np.zeros(p)
    alpha[:half] = 1.0
    beta[half:] = 1.0
    scale = math.sqrt(p / 2.0)
    return alpha / scale, beta / scale


def null_mean(study: int, x: np.ndarray) -> np.ndarray:
    p = x.shape[1]
    if study == 1:
        alpha, _ = index_vectors(p)
        return 0.25 * np.exp(2.0 * x @ alpha)
    if study == 2:
        alpha, _ = index_vectors(p)
        u = x @ alpha
        return u + 0.8 * u * u
    if study == 3:
        return 0.25 * np.exp(2.0 * x[:, 0])
    c = STUDY4_COEF
    return (
        c[0] * x[:, 0]
        + c[1] * x[:, 1] ** 2
        + c[2] * x[:, 2] ** 3
        + c[3] * x[:, 3] * x[:, 4]
        + c[4] * np.sin(x[:, 5])
    )


def departure(study: int, x: np.ndarray) -> np.ndarray:
    p = x.shape[1]
    if study == 1:
        _, beta = index_vectors(p)
        return np.sin(x @ beta)
    if study == 2:
        _, beta = index_vectors(p)
        return np.tanh(x @ beta)
    if study == 3:
        return (
            0.5 * x[:, 1] ** 3
            + np.cos(x[:, 2])
            + x[:, 3]
            - np.abs(x[:, 4])
            + np.tanh(0.6 * math.pi * x[:, 5])
            + x[:, 6] * x[:, 7]
        )
    return 0.2 * x[:, 0] ** 2 + 0.3 * x[:, 1] ** 3


def generate(spec: StudySpec, rng: np.random.Generator) -> Dataset:
    x = mvn_sample(rng, spec.p, spec.covariance, size=spec.n)
    eps = rng.standard_normal(spec.n)
    y = null_mean(spec.study, x) + eps
    if spec.a != 0:
        y = y + spec.a * departure(spec.study, x)
    return Dataset(x, y)


def true_parameters(spec: StudySpec) -> np.ndarray:
    """Null-model parameters of the generating process in the fitted family's layout."""
    p = spec.p
    if spec.study in (1, 3):
        theta = np.zeros(p + 1)
        theta[0] = 0.25
        if spec.study == 1:
            theta[1:] = 2.0 * index_vectors(p)[0]
        else:
            theta[1] = 2.0
        return theta
    if spec.study == 2:
        return np.append(index_vectors(p)[0], 0.8)
    return STUDY4_COEF.copy()


def _a_key(a: float) -> int:
    return int(round(a * 1_000_000))


def replication_seed(seed: int, spec: StudySpec, rep: int) -> np.random.SeedSequence:
    cov = COVARIANCES.index(spec.covariance)
    return np.random.SeedSequence(
        [seed, spec.study, spec.n, spec.p, cov, _a_key(spec.a) & 0xFFFFFFFF, rep]
    )


def replication_rng(seed: int, spec: StudySpec, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(replication_seed(seed, spec, rep)))


@dataclass(frozen=True)
class ReplicationResult:
    rep: int
    ok: bool
    q_hat: int = -1
    t_n: float = math.nan
    p_value: float = math.nan
    zheng_stat: float = math.nan
    zheng_p: float = math.nan
    error: str = ""


def run_replication(
    spec: StudySpec, rep: int, seed: int, config: HybridConfig = HybridConfig(), zheng: bool = True
) -> ReplicationResult:
    rng = replication_rng(seed, spec, rep)
    data = generate(spec, rng)
    fit_seed = int(rng.integers(0, 2**31 - 1))
    cfg = replace(config, fit=replace(config.fit, seed=fit_seed))
    model = get_model(spec.null_family, spec.p)
    try:
        det = hybrid_test_details(data, model, cfg)
    except HybridTestError as exc:
        return ReplicationResult(rep=rep, ok=False, error=f"{exc.kind}: {exc}")
    out = det.outcome
    zs, zp = math.nan, math.nan
    if zheng:
        z = standardize(data.x) if cfg.standardize else data.x
        try:
            zs, zp = zheng_statistic(det.fit.residuals, z, h=out.h)
        except HybridTestError:
            pass
    return ReplicationResult(
        rep=rep, ok=True, q_hat=out.q_hat, t_n=out.t_n, p_value=out.p_value, zheng_stat=zs, zheng_p=zp
    )


def _run_chunk(args) -> list[ReplicationResult]:
    spec, reps, seed, config, zheng = args
    return [run_replication(spec, r, seed, config, zheng) for r in reps]


def run_replications(
    spec: StudySpec,
    replications: int,
    seed: int,
    config: HybridConfig = HybridConfig(),
    *,
    threads: int = 1,
    zheng: bool = True,
) -> list[ReplicationResult]:
    """Run ``replications`` independent generate-and-test cycles, in rep order."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    reps = list(range(replications))
    if threads <= 1:
        return _run_chunk((spec, reps, seed, config, zheng))
    chunks = [reps[i::threads] for i in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(_run_chunk, [(spec, c, seed, config, zheng) for c in chunks])
        results = [r for part in parts for r in part]
    return sorted(results, key=lambda r: r.rep)


@dataclass(frozen=True)
class PowerRow:
    study: int
    n: int
    p: int
    covariance: str
    a: float
    replications: int
    failures: int
    rejections: int
    rejection_rate: float
    zheng_rejections: int
    zheng_rejection_rate: float
    q_hat_histogram: tuple[int, ...]

    @property
    def key(self) -> tuple:
        return (self.study, self.n, self.p, self.a)


@dataclass(frozen=True)
class PowerTable:
    rows: tuple[PowerRow, ...]
    level: float
    seed: int

    def row(self, study: int, n: int, p: int, a: float, covariance: Optional[str] = None) -> PowerRow:
        for r in self.rows:
            if r.key == (study, n, p, a) and (covariance is None or r.covariance == covariance):
                return r
        raise KeyError((study, n, p, a, covariance))


def summarize(
    spec: StudySpec, results: Sequence[ReplicationResult], level: float, max_failure_rate: float = 0.05
) -> PowerRow:
    ok = [r for r in results if r.ok]
    failures = len(results) - len(ok)
    if failures > max_failure_rate * len(results):
        sample = next(r.error for r in results if not r.ok)
        raise SimulationFailure(
            f"{failures}/{len(results)} replications failed for {spec}; first error: {sample}"
        )
    if failures:
        logger.warning("%d of %d replications failed for %s", failures, len(results), spec)
    hist = np.bincount([r.q_hat for r in ok], minlength=spec.p + 1)
    rejections = sum(r.p_value <= level for r in ok)
    zheng_ok = [r for r in ok if not math.isnan(r.zheng_p)]
    zrej = sum(r.zheng_p <= level for r in zheng_ok)
    return PowerRow(
        study=spec.study,
        n=spec.n,
        p=spec.p,
        covariance=spec.covariance,
        a=spec.a,
        replications=len(ok),
        failures=failures,
        rejections=int(rejections),
        rejection_rate=rejections / len(ok) if ok else math.nan,
        zheng_rejections=int(zrej),
        zheng_rejection_rate=zrej / len(zheng_ok) if zheng_ok else math.nan,
        q_hat_histogram=tuple(int(c) for c in hist),
    )


def study_grid(
    study: int,
    a_values: Iterable[float],
    n_values: Iterable[int] = (200,),
    p_values: Iterable[int] = (2,),
    covariance: str = "identity",
) -> list[StudySpec]:
    return [
        StudySpec(study=study, n=n, p=p, a=a, covariance=covariance)
        for p in p_values
        for n in n_values
        for a in a_values
    ]


def run_study(
    grid: Sequence[StudySpec],
    replications: int = 500,
    level: float = 0.05,
    seed: int = 0,
    config: HybridConfig = HybridConfig(),
    *,
    threads: int = 1,
    zheng: bool = True,
) -> PowerTable:
    """Empirical rejection rates and q-hat histograms over a grid of designs."""
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    rows = []
    for spec in grid:
        results = run_replications(spec, replications, seed, config, threads=threads, zheng=zheng)
        rows.append(summarize(spec, results, level))
        logger.info("study %d n=%d p=%d a=%g: rate %.3f", spec.study, spec.n, spec.p, spec.a, rows[-1].rejection_rate)
    return PowerTable(rows=tuple(rows), level=level, seed=seed)


def default_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1

"""Indicative dimension of the residual central subspace.

The target matrix averages ``m(t) m(t)^H`` over ``t`` in the fitted
residuals, where ``m(t) = mean_j x_j exp(i t e_j)`` on centred
covariates.  Its eigenvalues feed a thresholding double ridge ratio rule
that returns 0 when residuals look independent of the covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class RidgeConfig:
    c1n: float
    c2n: float
    tau: float = 0.5

    def __post_init__(self) -> None:
        if not (self.c1n > 0 and self.c2n > 0):
            raise ValueError("ridges must be positive")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")


@dataclass(frozen=True)
class TargetMatrix:
    m: np.ndarray
    eigenvalues: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.m).real)


@dataclass(frozen=True)
class DimensionEstimate:
    """Ratio chain behind a dimension estimate, kept for reporting."""

    q_hat: int
    eigenvalues: np.ndarray
    s: np.ndarray
    s_star: np.ndarray
    r: np.ndarray
    ridges: RidgeConfig

    def to_dict(self) -> dict:
        return {
            "q_hat": self.q_hat,
            "eigenvalues": self.eigenvalues.tolist(),
            "s": self.s.tolist(),
            "s_star": self.s_star.tolist(),
            "r": self.r.tolist(),
            "c1n": self.ridges.c1n,
            "c2n": self.ridges.c2n,
            "tau": self.ridges.tau,
        }


def char_moment(x_centered: np.ndarray, residuals: np.ndarray, t: float) -> np.ndarray:
    """``(1/n) sum_j x_j exp(i t e_j)`` as a complex p-vector."""
    x_centered = np.atleast_2d(np.asarray(x_centered, dtype=float))
    phase = t * np.asarray(residuals, dtype=float)
    return (np.cos(phase) @ x_centered + 1j * (np.sin(phase) @ x_centered)) / x_centered.shape[0]


def _char_moments(xc: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Rows are ``m(e_k)`` for every residual ``e_k``; shape (n, p)."""
    phase = np.outer(residuals, residuals)
    n = xc.shape[0]
    return (np.cos(phase) @ xc + 1j * (np.sin(phase) @ xc)) / n


def target_matrix(x: np.ndarray, residuals: np.ndarray) -> TargetMatrix:
    """Empirical target matrix on column-centred ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    residuals = np.asarray(residuals, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("target_matrix needs at least two observations")
    xc = x - x.mean(axis=0)
    moments = _char_moments(xc, residuals)
    m = moments.T @ moments.conj() / n
    m = 0.5 * (m + m.conj().T)
    return TargetMatrix(m=m, eigenvalues=hermitian_eigenvalues(m))


def hermitian_eigenvalues(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Descending eigenvalues of a Hermitian matrix.

    Uses the real symmetric embedding ``[[Re, -Im], [Im, Re]]``, whose
    spectrum lists each eigenvalue twice.
    """
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    if m.shape[0] != m.shape[1]:
        raise ContractViolation("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if np.max(np.abs(m - m.conj().T), initial=0.0) > tol * scale:
        raise ContractViolation("matrix is not Hermitian within tolerance")
    re, im = m.real, m.imag
    embed = np.block([[re, -im], [im, re]])
    embed = 0.5 * (embed + embed.T)
    vals = np.linalg.eigvalsh(embed)[::-1]
    return vals[::2].copy()


def default_ridges(n: int) -> RidgeConfig:
    """Recommended ridges ``3e-4 sqrt(8) log n / sqrt n`` and ``0.8 sqrt(8) log n / sqrt n``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    base = math.sqrt(8.0) * math.log(n) / math.sqrt(n)
    return RidgeConfig(c1n=3e-4 * base, c2n=0.8 * base, tau=0.5)


def tdrr_chain(eigenvalues: np.ndarray, cfg: RidgeConfig) -> DimensionEstimate:
    lam = np.maximum(np.asarray(eigenvalues, dtype=float), 0.0)
    p = lam.size
    s = np.zeros(p + 2)
    s[:p] = lam / (lam + 1.0)
    sq = s * s
    # s_star[j] for j = 1..p+1 (0-based 0..p); s beyond p is zero
    s_star = (sq[:-1] + cfg.c1n) / (sq[1:] + cfg.c1n) - 1.0
    r = (s_star[1:] + cfg.c2n) / (s_star[:-1] + cfg.c2n)
    below = np.flatnonzero(r <= cfg.tau)
    q_hat = int(below[-1] + 1) if below.size else 0
    return DimensionEstimate(
        q_hat=q_hat,
        eigenvalues=lam,
        s=s[:p],
        s_star=s_star[:p],
        r=r,
        ridges=cfg,
    )


def tdrr_dimension(eigenvalues: np.ndarray, cfg: RidgeConfig) -> int:
    """Largest ``j`` with ratio ``r_j <= tau``, or 0 when every ratio exceeds tau."""
    return tdrr_chain(eigenvalues, cfg).q_hat


def estimate_dimension(x: np.ndarray, residuals: np.ndarray, cfg: RidgeConfig | None = None) -> DimensionEstimate:
    x = np.atleast_2d(x)
    if cfg is None:
        cfg = default_ridges(x.shape[0])
    tm = target_matrix(x, residuals)
    return tdrr_chain(tm.eigenvalues, cfg)

"""Objective metrics: log-spectral distance, Frechet distance, word/character error rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("Gaussian statistics need at least two vectors")
        if not np.allclose(self.cov, self.cov.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance is not symmetric")


@dataclass
class MetricReport:
    lsd: Optional[float] = None
    fad: Optional[float] = None
    wer: Optional[float] = None
    cer: Optional[float] = None


def lsd(ref_mel, hyp_mel) -> float:
    """Mean over frames of the RMS (over bins) log-spectral difference."""
    ref = np.asarray(ref_mel, dtype=np.float64)
    hyp = np.asarray(hyp_mel, dtype=np.float64)
    if ref.shape != hyp.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {hyp.shape}")
    return float(np.mean(np.sqrt(np.mean((ref - hyp) ** 2, axis=-1))))


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and unbiased covariance of a list (or matrix) of feature vectors."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 feature vectors, got {x.shape[0]}")
    mu = x.mean(axis=0)
    d = x - mu
    cov = d.T @ d / (x.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T), x.shape[0])


def sqrtm_psd(m, sym_tol: float = 1e-10, neg_tol: float = 1e-10) -> np.ndarray:
    """Square root of a symmetric PSD matrix by eigendecomposition."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if np.max(np.abs(m - m.T), initial=0.0) > sym_tol:
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.size and w.min() < -neg_tol:
        raise ValueError(f"matrix is indefinite (eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fad(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussian fits."""
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov):
        return 0.0
    root_a = sqrtm_psd(a.cov)
    cross = root_a @ b.cov @ root_a
    cross = sqrtm_psd(0.5 * (cross + cross.T), sym_tol=np.inf, neg_tol=1e-8 * max(1.0, np.abs(cross).max()))
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    if value < 0.0:
        if value < -1e-8:
            raise ArithmeticError(f"Frechet distance came out negative ({value:.3e})")
        value = 0.0
    return value


def fad_from_features(ref_features, hyp_features) -> float:
    return fad(gaussian_stats(ref_features), gaussian_stats(hyp_features))


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def error_rate(ref_tokens: Sequence, hyp_tokens: Sequence) -> float:
    if len(ref_tokens) == 0:
        raise ValueError("reference must be non-empty")
    return edit_distance(ref_tokens, hyp_tokens) / len(ref_tokens)


def wer(ref: str, hyp: str) -> float:
    return error_rate(ref.split(), hyp.split())


def cer(ref: str, hyp: str) -> float:
    return error_rate(list(ref), list(hyp))

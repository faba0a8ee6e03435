"""Sample correlation matrices, rescaled spectra and plug-in summaries."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (ConfigurationError, DegenerateVariableError, InsufficientDataError,
                     InvalidDimensionError, SingularMatrixError)
from .population import SampleBatch


def _sym_sqrt(A: np.ndarray, power: float = 0.5) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    return (V * w ** power) @ V.T


@dataclass(frozen=True, eq=False)
class RescaledSpec:
    """Symmetric positive-definite rescaling matrix M with its inverse and square root."""

    M: np.ndarray
    m_inv: np.ndarray = field(init=False)
    sqrt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise InvalidDimensionError(f"M must be square, got shape {M.shape}")
        if not np.allclose(M, M.T, rtol=0, atol=1e-10 * max(1.0, np.abs(M).max())):
            raise ConfigurationError("M must be symmetric")
        M = 0.5 * (M + M.T)
        w, V = np.linalg.eigh(M)
        if w[0] <= 0:
            raise SingularMatrixError(f"M is not positive definite (smallest eigenvalue {w[0]:.3e})")
        if w[-1] / w[0] > 1e12:
            raise SingularMatrixError(f"M is too ill-conditioned (condition number {w[-1] / w[0]:.3e})")
        m_inv = (V / w) @ V.T
        m_inv = 0.5 * (m_inv + m_inv.T)
        if np.abs(M @ m_inv - np.eye(len(M))).max() > 1e-8:
            raise SingularMatrixError("M inverse is inaccurate")
        for name, val in (("M", M), ("m_inv", m_inv), ("sqrt", (V * np.sqrt(w)) @ V.T)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def identity(cls, p: int) -> "RescaledSpec":
        return cls(np.eye(p))

    @classmethod
    def inverse_of(cls, R: np.ndarray) -> "RescaledSpec":
        """M = R^{-1}, the choice that whitens the null correlation."""
        return cls(np.linalg.inv(R))

    @property
    def p(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray  # descending
    zero_threshold: float = 1e-9

    @property
    def positive(self) -> np.ndarray:
        ev = self.eigenvalues
        if ev.size == 0 or ev[0] <= 0:
            return ev[:0]
        return ev[ev > self.zero_threshold * ev[0]]


def sample_covariance(batch) -> np.ndarray:
    """Unbiased sample covariance (divisor n - 1) of the columns of ``batch``."""
    Y = batch.data if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    if Y.ndim != 2:
        raise InvalidDimensionError("data must be p x n")
    n = Y.shape[1]
    if n < 2:
        raise InsufficientDataError(f"need n >= 2, got {n}")
    Yc = Y - Y.mean(axis=1, keepdims=True)
    S = (Yc @ Yc.T) / (n - 1)
    return 0.5 * (S + S.T)


def sample_correlation(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    d = np.diag(S)
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        raise DegenerateVariableError(int(bad[0]), float(d[bad[0]]))
    s = 1.0 / np.sqrt(d)
    R = S * s[:, None] * s[None, :]
    R = 0.5 * (R + R.T)
    np.clip(R, -1.0, 1.0, out=R)
    np.fill_diagonal(R, 1.0)
    return R


def sample_correlation_of(batch) -> np.ndarray:
    return sample_correlation(sample_covariance(batch))


def rescaled_spectrum(Rhat: np.ndarray, M: RescaledSpec | None = None, zero_threshold: float = 1e-9) -> Spectrum:
    """Eigenvalues of Rhat M via the symmetric similarity M^{1/2} Rhat M^{1/2}."""
    Rhat = np.asarray(Rhat, dtype=float)
    if M is None:
        A = Rhat
    else:
        if M.p != Rhat.shape[0]:
            raise InvalidDimensionError(f"Rhat is {Rhat.shape[0]}-dimensional, M is {M.p}-dimensional")
        A = M.sqrt @ Rhat @ M.sqrt
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))[::-1]
    return Spectrum(eigenvalues=ev, zero_threshold=zero_threshold)


def lss(spec: Spectrum, g: Callable) -> float:
    """Linear spectral statistic sum_i g(lambda_i) over the positive eigenvalues."""
    lam = spec.positive
    return float(np.sum(g(lam)))


def population_summaries(R: np.ndarray, n: float, variant: str = "corrected") -> tuple[float, float, float]:
    """Finite-n plug-ins (a_R, b_R, c_R) for the case R M = I.

    b_R = sum_kl r_kl^3 (R^{-1})_kl / n and c_R = ||R||_F^2 / n.  With
    variant="legacy", a_R = tr(R + R^{-1})/n; the corrected mean kernel
    reduces instead to a_R = 2 tr(R)/n (= 2p/n for a correlation matrix).
    """
    R = np.asarray(R, dtype=float)
    try:
        Rinv = np.linalg.inv(R)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("R is singular") from exc
    if not np.all(np.isfinite(Rinv)) or np.linalg.cond(R) > 1e12:
        raise SingularMatrixError("R is numerically singular")
    if variant == "legacy":
        a = (np.trace(R) + np.trace(Rinv)) / n
    elif variant == "corrected":
        a = 2.0 * np.trace(R) / n
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    b = float(np.sum(R ** 3 * Rinv)) / n
    c = float(np.sum(R ** 2)) / n
    return float(a), b, c

"""Dense linear-algebra and standard-normal helpers used by the surrogate."""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .exceptions import DimensionMismatch, NotPositiveDefinite

# Jitter escalation: each retry multiplies by 10 until this cap is exceeded.
JITTER_CAP = 1e-2
# First retry level when the caller asked for no jitter at all.
JITTER_FLOOR = 1e-10

SQRT_2PI = np.sqrt(2.0 * np.pi)


def cholesky(a: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of ``a + jitter * I``.

    If the factorization fails, the jitter is escalated tenfold and the
    factorization retried, up to ``JITTER_CAP``; a matrix that still fails
    there raises :class:`NotPositiveDefinite`.  ``a`` must be symmetric.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    eye = np.eye(a.shape[0])
    level = float(jitter)
    while True:
        try:
            target = a + level * eye if level > 0.0 else a
            # Inputs are validated at construction time; skipping the
            # finiteness scan matters on the hot refit path.
            return scipy.linalg.cholesky(target, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            level = JITTER_FLOOR if level == 0.0 else 10.0 * level
            if level > JITTER_CAP:
                raise NotPositiveDefinite(
                    f"factorization failed for {a.shape[0]}x{a.shape[0]} matrix "
                    f"even with jitter {JITTER_CAP:g}"
                ) from None


def chol_solve(factor: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L @ L.T) x = b`` given the lower Cholesky factor ``L``."""
    factor = np.asarray(factor, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if factor.ndim != 2 or factor.shape[0] != factor.shape[1]:
        raise DimensionMismatch(f"expected a square factor, got shape {factor.shape}")
    if b.shape[0] != factor.shape[0]:
        raise DimensionMismatch(
            f"right-hand side of length {b.shape[0]} does not match factor of "
            f"order {factor.shape[0]}"
        )
    return scipy.linalg.cho_solve((factor, True), b, check_finite=False)


def std_normal_pdf(z):
    """Standard normal density, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    out = np.exp(-0.5 * z * z) / SQRT_2PI
    return float(out) if out.ndim == 0 else out


def std_normal_cdf(z):
    """Standard normal CDF via the erf-based ``ndtr``, elementwise."""
    out = ndtr(np.asarray(z, dtype=np.float64))
    return float(out) if out.ndim == 0 else out

"""Matern-5/2 ARD Gaussian-process surrogate with marginal-likelihood fitting.

The kernel is

    k(a, b) = theta0^2 * exp(-sqrt(5) r) * (1 + sqrt(5) r + 5/3 r^2),
    r^2 = sum_i (a_i - b_i)^2 / ell_i^2,

with a constant prior mean mu0 and i.i.d. observation noise sigma^2.
Hyperparameters are fitted by maximizing the log marginal likelihood with a
bounded quasi-Newton method in log-space; observed values are standardized
(mean subtracted, divided by the standard deviation) before fitting, and
predictions are mapped back to raw units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import linalg
from .exceptions import DimensionMismatch, NotPositiveDefinite

SQRT5 = np.sqrt(5.0)
LOG_2PI = np.log(2.0 * np.pi)

# Fitting box (the constant mean is unbounded).
THETA0_BOUNDS = (1e-3, 1e3)
LENGTHSCALE_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-8, 1e-1)

DEFAULT_THETA0 = 1.0
DEFAULT_LENGTHSCALE = 0.5
DEFAULT_NOISE = 1e-6

FIT_MAX_ITERS = 100
FIT_GRAD_TOL = 1e-5


@dataclass(frozen=True)
class KernelHyperparams:
    """Kernel and mean hyperparameters; lengthscales are per-dimension."""

    mu0: float
    theta0: float
    lengthscales: np.ndarray
    noise_var: float

    def __post_init__(self):
        object.__setattr__(
            self, "lengthscales", np.atleast_1d(np.asarray(self.lengthscales, dtype=np.float64))
        )

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


def default_hyperparams(dim: int) -> KernelHyperparams:
    return KernelHyperparams(
        mu0=0.0,
        theta0=DEFAULT_THETA0,
        lengthscales=np.full(dim, DEFAULT_LENGTHSCALE),
        noise_var=DEFAULT_NOISE,
    )


def _scaled_sq_dists(xa: np.ndarray, xb: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = xa / lengthscales
    b = xb / lengthscales
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0, out=sq)


def _kernel_pieces(xa, xb, hyper):
    """Return (K, E, r) with E = theta0^2 exp(-sqrt5 r); K the full kernel."""
    r2 = _scaled_sq_dists(xa, xb, hyper.lengthscales)
    r = np.sqrt(r2)
    envelope = hyper.theta0 ** 2 * np.exp(-SQRT5 * r)
    kernel = envelope * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2)
    return kernel, envelope, r


def matern52_matrix(xa: np.ndarray, xb: np.ndarray, hyper: KernelHyperparams) -> np.ndarray:
    """Cross-covariance matrix between two point sets, noise-free."""
    xa = np.atleast_2d(np.asarray(xa, dtype=np.float64))
    xb = np.atleast_2d(np.asarray(xb, dtype=np.float64))
    if xa.shape[1] != xb.shape[1] or xa.shape[1] != hyper.dim:
        raise DimensionMismatch(
            f"inputs of dim {xa.shape[1]} and {xb.shape[1]} with {hyper.dim} lengthscales"
        )
    return _kernel_pieces(xa, xb, hyper)[0]


def matern52(xa: np.ndarray, xb: np.ndarray, hyper: KernelHyperparams) -> float:
    """Kernel value for a single pair of points."""
    xa = np.asarray(xa, dtype=np.float64).reshape(1, -1)
    xb = np.asarray(xb, dtype=np.float64).reshape(1, -1)
    return float(matern52_matrix(xa, xb, hyper)[0, 0])


def log_marginal_likelihood(
    inputs: np.ndarray,
    values_std: np.ndarray,
    hyper: KernelHyperparams,
    jitter: float = 1e-6,
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood of standardized values and its gradient.

    Returns ``(value, grad)`` with the gradient taken with respect to
    ``[log theta0, log ell_1..d, log sigma^2, mu0]``.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(values_std, dtype=np.float64).ravel()
    n, dim = x.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"{n} inputs but {y.shape[0]} values")
    if hyper.dim != dim:
        raise DimensionMismatch(f"{dim}-d inputs with {hyper.dim} lengthscales")

    kernel, envelope, r = _kernel_pieces(x, x, hyper)
    shifted = kernel + hyper.noise_var * np.eye(n)
    factor = linalg.cholesky(shifted, jitter)
    resid = y - hyper.mu0
    alpha = linalg.chol_solve(factor, resid)
    log_det = 2.0 * np.log(np.diag(factor)).sum()
    value = -0.5 * resid @ alpha - 0.5 * log_det - 0.5 * n * LOG_2PI

    # d(value)/d(psi) = 0.5 tr((alpha alpha^T - K^-1) dK/dpsi) for each psi.
    kinv = linalg.chol_solve(factor, np.eye(n))
    m = np.outer(alpha, alpha) - kinv
    g_log_theta0 = float((m * kernel).sum())  # dK/dlog theta0 = 2K
    envelope_term = (5.0 / 3.0) * envelope * (1.0 + SQRT5 * r)
    p = m * envelope_term
    row = p.sum(axis=1)
    px = p @ x
    per_dim = row @ (x * x) - (x * px).sum(axis=0)
    g_log_ls = per_dim / hyper.lengthscales**2
    g_log_noise = 0.5 * hyper.noise_var * float(np.trace(m))
    g_mu0 = float(alpha.sum())
    grad = np.concatenate(([g_log_theta0], g_log_ls, [g_log_noise], [g_mu0]))
    return float(value), grad


def _pack(hyper: KernelHyperparams) -> np.ndarray:
    return np.concatenate(
        (
            [np.log(hyper.theta0)],
            np.log(hyper.lengthscales),
            [np.log(hyper.noise_var)],
            [hyper.mu0],
        )
    )


def _unpack(z: np.ndarray, dim: int) -> KernelHyperparams:
    return KernelHyperparams(
        mu0=float(z[dim + 2]),
        theta0=float(np.exp(z[0])),
        lengthscales=np.exp(z[1 : dim + 1]),
        noise_var=float(np.exp(z[dim + 1])),
    )


def _fit_bounds(dim: int) -> list[tuple[float | None, float | None]]:
    log = np.log
    return (
        [(log(THETA0_BOUNDS[0]), log(THETA0_BOUNDS[1]))]
        + [(log(LENGTHSCALE_BOUNDS[0]), log(LENGTHSCALE_BOUNDS[1]))] * dim
        + [(log(NOISE_BOUNDS[0]), log(NOISE_BOUNDS[1]))]
        + [(None, None)]
    )


def _median_distance(x: np.ndarray) -> float:
    """Median pairwise distance, the classic lengthscale initializer."""
    dists = pdist(x)
    dists = dists[dists > 0]
    return float(np.median(dists)) if dists.size else 1.0


def _random_start(rng: np.random.Generator, dim: int, scale: float) -> np.ndarray:
    log = np.log
    lo, hi = np.log(LENGTHSCALE_BOUNDS)
    return np.concatenate(
        (
            [rng.uniform(log(0.2), log(5.0))],
            np.clip(log(scale) + rng.uniform(log(0.25), log(4.0), dim), lo, hi),
            [rng.uniform(log(1e-7), log(1e-2))],
            [rng.normal(0.0, 0.5)],
        )
    )


def standardize(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Center and scale values; a near-zero spread skips the division."""
    values = np.asarray(values, dtype=np.float64).ravel()
    mean = float(values.mean()) if values.size else 0.0
    std = float(values.std()) if values.size else 1.0
    if std < 1e-12:
        std = 1.0
    return (values - mean) / std, mean, std


def fit_hyperparams(
    inputs: np.ndarray,
    values: np.ndarray,
    restarts: int = 5,
    seed: int | np.random.Generator | None = 0,
    init: KernelHyperparams | None = None,
    jitter: float = 1e-6,
    max_iters: int = FIT_MAX_ITERS,
) -> KernelHyperparams:
    """Fit hyperparameters by multi-start bounded quasi-Newton MLE.

    ``values`` are raw observations; they are standardized internally, so the
    returned hyperparameters live in standardized-value units.  The default
    hyperparameters are always kept as a candidate, so the fitted marginal
    likelihood never falls below theirs.  With fewer than two observations
    the defaults are returned directly.  ``max_iters`` bounds each start's
    quasi-Newton iterations (at most :data:`FIT_MAX_ITERS`).
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n, dim = x.shape
    if n < 2:
        return default_hyperparams(dim)
    max_iters = min(int(max_iters), FIT_MAX_ITERS)
    y_std, _, _ = standardize(values)
    rng = np.random.default_rng(seed)
    bounds = _fit_bounds(dim)

    def objective(z):
        try:
            value, grad = log_marginal_likelihood(x, y_std, _unpack(z, dim), jitter)
        except NotPositiveDefinite:
            return 1e25, np.zeros(dim + 3)
        if not np.isfinite(value):
            return 1e25, np.zeros(dim + 3)
        return -value, -grad

    # Start list: warm init first, then a median-distance-scaled start (in
    # high dimension the plain defaults sit at a near-stationary saddle of
    # the MLL, so a data-scaled lengthscale start is essential), then the
    # defaults, then random starts around the median scale.
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    scale = float(np.clip(_median_distance(x), *LENGTHSCALE_BOUNDS))
    default_z = _pack(default_hyperparams(dim))
    median_z = _pack(
        KernelHyperparams(
            mu0=0.0, theta0=DEFAULT_THETA0, lengthscales=np.full(dim, scale),
            noise_var=DEFAULT_NOISE,
        )
    )
    starts = []
    if init is not None and init.dim == dim:
        starts.append(np.clip(_pack(init), lo, hi))
    starts.append(median_z)
    starts.append(default_z)
    while len(starts) < max(restarts, 1):
        starts.append(_random_start(rng, dim, scale))

    candidates = [(default_z, -objective(default_z)[0])]
    for z0 in starts[: max(restarts, 1)]:
        try:
            res = minimize(
                objective,
                z0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": max_iters, "gtol": FIT_GRAD_TOL},
            )
        except (NotPositiveDefinite, FloatingPointError):
            continue
        if np.isfinite(res.fun):
            candidates.append((res.x, -res.fun))
    best = max(candidates, key=lambda c: c[1])
    return _unpack(best[0], dim)


class MaternGP(RegressorMixin, BaseEstimator):
    """Gaussian-process regressor used as the attack surrogate.

    Parameters
    ----------
    n_restarts : number of quasi-Newton starts for hyperparameter fitting.
    random_state : seed or generator driving the restart sampling.
    jitter : diagonal stabilizer added when factorizing the kernel matrix.
    warm_start : reuse the previous fit's hyperparameters as one start.
    hyperparams : fixed :class:`KernelHyperparams` to use instead of fitting;
        values are then used raw (no standardization).
    fit_max_iters : per-start iteration cap for the hyperparameter fit.
    """

    def __init__(
        self,
        n_restarts: int = 5,
        random_state=0,
        jitter: float = 1e-10,
        warm_start: bool = False,
        hyperparams: KernelHyperparams | None = None,
        fit_max_iters: int = FIT_MAX_ITERS,
    ):
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.jitter = jitter
        self.warm_start = warm_start
        self.hyperparams = hyperparams
        self.fit_max_iters = fit_max_iters

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.hyperparams is not None:
            if self.hyperparams.dim != X.shape[1]:
                raise DimensionMismatch(
                    f"fixed hyperparameters are {self.hyperparams.dim}-d, data is {X.shape[1]}-d"
                )
            hyper = self.hyperparams
            y_std, self.y_mean_, self.y_std_ = y, 0.0, 1.0
        else:
            init = getattr(self, "hyper_", None) if self.warm_start else None
            if init is not None and init.dim != X.shape[1]:
                init = None
            hyper = fit_hyperparams(
                X,
                y,
                restarts=self.n_restarts,
                seed=self._rng(),
                init=init,
                jitter=self.jitter,
                max_iters=self.fit_max_iters,
            )
            y_std, self.y_mean_, self.y_std_ = standardize(y)
        self.hyper_ = hyper
        self.X_ = X
        self.y_raw_ = np.asarray(y, dtype=np.float64)
        self.y_ = y_std
        shifted = matern52_matrix(X, X, hyper) + hyper.noise_var * np.eye(X.shape[0])
        self.L_ = linalg.cholesky(shifted, self.jitter)
        self.alpha_ = linalg.chol_solve(self.L_, y_std - hyper.mu0)
        self.n_features_in_ = X.shape[1]
        return self

    def _rng(self) -> np.random.Generator:
        if isinstance(self.random_state, np.random.Generator):
            return self.random_state
        return np.random.default_rng(self.random_state)

    def best_std(self) -> float:
        """Largest observed value, in standardized units."""
        check_is_fitted(self, "hyper_")
        return float(self.y_.max())

    def posterior_std(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean (standardized units) and variance at query points."""
        check_is_fitted(self, "hyper_")
        X = check_array(X, dtype=np.float64)
        k_star = matern52_matrix(self.X_, X, self.hyper_)
        mean = self.hyper_.mu0 + k_star.T @ self.alpha_
        v = solve_triangular(self.L_, k_star, lower=True, check_finite=False)
        var = self.hyper_.theta0 ** 2 - (v * v).sum(axis=0)
        return mean, np.maximum(var, 1e-12)

    def predict(self, X, return_var: bool = False):
        """Posterior mean in raw units; optionally also the variance."""
        mean_std, var = self.posterior_std(X)
        mean = mean_std * self.y_std_ + self.y_mean_
        if return_var:
            return mean, var
        return mean

    def posterior_with_grad(self, x: np.ndarray):
        """Mean, variance, and their gradients at one point (standardized units)."""
        x = np.asarray(x, dtype=np.float64).ravel()
        means, variances, dmeans, dvars = self.posterior_with_grad_batch(x[None, :])
        return float(means[0]), float(variances[0]), dmeans[0], dvars[0]

    def posterior_with_grad_batch(self, X: np.ndarray):
        """Vectorized :meth:`posterior_with_grad` over a batch of query points.

        Returns ``(means (B,), variances (B,), dmeans (B, d), dvars (B, d))``.
        One batched call costs a single Cholesky solve with ``B`` right-hand
        sides, which keeps multi-start acquisition ascent cheap.
        """
        check_is_fitted(self, "hyper_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"query batch of shape {X.shape}, model is {self.n_features_in_}-d"
            )
        hyper = self.hyper_
        r2 = _scaled_sq_dists(X, self.X_, hyper.lengthscales)
        r = np.sqrt(r2)
        envelope = hyper.theta0 ** 2 * np.exp(-SQRT5 * r)
        k_star = envelope * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2)
        beta = linalg.chol_solve(self.L_, k_star.T)
        means = hyper.mu0 + k_star @ self.alpha_
        variances = np.maximum(
            hyper.theta0 ** 2 - np.einsum("bn,nb->b", k_star, beta), 1e-12
        )
        # dk_i/dx = -(5/3) envelope_i (1 + sqrt5 r_i) (x - X_i) / ell^2, so the
        # sum over training points factors into two matrix products; no
        # (batch, n, d) intermediate is ever built.
        g = (5.0 / 3.0) * envelope * (1.0 + SQRT5 * r)
        inv_sq_ls = 1.0 / hyper.lengthscales**2
        wa = g * self.alpha_[None, :]
        dmeans = -(wa.sum(axis=1)[:, None] * X - wa @ self.X_) * inv_sq_ls
        wb = g * beta.T
        dvars = 2.0 * (wb.sum(axis=1)[:, None] * X - wb @ self.X_) * inv_sq_ls
        return means, variances, dmeans, dvars

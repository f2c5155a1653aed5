"""Expected-improvement acquisition and its bounded multi-start maximizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.optimize import minimize

from . import linalg
from .gp import MaternGP

SIGMA_FLOOR = 1e-9
_LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))
# Beyond this |z| the Mills-ratio form of h(z) loses precision to
# cancellation (and ndtr underflows), so switch to the asymptotic series.
_SERIES_Z = 30.0
# After the vectorized multi-start pass, this many leaders get an individual
# solver run to converge tightly; they start pre-ascended, so a short
# iteration cap suffices.
_N_POLISH = 3
_POLISH_MAX_ITERS = 15
# Ascent pruning tiers: after `iteration` lockstep steps, only the `keep`
# best active blocks continue, except that blocks within _PRUNE_MARGIN
# log-EI units of the incumbent always survive.  Landscapes with many
# near-tied basins (typical in low dimension, where evaluations are cheap)
# keep everything; landscapes with a huge spread (typical for a confident
# high-dimensional surrogate, where evaluations are costly) drop the blocks
# that cannot plausibly change the argmax.
_PRUNE_TIERS = ((8, 8), (16, 3))
_PRUNE_MARGIN = 1.0


@dataclass(frozen=True)
class AcqSettings:
    """Knobs for the acquisition maximizer."""

    n_starts: int = 20
    max_iters: int = 50
    grad_tol: float = 1e-6


def expected_improvement(mean, var, best):
    """Closed-form EI of a Gaussian ``N(mean, var)`` over incumbent ``best``.

    All quantities are in standardized-value units.  Standard deviations
    below ``SIGMA_FLOOR`` collapse to the degenerate value
    ``max(mean - best, 0)``.  Accepts scalars or arrays.
    """
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), 0.0))
    improve = mean - best
    z = improve / np.maximum(sigma, SIGMA_FLOOR)
    ei = improve * linalg.std_normal_cdf(z) + sigma * linalg.std_normal_pdf(z)
    out = np.where(sigma < SIGMA_FLOOR, np.maximum(improve, 0.0), ei)
    return float(out) if out.ndim == 0 else out


def _log_h_parts(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stable pieces of ``h(z) = z * Phi(z) + phi(z)`` for any ``z``.

    Returns ``(log h(z), Phi(z)/h(z), phi(z)/h(z))`` elementwise.  EI factors
    as ``sigma * h(z)`` and its gradient needs the two ratios.  For strongly
    negative ``z`` both ``Phi(z)`` and ``phi(z)`` underflow while their
    combination stays positive, so the direct formulas return ``log(0)`` and
    ``0/0``; this helper keeps all three finite: it rewrites ``h(-t)`` as
    ``phi(t) * w(t)`` with ``w = 1 - t * R(t)`` (``R`` the Mills ratio),
    switching to the asymptotic series ``w = 1/t^2 - 3/t^4 + ...`` once the
    subtraction would lose precision.
    """
    z = np.asarray(z, dtype=np.float64)
    log_h = np.empty_like(z)
    cdf_ratio = np.empty_like(z)
    pdf_ratio = np.empty_like(z)

    hi = z > -1.0
    if np.any(hi):
        zh = z[hi]
        cdf = linalg.std_normal_cdf(zh)
        pdf = linalg.std_normal_pdf(zh)
        h = zh * cdf + pdf
        log_h[hi] = np.log(h)
        cdf_ratio[hi] = cdf / h
        pdf_ratio[hi] = pdf / h

    lo = ~hi
    if np.any(lo):
        t = -z[lo]
        log_pdf = -0.5 * t * t - _LOG_SQRT_2PI
        mills = np.exp(special.log_ndtr(-t) - log_pdf)
        w = 1.0 - t * mills
        far = t > _SERIES_Z
        if np.any(far):
            u = 1.0 / (t[far] * t[far])
            w_far = u * (1.0 - u * (3.0 - u * (15.0 - 105.0 * u)))
            w[far] = w_far
            mills[far] = (1.0 - w_far) / t[far]
        log_h[lo] = log_pdf + np.log(w)
        cdf_ratio[lo] = mills / w
        pdf_ratio[lo] = 1.0 / w
    return log_h, cdf_ratio, pdf_ratio


def _log_h(z: np.ndarray) -> np.ndarray:
    """``log(z * Phi(z) + phi(z))``; see :func:`_log_h_parts`."""
    return _log_h_parts(z)[0]


def log_expected_improvement(mean, var, best):
    """``log(EI)`` with the same arguments as :func:`expected_improvement`.

    Unlike the raw value, the logarithm stays finite (and differentiable)
    when the posterior is confident and far below the incumbent, which is
    exactly the regime where gradient ascent on EI itself stalls on an
    exactly-zero gradient.
    """
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.maximum(
        np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), 0.0)), SIGMA_FLOOR
    )
    z = (mean - best) / sigma
    out = np.log(sigma) + _log_h(z)
    return float(out) if out.ndim == 0 else out


def _logei_batch(gp: MaternGP, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``log(EI)`` values ``(B,)`` and gradients ``(B, d)`` at a query batch.

    The gradient is ``(Phi(z)/h(z) dmean/dx + phi(z)/h(z) dsigma/dx) / sigma``
    where both ratios are computed without underflow: for large negative
    ``z`` they grow like ``|z|`` and ``z**2`` rather than vanishing.
    """
    means, variances, dmeans, dvars = gp.posterior_with_grad_batch(X)
    best = gp.best_std()
    sigmas = np.maximum(np.sqrt(np.maximum(variances, 0.0)), SIGMA_FLOOR)
    z = (means - best) / sigmas
    log_h, cdf_ratio, pdf_ratio = _log_h_parts(z)
    values = np.log(sigmas) + log_h
    dsigmas = dvars / (2.0 * sigmas[:, None])
    grads = (cdf_ratio[:, None] * dmeans + pdf_ratio[:, None] * dsigmas) / sigmas[:, None]
    return values, grads


def logei_with_gradient(gp: MaternGP, x: np.ndarray) -> tuple[float, np.ndarray]:
    """``log(EI)`` and its gradient with respect to one query point."""
    x = np.asarray(x, dtype=np.float64).ravel()
    values, grads = _logei_batch(gp, x[None, :])
    return float(values[0]), grads[0]


def _projected_ascent(
    gp: MaternGP, x0: np.ndarray, max_iters: int, grad_tol: float
) -> tuple[np.ndarray, np.ndarray]:
    """Monotone projected ascent on log-EI, run on all blocks in lockstep.

    Each block takes spectral (Barzilai-Borwein) steps with Armijo
    backtracking and clip-to-box projection, and a step is accepted only if
    that block's own log-EI improves, so no block ever leaves its basin of
    attraction; the per-iteration GP work stays batched across blocks.
    Blocks freeze once their projected gradient drops below ``grad_tol`` or
    their step size collapses.  Returns the final points and their log-EI.
    """
    x = np.array(x0, dtype=np.float64)
    values, grads = _logei_batch(gp, x)
    step = np.minimum(0.25 / (np.abs(grads).max(axis=1) + 1e-12), 1.0)
    active = np.ones(x.shape[0], dtype=bool)
    tiers = dict(_PRUNE_TIERS)
    for iteration in range(max_iters):
        keep = tiers.get(iteration)
        if keep is not None and active.sum() > keep:
            live = np.flatnonzero(active)
            order = live[np.argsort(values[live])[::-1]]
            cut = order[keep:]
            lagging = values[cut] < values.max() - _PRUNE_MARGIN
            active[cut[lagging]] = False
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        pg = np.abs(np.clip(x[rows] + grads[rows], 0.0, 1.0) - x[rows]).max(axis=1)
        done = pg < grad_tol
        active[rows[done]] = False
        rows = rows[~done]
        if rows.size == 0:
            break
        accepted = np.zeros(rows.size, dtype=bool)
        for _ in range(10):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            r = rows[todo]
            z = np.clip(x[r] + step[r, None] * grads[r], 0.0, 1.0)
            move = z - x[r]
            slope = np.einsum("bd,bd->b", grads[r], move)
            new_vals, new_grads = _logei_batch(gp, z)
            ok = new_vals >= values[r] + 1e-4 * slope
            ok &= np.abs(move).max(axis=1) > 0.0
            if np.any(ok):
                rok = r[ok]
                disp = z[ok] - x[rok]
                curve = -np.einsum("bd,bd->b", disp, new_grads[ok] - grads[rok])
                spectral = np.where(
                    curve > 1e-16,
                    np.einsum("bd,bd->b", disp, disp) / np.maximum(curve, 1e-16),
                    step[rok] * 2.0,
                )
                step[rok] = np.clip(spectral, 1e-8, 10.0)
                x[rok] = z[ok]
                values[rok] = new_vals[ok]
                grads[rok] = new_grads[ok]
                accepted[todo[ok]] = True
            step[r[~ok]] *= 0.25
        stalled = rows[~accepted]
        step_dead = step[stalled] < 1e-10
        active[stalled[step_dead]] = False
    return x, values


def ei_with_gradient(gp: MaternGP, x: np.ndarray) -> tuple[float, np.ndarray]:
    """EI and its gradient with respect to the query point.

    The gradient is ``Phi(z) dmean/dx + phi(z) dsigma/dx``; the terms in z
    itself cancel exactly.
    """
    mean, var, dmean, dvar = gp.posterior_with_grad(x)
    best = gp.best_std()
    sigma = max(np.sqrt(max(var, 0.0)), SIGMA_FLOOR)
    z = (mean - best) / sigma
    cdf = linalg.std_normal_cdf(z)
    pdf = linalg.std_normal_pdf(z)
    ei = (mean - best) * cdf + sigma * pdf
    grad = cdf * dmean + pdf * (dvar / (2.0 * sigma))
    return float(ei), grad


def ei_gradient(gp: MaternGP, x: np.ndarray) -> np.ndarray:
    """Gradient of EI at ``x``; see :func:`ei_with_gradient`."""
    return ei_with_gradient(gp, x)[1]


def maximize_acquisition(
    gp: MaternGP,
    settings: AcqSettings = AcqSettings(),
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Maximize EI over the unit box by multi-start gradient ascent.

    Starts are uniform in ``[0, 1]^d``; each is refined by monotone
    projected ascent on ``log(EI)``, which has the same maximizer as EI but
    keeps a usable gradient where EI underflows to an exact zero.  The
    ascents run vectorized in lockstep (see :func:`_projected_ascent`); the
    few best endpoints then get individual bounded L-BFGS-B runs to
    converge tightly.  The returned point attains EI at least as large as
    every start's, so a failed ascent still yields the best start.
    """
    rng = np.random.default_rng(rng)
    dim = gp.n_features_in_
    starts = rng.uniform(0.0, 1.0, size=(settings.n_starts, dim))

    def logei_at(X):
        mean, var = gp.posterior_std(X)
        return log_expected_improvement(mean, var, gp.best_std())

    candidates = [starts]
    values = [logei_at(starts)]

    ends, end_vals = _projected_ascent(
        gp, starts, settings.max_iters, settings.grad_tol
    )
    candidates.append(ends)
    values.append(end_vals)

    def negated_one(x):
        vals, grads = _logei_batch(gp, x[None, :])
        return -vals[0], -grads[0]

    for idx in np.argsort(end_vals)[::-1][:_N_POLISH]:
        res = minimize(
            negated_one,
            ends[idx],
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * dim,
            options={
                "maxiter": min(settings.max_iters, _POLISH_MAX_ITERS),
                "gtol": settings.grad_tol,
            },
        )
        if not np.all(np.isfinite(res.x)):
            continue
        x = np.clip(res.x, 0.0, 1.0)[None, :]
        candidates.append(x)
        values.append(logei_at(x))

    all_x = np.vstack(candidates)
    all_v = np.concatenate([np.atleast_1d(v) for v in values])
    return np.asarray(all_x[int(np.argmax(all_v))], dtype=np.float64)

"""Black-box l-inf attack by Bayesian optimization over a low-dim latent.

A candidate latent lives in ``[-eps, eps]^d'``; it is upsampled to image
resolution, projected onto the l-inf ball, added to the clean image, and the
result clamped to the pixel box before querying the model.  The scalar being
maximized is the margin of the best rival class over the true class in
log-probability space; any strictly positive value is a successful attack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .acquisition import AcqSettings, maximize_acquisition
from .exceptions import InvalidLabel, ShapeMismatch
from .gp import MaternGP
from .upsample import check_latent_shape, upsample

SUCCESS_TOL = 1e-6  # slack for feasibility audits, not for success itself


def margin_objective(log_probs: np.ndarray, label: int) -> float:
    """Best rival log-probability minus the true class's.

    Positive exactly when the model misclassifies.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64).ravel()
    k = log_probs.shape[0]
    if k < 2:
        raise InvalidLabel(f"need at least two classes, got {k}")
    if not 0 <= label < k:
        raise InvalidLabel(f"label {label} outside [0, {k})")
    rivals = np.delete(log_probs, label)
    return float(rivals.max() - log_probs[label])


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Project a perturbation onto the l-inf ball of radius ``epsilon``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return np.clip(np.asarray(delta, dtype=np.float64), -epsilon, epsilon)


def perturbed_image(
    image: np.ndarray,
    latent: np.ndarray,
    latent_shape: tuple[int, int, int],
    epsilon: float,
    upsampling: str = "nearest",
) -> np.ndarray:
    """Upsample, project, add, and clamp: the latent-to-adversarial map."""
    image = np.asarray(image, dtype=np.float64)
    latent = np.asarray(latent, dtype=np.float64).reshape(latent_shape)
    delta = project_linf(upsample(latent, image.shape, upsampling), epsilon)
    return np.clip(image + delta, 0.0, 1.0)


def objective_query(
    model,
    image: np.ndarray,
    label: int,
    latent: np.ndarray,
    latent_shape: tuple[int, int, int],
    epsilon: float,
    upsampling: str = "nearest",
) -> float:
    """Evaluate the attack objective with a single model query."""
    adv = perturbed_image(image, latent, latent_shape, epsilon, upsampling)
    return margin_objective(model.query(adv), label)


@dataclass(frozen=True)
class ObjectiveRecord:
    """One objective evaluation: raw latent, value, and 1-based query index."""

    latent: np.ndarray
    value: float
    query_index: int


@dataclass
class AttackOutcome:
    """Result of one attack run."""

    success: bool
    queries_used: int
    final_latent: np.ndarray
    final_adv_image: np.ndarray
    adv_label: int
    trace: list[ObjectiveRecord] = field(repr=False, default_factory=list)


class _RecordingModel:
    """Remember the argmax label of every response passing through."""

    def __init__(self, model):
        self._model = model
        self.labels: list[int] = []

    def query(self, image):
        log_probs = self._model.query(image)
        self.labels.append(int(np.argmax(log_probs)))
        return log_probs


class BayesOptAttack(BaseEstimator):
    """Query-efficient black-box attack driven by a GP surrogate.

    Parameters
    ----------
    epsilon : l-inf perturbation budget in pixel units, in ``(0, 1)``.
    budget : total number of model queries allowed, including the
        initial design.
    n_init : number of standard-normal latents evaluated before the
        surrogate takes over.
    latent_shape : ``(c', h', w')`` of the search space; ``c'`` must be 1 or
        the image channel count, and spatial dims must not exceed the image's.
    upsampling : ``nearest``, ``bilinear``, or ``bicubic``.
    random_state : seed for the initial design and acquisition starts.
    n_starts, acq_max_iters, acq_grad_tol : acquisition maximizer knobs.
    gp_restarts : quasi-Newton starts per surrogate refit (the previous
        fit always seeds one of them).
    gp_jitter : diagonal stabilizer for the surrogate's kernel factorization.
    gp_fit_iters : iteration cap per refit start; refits happen every query,
        so a moderate cap trades a sliver of per-refit likelihood for a
        large constant-factor speedup over the full attack.

    The caller is responsible for only attacking inputs the model currently
    classifies correctly; see the benchmark harness.
    """

    def __init__(
        self,
        epsilon: float = 0.05,
        budget: int = 200,
        n_init: int = 5,
        latent_shape: tuple[int, int, int] = (1, 14, 14),
        upsampling: str = "nearest",
        random_state: int = 0,
        n_starts: int = 20,
        acq_max_iters: int = 50,
        acq_grad_tol: float = 1e-6,
        gp_restarts: int = 2,
        gp_jitter: float = 1e-6,
        gp_fit_iters: int = 40,
    ):
        self.epsilon = epsilon
        self.budget = budget
        self.n_init = n_init
        self.latent_shape = latent_shape
        self.upsampling = upsampling
        self.random_state = random_state
        self.n_starts = n_starts
        self.acq_max_iters = acq_max_iters
        self.acq_grad_tol = acq_grad_tol
        self.gp_restarts = gp_restarts
        self.gp_jitter = gp_jitter
        self.gp_fit_iters = gp_fit_iters

    def _validate(self, image: np.ndarray, label: int) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.budget < self.n_init:
            raise ValueError(f"budget {self.budget} is below n_init {self.n_init}")
        if image.ndim != 3:
            raise ShapeMismatch(f"expected a (C, H, W) image, got shape {image.shape}")
        check_latent_shape(tuple(self.latent_shape), image.shape)
        if image.min() < -SUCCESS_TOL or image.max() > 1.0 + SUCCESS_TOL:
            raise ValueError("image pixels must lie in [0, 1]")
        if label < 0:
            raise InvalidLabel(f"label must be nonnegative, got {label}")

    def run(self, model, image: np.ndarray, label: int) -> AttackOutcome:
        """Attack one image, spending at most ``budget`` queries."""
        image = np.asarray(image, dtype=np.float64)
        label = int(label)
        self._validate(image, label)
        eps = float(self.epsilon)
        shape = tuple(self.latent_shape)
        dim = int(np.prod(shape))
        rng = np.random.default_rng(self.random_state)
        recorder = _RecordingModel(model)
        trace: list[ObjectiveRecord] = []

        def evaluate(latent: np.ndarray) -> float:
            value = objective_query(
                recorder, image, label, latent, shape, eps, self.upsampling
            )
            trace.append(
                ObjectiveRecord(latent=latent.copy(), value=value, query_index=len(trace) + 1)
            )
            return value

        # Initial design: standard-normal latents, evaluated as drawn (the
        # projection absorbs any excess) but remembered at their box-clamped
        # coordinates so the surrogate sees points inside the search box.
        inputs: list[np.ndarray] = []
        values: list[float] = []
        for row in rng.standard_normal((self.n_init, dim)):
            value = evaluate(row)
            if value > 0.0:
                return self._outcome(True, image, trace, recorder)
            inputs.append((np.clip(row, -eps, eps) + eps) / (2.0 * eps))
            values.append(value)

        gp = MaternGP(
            n_restarts=self.gp_restarts,
            random_state=np.random.default_rng(int(rng.integers(2**63))),
            jitter=self.gp_jitter,
            warm_start=True,
            fit_max_iters=self.gp_fit_iters,
        )
        settings = AcqSettings(
            n_starts=self.n_starts, max_iters=self.acq_max_iters, grad_tol=self.acq_grad_tol
        )
        while len(trace) < self.budget:
            gp.fit(np.asarray(inputs), np.asarray(values))
            candidate = maximize_acquisition(gp, settings, rng)
            latent = candidate * (2.0 * eps) - eps
            value = evaluate(latent)
            if value > 0.0:
                return self._outcome(True, image, trace, recorder)
            inputs.append(candidate)
            values.append(value)
        return self._outcome(False, image, trace, recorder)

    def _outcome(self, success, image, trace, recorder) -> AttackOutcome:
        index = len(trace) - 1 if success else int(np.argmax([r.value for r in trace]))
        final_latent = trace[index].latent
        adv = perturbed_image(
            image, final_latent, tuple(self.latent_shape), float(self.epsilon), self.upsampling
        )
        delta = adv - image
        if np.max(np.abs(delta)) > self.epsilon + SUCCESS_TOL:
            raise AssertionError("internal error: perturbation escaped the l-inf ball")
        if adv.min() < 0.0 or adv.max() > 1.0:
            raise AssertionError("internal error: adversarial image escaped the pixel box")
        return AttackOutcome(
            success=bool(success),
            queries_used=len(trace),
            final_latent=final_latent,
            final_adv_image=adv,
            adv_label=recorder.labels[index],
            trace=trace,
        )

"""Target classifiers: native MLP, portable weights file, and HTTP client.

Every model exposes the same black-box surface: ``query(image)`` takes one
``(C, H, W)`` float image with pixels in ``[0, 1]`` and returns a length-K
vector of log-probabilities.
"""

from __future__ import annotations

import abc
import json
import struct
from dataclasses import dataclass

import numpy as np
import requests

from .exceptions import (
    InvalidLabel,
    NormalizationError,
    ProtocolError,
    ShapeMismatch,
    TransportError,
    WeightsFormatError,
)

WEIGHTS_MAGIC = b"BAMLP\x00\x00\x01"
ACTIVATIONS = ("relu", "identity")
PROB_SUM_TOL = 1e-4


class TargetModel(abc.ABC):
    """A K-class classifier reachable only through image queries."""

    num_classes: int | None = None
    input_shape: tuple[int, int, int] | None = None

    @abc.abstractmethod
    def query(self, image: np.ndarray) -> np.ndarray:
        """Log-probabilities (length K) for one ``(C, H, W)`` image."""


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax along the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class MLPLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"


@dataclass
class MLPWeights:
    """Fully connected network parameters plus input/output metadata."""

    layers: list[MLPLayer]
    input_shape: tuple[int, int, int]
    num_classes: int

    def validate(self) -> None:
        if not self.layers:
            raise ShapeMismatch("network must have at least one layer")
        expected = int(np.prod(self.input_shape))
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ShapeMismatch(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.ndim != 1:
                raise ShapeMismatch(f"layer {i}: weight must be 2-d and bias 1-d")
            out_dim, in_dim = layer.weight.shape
            if in_dim != expected:
                raise ShapeMismatch(f"layer {i}: expected input dim {expected}, got {in_dim}")
            if layer.bias.shape[0] != out_dim:
                raise ShapeMismatch(f"layer {i}: bias length {layer.bias.shape[0]} != {out_dim}")
            expected = out_dim
        if expected != self.num_classes:
            raise ShapeMismatch(
                f"final layer emits {expected} values but num_classes is {self.num_classes}"
            )


def mlp_forward_batch(weights: MLPWeights, x: np.ndarray) -> np.ndarray:
    """Log-probabilities for a batch of flattened inputs, shape ``(n, d)``."""
    h = np.asarray(x, dtype=np.float64)
    for layer in weights.layers:
        h = h @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return log_softmax(h)


def mlp_forward(weights: MLPWeights, image: np.ndarray) -> np.ndarray:
    """Log-probabilities for one image of shape ``weights.input_shape``."""
    image = np.asarray(image, dtype=np.float64)
    if tuple(image.shape) != tuple(weights.input_shape):
        raise ShapeMismatch(
            f"image shape {tuple(image.shape)} != model input {tuple(weights.input_shape)}"
        )
    return mlp_forward_batch(weights, image.reshape(1, -1))[0]


class MLPModel(TargetModel):
    """Native in-process model around a set of MLP weights."""

    def __init__(self, weights: MLPWeights):
        weights.validate()
        self.weights = weights
        self.num_classes = weights.num_classes
        self.input_shape = tuple(weights.input_shape)

    @classmethod
    def from_file(cls, path) -> "MLPModel":
        return cls(load_weights(path))

    def query(self, image: np.ndarray) -> np.ndarray:
        return mlp_forward(self.weights, image)


def save_weights(weights: MLPWeights, path) -> None:
    """Serialize weights: magic, length-prefixed JSON header, raw f32 blobs.

    The header length is a 4-byte little-endian unsigned int; tensors are
    written row-major as little-endian float32, weight then bias per layer.
    """
    weights.validate()
    header = {
        "layers": [
            {"in": int(l.weight.shape[1]), "out": int(l.weight.shape[0]), "activation": l.activation}
            for l in weights.layers
        ],
        "input_shape": [int(s) for s in weights.input_shape],
        "num_classes": int(weights.num_classes),
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for layer in weights.layers:
            fh.write(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise WeightsFormatError(f"file truncated while reading {what}")
    return data


def load_weights(path) -> MLPWeights:
    """Read a weights file written by :func:`save_weights`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(WEIGHTS_MAGIC))
        if magic != WEIGHTS_MAGIC:
            raise WeightsFormatError(f"bad magic {magic!r}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WeightsFormatError(f"unreadable header: {exc}") from exc
        try:
            layer_specs = header["layers"]
            input_shape = tuple(int(s) for s in header["input_shape"])
            num_classes = int(header["num_classes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightsFormatError(f"incomplete header: {exc}") from exc
        layers = []
        for spec in layer_specs:
            try:
                in_dim, out_dim, act = int(spec["in"]), int(spec["out"]), str(spec["activation"])
            except (KeyError, TypeError, ValueError) as exc:
                raise WeightsFormatError(f"bad layer entry {spec!r}") from exc
            w = np.frombuffer(_read_exact(fh, 4 * in_dim * out_dim, "weights"), dtype="<f4")
            b = np.frombuffer(_read_exact(fh, 4 * out_dim, "bias"), dtype="<f4")
            layers.append(
                MLPLayer(
                    weight=w.reshape(out_dim, in_dim).astype(np.float64),
                    bias=b.astype(np.float64),
                    activation=act,
                )
            )
        extra = fh.read(1)
        if extra:
            raise WeightsFormatError("trailing bytes after declared tensors")
    weights = MLPWeights(layers=layers, input_shape=input_shape, num_classes=num_classes)
    weights.validate()
    return weights


def train_mlp(
    dataset,
    arch: tuple[int, ...] = (128,),
    epochs: int = 10,
    lr: float = 0.2,
    batch_size: int = 64,
    seed: int = 0,
    num_classes: int | None = None,
) -> MLPWeights:
    """Train a ReLU MLP with minibatch SGD on softmax cross-entropy.

    ``dataset`` is a sequence of objects with ``image`` and ``label``
    attributes.  The learning rate decays linearly to zero over the run.
    Deterministic for a fixed seed.
    """
    if not dataset:
        raise ValueError("empty training set")
    images = np.stack([np.asarray(item.image, dtype=np.float64).ravel() for item in dataset])
    labels = np.array([int(item.label) for item in dataset])
    n, in_dim = images.shape
    k = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidLabel(f"labels must lie in [0, {k})")
    input_shape = tuple(np.asarray(dataset[0].image).shape)

    rng = np.random.default_rng(seed)
    dims = [in_dim, *arch, k]
    layers = []
    for i in range(len(dims) - 1):
        scale = np.sqrt(2.0 / dims[i])
        layers.append(
            MLPLayer(
                weight=rng.normal(0.0, scale, size=(dims[i + 1], dims[i])),
                bias=np.zeros(dims[i + 1]),
                activation="relu" if i < len(dims) - 2 else "identity",
            )
        )

    for epoch in range(epochs):
        step_lr = lr * (1.0 - epoch / epochs)
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            batch = order[lo : lo + batch_size]
            xb, yb = images[batch], labels[batch]
            # Forward pass, keeping activations for backprop.
            acts = [xb]
            for layer in layers:
                z = acts[-1] @ layer.weight.T + layer.bias
                acts.append(np.maximum(z, 0.0) if layer.activation == "relu" else z)
            probs = np.exp(log_softmax(acts[-1]))
            delta = probs
            delta[np.arange(len(yb)), yb] -= 1.0
            delta /= len(yb)
            for i in range(len(layers) - 1, -1, -1):
                grad_w = delta.T @ acts[i]
                grad_b = delta.sum(axis=0)
                if i > 0:
                    delta = delta @ layers[i].weight
                    if layers[i - 1].activation == "relu":
                        delta = delta * (acts[i] > 0.0)
                layers[i].weight -= step_lr * grad_w
                layers[i].bias -= step_lr * grad_b

    weights = MLPWeights(layers=layers, input_shape=input_shape, num_classes=k)
    weights.validate()
    return weights


def evaluate_accuracy(weights: MLPWeights, dataset) -> float:
    """Fraction of the dataset whose argmax prediction matches the label."""
    if not dataset:
        raise ValueError("empty evaluation set")
    images = np.stack([np.asarray(item.image, dtype=np.float64).ravel() for item in dataset])
    labels = np.array([int(item.label) for item in dataset])
    preds = mlp_forward_batch(weights, images).argmax(axis=1)
    return float((preds == labels).mean())


@dataclass(frozen=True)
class LinearAttackPlan:
    """Best box-constrained l-inf attack on a linear softmax classifier."""

    value: float  # attack objective at the optimal perturbed input
    target_class: int
    delta: np.ndarray  # optimal perturbation, flattened


def linear_attack_oracle(
    weight: np.ndarray, bias: np.ndarray, x: np.ndarray, label: int, epsilon: float
) -> LinearAttackPlan:
    """Closed-form optimum of the attack objective for a linear model.

    For each rival class the margin is maximized coordinatewise over
    ``delta in [-eps, eps]`` intersected with the pixel box ``[0, 1]``; the
    best rival's perturbation is returned together with the full attack
    objective evaluated there.
    """
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).ravel()
    k = weight.shape[0]
    if not 0 <= label < k:
        raise InvalidLabel(f"label {label} outside [0, {k})")
    lo = np.maximum(-epsilon, -x)
    hi = np.minimum(epsilon, 1.0 - x)
    best = None
    for rival in range(k):
        if rival == label:
            continue
        w = weight[rival] - weight[label]
        delta = np.where(w > 0.0, hi, np.where(w < 0.0, lo, 0.0))
        logits = weight @ (x + delta) + bias
        margins = np.delete(logits, label) - logits[label]
        value = float(margins.max())
        if best is None or value > best.value:
            best = LinearAttackPlan(value=value, target_class=rival, delta=delta)
    if best is None:
        raise InvalidLabel("need at least two classes")
    return best


class QueryCounter(TargetModel):
    """Pass-through wrapper that counts every query it forwards."""

    def __init__(self, model: TargetModel):
        self.model = model
        self.count = 0

    @property
    def num_classes(self):
        return self.model.num_classes

    @property
    def input_shape(self):
        return self.model.input_shape

    def query(self, image: np.ndarray) -> np.ndarray:
        out = self.model.query(image)
        self.count += 1
        return out


class RemoteModel(TargetModel):
    """Client for a classifier served over the loopback HTTP protocol.

    A query POSTs ``{"shape": [C, H, W], "image": [flat pixels]}`` to
    ``{endpoint}/query`` and expects ``{"log_probs": [...]}`` back.  The
    number of classes is learned from the first response and enforced
    afterwards.
    """

    def __init__(self, endpoint: str, input_shape: tuple[int, int, int] | None = None,
                 timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self.timeout = timeout
        self.num_classes = None
        self._session = requests.Session()

    def query(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3:
            raise ShapeMismatch(f"expected a (C, H, W) image, got shape {image.shape}")
        if self.input_shape is not None and tuple(image.shape) != self.input_shape:
            raise ShapeMismatch(f"image shape {tuple(image.shape)} != expected {self.input_shape}")
        payload = {"shape": [int(s) for s in image.shape], "image": image.ravel().tolist()}
        try:
            resp = self._session.post(
                self.endpoint + "/query", json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"query to {self.endpoint} failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"endpoint returned status {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc
        if not isinstance(body, dict) or "log_probs" not in body:
            raise ProtocolError("response missing 'log_probs'")
        try:
            log_probs = np.asarray(body["log_probs"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"'log_probs' is not numeric: {exc}") from exc
        if log_probs.ndim != 1 or log_probs.shape[0] < 2:
            raise ProtocolError(f"'log_probs' must be a vector of >= 2 entries, got {log_probs.shape}")
        if not np.all(np.isfinite(log_probs)):
            raise ProtocolError("'log_probs' contains non-finite entries")
        if self.num_classes is None:
            self.num_classes = int(log_probs.shape[0])
        elif log_probs.shape[0] != self.num_classes:
            raise ProtocolError(
                f"class count changed from {self.num_classes} to {log_probs.shape[0]}"
            )
        total = float(np.exp(log_probs).sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise NormalizationError(f"probabilities sum to {total:.6f}, expected 1")
        return log_probs

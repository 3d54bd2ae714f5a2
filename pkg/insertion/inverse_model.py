"""
Learned inverse hand model: desired object rotation rate -> actuator velocities.

A small tanh MLP (2 -> 64 -> 64 -> 3) trained with seeded mini-batch Adam on
standardized inputs and targets. Everything is plain numpy so the analytic
gradients can be checked against finite differences.
"""

import json
import math
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import DatasetError, DivergedTraining, ModelFormatError
from .hand import ACTUATOR_RATE_LIMIT, Hand, TransitionBuffer
from .schemas import TrainingConfig

logger = logging.getLogger(__name__)

MODEL_HEADER = "insertion-mlp v1"
MIN_BUFFER = 1000


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray


@dataclass
class InverseHandModel:
    layers: List[Layer]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    loss_curve: List[float] = field(default_factory=list)
    dataset_hash: str = ""
    validation_loss: Optional[float] = None
    config_hash: str = ""

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1] if self.loss_curve else math.nan

    def forward_normalized(self, x: np.ndarray) -> np.ndarray:
        h = x
        for layer in self.layers[:-1]:
            h = np.tanh(h @ layer.W + layer.b)
        last = self.layers[-1]
        return h @ last.W + last.b

    def predict(self, x_dot_xy) -> np.ndarray:
        """Actuator velocities for one (2,) request or a batch (n, 2), clamped to the rate limit"""
        x = np.asarray(x_dot_xy, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if not np.all(np.isfinite(x)):
            raise ValueError("inverse model inputs must be finite")
        y = self.forward_normalized((x - self.x_mean) / self.x_std) * self.y_std + self.y_mean
        y = np.clip(y, -ACTUATOR_RATE_LIMIT, ACTUATOR_RATE_LIMIT)
        return y[0] if single else y

    def loss(self, buffer: TransitionBuffer) -> float:
        X = (buffer.xdot_xy - self.x_mean) / self.x_std
        Y = (buffer.a_dot - self.y_mean) / self.y_std
        return float(np.mean((self.forward_normalized(X) - Y) ** 2))


def predict(model: InverseHandModel, x_dot_xy) -> np.ndarray:
    return model.predict(x_dot_xy)


def init_layers(sizes: List[int], rng: np.random.Generator) -> List[Layer]:
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = math.sqrt(1.0 / fan_in)
        layers.append(Layer(rng.normal(0.0, scale, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return layers


def loss_and_gradients(layers: List[Layer], X: np.ndarray, Y: np.ndarray) -> Tuple[float, List[Layer]]:
    """Mean squared error and its gradient for every layer (backprop)"""
    activations = [X]
    h = X
    for layer in layers[:-1]:
        h = np.tanh(h @ layer.W + layer.b)
        activations.append(h)
    out = h @ layers[-1].W + layers[-1].b
    err = out - Y
    n = X.shape[0] * Y.shape[1]
    loss = float(np.sum(err ** 2) / n)

    grads: List[Layer] = [None] * len(layers)
    delta = 2.0 * err / n
    for i in range(len(layers) - 1, -1, -1):
        a_prev = activations[i]
        grads[i] = Layer(a_prev.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ layers[i].W.T) * (1.0 - a_prev ** 2)
    return loss, grads


def _standardize(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std


def training_digest(cfg: TrainingConfig, hand: Optional[Hand] = None) -> str:
    """sha256 over the training config and the finger parameters the dataset was drawn with"""
    hand = hand or Hand()
    fingers = [[f.k_p, f.k_d, f.r_a, f.r_p, f.r_d, f.l_p, f.l_d] for f in hand.fingers]
    blob = json.dumps({"training": cfg.model_dump(mode="json"), "fingers": fingers,
                       "palm_radius": hand.palm_radius}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def fit_inverse_model(buffer: TransitionBuffer, cfg: Optional[TrainingConfig] = None,
                      validation: Optional[TransitionBuffer] = None) -> InverseHandModel:
    """Train the regressor (Xdot_x, Xdot_y) -> a_dot with seeded mini-batch Adam"""
    cfg = cfg or TrainingConfig()
    if len(buffer) < MIN_BUFFER:
        raise DatasetError(f"buffer has {len(buffer)} records, need at least {MIN_BUFFER}")

    rng = np.random.default_rng(cfg.seed)
    x_mean, x_std = _standardize(buffer.xdot_xy)
    y_mean, y_std = _standardize(buffer.a_dot)
    X = (buffer.xdot_xy - x_mean) / x_std
    Y = (buffer.a_dot - y_mean) / y_std

    layers = init_layers([2, cfg.hidden, cfg.hidden, 3], rng)
    layers[-1].W *= 0.1
    m = [Layer(np.zeros_like(l.W), np.zeros_like(l.b)) for l in layers]
    v = [Layer(np.zeros_like(l.W), np.zeros_like(l.b)) for l in layers]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    curve: List[float] = []
    n = X.shape[0]

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_gradients(layers, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise DivergedTraining(f"non-finite loss in epoch {epoch}")
            t += 1
            for layer, g, mi, vi in zip(layers, grads, m, v):
                for name in ("W", "b"):
                    gp = getattr(g, name)
                    mp = beta1 * getattr(mi, name) + (1 - beta1) * gp
                    vp = beta2 * getattr(vi, name) + (1 - beta2) * gp ** 2
                    setattr(mi, name, mp)
                    setattr(vi, name, vp)
                    step = cfg.learning_rate * (mp / (1 - beta1 ** t)) / (np.sqrt(vp / (1 - beta2 ** t)) + eps)
                    setattr(layer, name, getattr(layer, name) - step)
        epoch_loss, _ = loss_and_gradients(layers, X, Y)
        if not math.isfinite(epoch_loss):
            raise DivergedTraining(f"non-finite loss after epoch {epoch}")
        curve.append(epoch_loss)
        logger.debug(f"epoch {epoch}: loss {epoch_loss:.6f}")

    model = InverseHandModel(layers, x_mean, x_std, y_mean, y_std, curve, buffer.digest(),
                             config_hash=training_digest(cfg))
    if validation is not None and len(validation):
        model.validation_loss = model.loss(validation)
    logger.info(f"fitted inverse model on {n} records: final loss {model.final_loss:.5f}"
                + (f", validation {model.validation_loss:.5f}" if model.validation_loss is not None else ""))
    return model


# Model files
def _row(values: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(values).ravel())


def save_model(model: InverseHandModel, path: Union[str, Path]) -> None:
    lines = [
        MODEL_HEADER,
        f"dataset {model.dataset_hash or '-'}",
        f"config {model.config_hash or '-'}",
        f"loss_curve {_row(model.loss_curve)}",
        f"x_mean {_row(model.x_mean)}",
        f"x_std {_row(model.x_std)}",
        f"y_mean {_row(model.y_mean)}",
        f"y_std {_row(model.y_std)}",
        f"layers {len(model.layers)}",
    ]
    for layer in model.layers:
        rows, cols = layer.W.shape
        lines.append(f"layer {rows} {cols}")
        lines.append(_row(layer.W))
        lines.append(_row(layer.b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: Union[str, Path]) -> InverseHandModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ModelFormatError(f"{path} is not an '{MODEL_HEADER}' file")
    try:
        it = iter(lines[1:])

        def tagged(tag: str) -> List[str]:
            parts = next(it).split()
            if not parts or parts[0] != tag:
                raise ModelFormatError(f"expected '{tag}' line in {path}")
            return parts[1:]

        dataset = tagged("dataset")
        config = tagged("config")
        curve = [float(x) for x in tagged("loss_curve")]
        vectors = {name: np.array([float(x) for x in tagged(name)])
                   for name in ("x_mean", "x_std", "y_mean", "y_std")}
        n_layers = int(tagged("layers")[0])
        layers = []
        for _ in range(n_layers):
            rows, cols = (int(x) for x in tagged("layer"))
            W = np.array([float(x) for x in next(it).split()]).reshape(rows, cols)
            b = np.array([float(x) for x in next(it).split()]).reshape(cols)
            layers.append(Layer(W, b))
    except (StopIteration, ValueError) as e:
        raise ModelFormatError(f"truncated or malformed model file {path}: {e}") from e

    return InverseHandModel(
        layers=layers, loss_curve=curve,
        dataset_hash="" if dataset == ["-"] else " ".join(dataset),
        config_hash="" if config == ["-"] else " ".join(config),
        **vectors,
    )

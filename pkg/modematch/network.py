# Licensed to the Apache Software Foundation (ASF) under one
# or more contributor license agreements.  See the NOTICE file
# distributed with this work for additional information
# regarding copyright ownership.  The ASF licenses this file
# to you under the Apache License, Version 2.0 (the
# "License"); you may not use this file except in compliance
# with the License.  You may obtain a copy of the License at

#   http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing,
# software distributed under the License is distributed on an
# "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
# KIND, either express or implied.  See the License for the
# specific language governing permissions and limitations
# under the License.

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from modematch.exceptions import ShapeMismatch, ValidationError
from modematch.types import IndexArray, Matrix, Vector
from modematch.utils.seeding import rng_for


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """
    Feed-forward softmax classifier ``d -> h1 -> ... -> C`` with tanh hidden
    layers. ``weights[i]`` has shape ``(layer_sizes[i + 1], layer_sizes[i])``.
    """

    layer_sizes: tuple[int, ...]
    weights: tuple[Matrix, ...]
    biases: tuple[Vector, ...]
    rng_seed: int = 0
    activation: str = "tanh"
    input_scale: float = 1.0

    def __post_init__(self):
        layer_sizes = tuple(int(size) for size in self.layer_sizes)
        validate_layer_sizes(layer_sizes)

        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if len(weights) != len(layer_sizes) - 1 or len(biases) != len(weights):
            raise ShapeMismatch(
                f"{len(layer_sizes)} layer sizes need {len(layer_sizes) - 1} "
                f"weight/bias pairs, got {len(weights)}/{len(biases)}."
            )
        for index, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
            if weights[index].shape != (fan_out, fan_in):
                raise ShapeMismatch(
                    f"Layer {index} weights have shape {weights[index].shape}, "
                    f"expected {(fan_out, fan_in)}."
                )
            if biases[index].shape != (fan_out,):
                raise ShapeMismatch(
                    f"Layer {index} bias has shape {biases[index].shape}, "
                    f"expected {(fan_out,)}."
                )
        if not self.input_scale > 0:
            raise ValidationError(
                f"input_scale must be positive, got {self.input_scale}."
            )
        if self.activation != "tanh":
            raise ValidationError(f"Unsupported activation '{self.activation}'.")

        for array in weights + biases:
            array.setflags(write=False)
        object.__setattr__(self, "layer_sizes", layer_sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassifierModel):
            return NotImplemented
        return (
            self.layer_sizes == other.layer_sizes
            and self.input_scale == other.input_scale
            and all(
                np.array_equal(mine, theirs)
                for mine, theirs in zip(
                    self.weights + self.biases, other.weights + other.biases
                )
            )
        )

    __hash__ = None

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_parameters(self) -> int:
        return parameter_count(self.layer_sizes)

    def flat_parameters(self) -> Vector:
        return flatten_parameters(self.weights, self.biases)

    def with_parameters(self, flat: Vector) -> "ClassifierModel":
        weights, biases = unflatten_parameters(self.layer_sizes, flat)
        return ClassifierModel(
            self.layer_sizes,
            tuple(weights),
            tuple(biases),
            self.rng_seed,
            input_scale=self.input_scale,
        )


def validate_layer_sizes(layer_sizes: Sequence[int]) -> None:
    if len(layer_sizes) < 2:
        raise ValidationError("A classifier needs input and output layers.")
    if any(size < 1 for size in layer_sizes):
        raise ValidationError(f"Layer sizes must be positive, got {list(layer_sizes)}.")


def parameter_count(layer_sizes: Sequence[int]) -> int:
    return sum(
        fan_out * fan_in + fan_out
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:])
    )


def flatten_parameters(weights: Sequence[Matrix], biases: Sequence[Vector]) -> Vector:
    """Layer by layer, weights row-major then bias."""
    return np.concatenate(
        [part for w, b in zip(weights, biases) for part in (w.ravel(), b.ravel())]
    )


def unflatten_parameters(
    layer_sizes: Sequence[int], flat: Vector
) -> tuple[list[Matrix], list[Vector]]:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (parameter_count(layer_sizes),):
        raise ShapeMismatch(
            f"Expected {parameter_count(layer_sizes)} parameters, got {flat.shape}."
        )

    weights, biases = [], []
    cursor = 0
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        weights.append(flat[cursor: cursor + fan_out * fan_in].reshape(fan_out, fan_in))
        cursor += fan_out * fan_in
        biases.append(flat[cursor: cursor + fan_out])
        cursor += fan_out
    return weights, biases


def weight_mask(layer_sizes: Sequence[int]) -> Vector:
    """1 on weight entries, 0 on biases, in flat parameter order."""
    parts = []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        parts.append(np.ones(fan_out * fan_in))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def feature_scale(x: Matrix) -> float:
    """Root-mean-square feature value, 1 for all-zero inputs."""
    scale = float(np.sqrt(np.mean(np.square(x))))
    return scale if scale > 0 else 1.0


def init_model(
    layer_sizes: Sequence[int], seed: int, input_scale: float = 1.0
) -> ClassifierModel:
    """
    Weights drawn from N(0, 1/fan_in), biases zero. ``input_scale`` divides
    every input before the first layer.
    """
    layer_sizes = tuple(int(size) for size in layer_sizes)
    validate_layer_sizes(layer_sizes)
    if input_scale <= 0:
        raise ValidationError(f"input_scale must be positive, got {input_scale}.")

    rng = rng_for(seed, "init")
    weights = [
        rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:])
    ]
    biases = [np.zeros(fan_out) for fan_out in layer_sizes[1:]]
    return ClassifierModel(
        layer_sizes,
        tuple(weights),
        tuple(biases),
        rng_seed=seed,
        input_scale=input_scale,
    )


def _check_inputs(model: ClassifierModel, x: Matrix) -> Matrix:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeMismatch(
            f"Model expects inputs of dimension {model.input_dim}, "
            f"got array of shape {x.shape}."
        )
    return x / model.input_scale


def _activations(
    weights: Sequence[Matrix], biases: Sequence[Vector], x: Matrix
) -> tuple[list[Matrix], Matrix]:
    activations = [x]
    for w, b in zip(weights[:-1], biases[:-1]):
        activations.append(np.tanh(activations[-1] @ w.T + b))
    logits = activations[-1] @ weights[-1].T + biases[-1]
    return activations, logits


def logits_batch(model: ClassifierModel, x: Matrix) -> Matrix:
    _, logits = _activations(model.weights, model.biases, _check_inputs(model, x))
    return logits


def forward_batch(model: ClassifierModel, x: Matrix) -> tuple[Matrix, Matrix]:
    """Class probabilities and penultimate activations for a batch of inputs."""
    activations, logits = _activations(
        model.weights, model.biases, _check_inputs(model, x)
    )
    return softmax(logits, axis=1), activations[-1]


def forward(model: ClassifierModel, x: Vector) -> tuple[Vector, Vector]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch(f"Expected a single feature vector, got shape {x.shape}.")
    probs, embedding = forward_batch(model, x[None, :])
    return probs[0], embedding[0]


def predict_proba(model: ClassifierModel, x: Matrix) -> Matrix:
    return forward_batch(model, x)[0]


def log_proba(model: ClassifierModel, x: Matrix) -> Matrix:
    return log_softmax(logits_batch(model, x), axis=1)


def cross_entropy(model: ClassifierModel, x: Matrix, labels: IndexArray) -> float:
    """Batch-mean cross-entropy."""
    log_probs = log_proba(model, x)
    return float(-np.mean(log_probs[np.arange(len(labels)), labels]))


def ce_loss_and_grad(
    layer_sizes: Sequence[int], flat: Vector, x: Matrix, labels: IndexArray
) -> tuple[float, Vector]:
    """
    Batch-mean cross-entropy and its gradient in flat parameter order.
    ``x`` is expected already divided by the model's input scale.
    """
    weights, biases = unflatten_parameters(layer_sizes, flat)
    activations, logits = _activations(weights, biases, x)

    n = len(labels)
    log_probs = log_softmax(logits, axis=1)
    loss = float(-np.mean(log_probs[np.arange(n), labels]))

    delta = np.exp(log_probs)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    weight_grads: list[Matrix] = [None] * len(weights)
    bias_grads: list[Vector] = [None] * len(biases)
    for index in range(len(weights) - 1, -1, -1):
        weight_grads[index] = delta.T @ activations[index]
        bias_grads[index] = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ weights[index]) * (1.0 - activations[index] ** 2)

    return loss, flatten_parameters(weight_grads, bias_grads)

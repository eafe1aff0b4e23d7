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

import logging
from functools import wraps
from typing import Sequence

import numpy as np
from sklearn.metrics import silhouette_score

from modematch.dataclasses import TrainConfig, TrainTrace
from modematch.dataset import LabeledDataset
from modematch.exceptions import DegenerateClusters, ShapeMismatch, ValidationError
from modematch.manager import ExperimentManager
from modematch.module import Module
from modematch.network import (
    ClassifierModel,
    ce_loss_and_grad,
    forward_batch,
    init_model,
    weight_mask,
)
from modematch.regularizer import (
    directional_loss_and_grad,
    reshape_params,
    significant_eigvecs,
)
from modematch.types import FilePath, IndexArray, Matrix, Vector
from modematch.utils.seeding import rng_for
from modematch.utils.text_format import read_model, serialize_model

logger = logging.getLogger(__name__)


def check_compatible(model: ClassifierModel, data: LabeledDataset) -> None:
    if data.feature_dim != model.input_dim:
        raise ShapeMismatch(
            f"Dataset has feature dimension {data.feature_dim}, "
            f"model expects {model.input_dim}."
        )
    if data.num_classes != model.num_classes:
        raise ShapeMismatch(
            f"Dataset has {data.num_classes} classes, "
            f"model outputs {model.num_classes}."
        )


def _clip(vector: Vector, max_norm: float | None) -> Vector:
    if max_norm is None:
        return vector
    norm = np.linalg.norm(vector)
    return vector * (max_norm / norm) if norm > max_norm else vector


def train(
    model: ClassifierModel,
    data: LabeledDataset,
    cfg: TrainConfig,
    dr_ref: ClassifierModel | None = None,
) -> tuple[ClassifierModel, TrainTrace]:
    """
    Mini-batch SGD on batch-mean cross-entropy plus L2 on weights, and
    cfg.dr_weight times the directional loss toward dr_ref when
    positive. Batch order is drawn from cfg.seed.

    The trace records, per epoch, the mean over steps of CE + λ·DR at the
    pre-step parameters and, with DR on, the DR loss, top-k spectrum and
    eigengap at the parameters entering the epoch.
    """
    check_compatible(model, data)

    e_phi_hat = None
    if cfg.uses_dr:
        if dr_ref is None:
            raise ValidationError("dr_weight > 0 requires a reference model.")
        if dr_ref.layer_sizes != model.layer_sizes:
            raise ShapeMismatch(
                f"Reference model layers {list(dr_ref.layer_sizes)} differ from "
                f"{list(model.layer_sizes)}."
            )
        e_phi_hat = significant_eigvecs(reshape_params(dr_ref), cfg.dr_rank)

    x = data.pooled_features() / model.input_scale
    labels = data.labels
    layer_sizes = model.layer_sizes
    mask = weight_mask(layer_sizes)
    params = model.flat_parameters().copy()
    rng = rng_for(cfg.seed, "batches")
    trace = TrainTrace()
    steps = 0

    for _ in range(cfg.epochs):
        if e_phi_hat is not None:
            dr_value, _, eigenvalues, gap = directional_loss_and_grad(
                params, e_phi_hat, cfg.dr_rank
            )
            trace.dr_losses.append(dr_value)
            trace.spectra.append(eigenvalues[: cfg.dr_rank].tolist())
            trace.eigengaps.append(gap)

        order = rng.permutation(len(labels))
        step_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start: start + cfg.batch_size]
            loss, grad = ce_loss_and_grad(layer_sizes, params, x[batch], labels[batch])
            grad = grad + cfg.l2_weight * mask * params

            if e_phi_hat is not None:
                dr_value, dr_gradient, _, _ = directional_loss_and_grad(
                    params, e_phi_hat, cfg.dr_rank
                )
                loss += cfg.dr_weight * dr_value
                if dr_gradient is None:
                    trace.dr_skipped += 1
                else:
                    grad = grad + _clip(cfg.dr_weight * dr_gradient, cfg.dr_grad_clip)

            step_losses.append(loss)
            params -= cfg.learning_rate * grad
            steps += 1

        trace.losses.append(float(np.mean(step_losses)))

    if trace.dr_skipped:
        logger.warning(
            "Skipped the directional term on %d of %d steps (degenerate spectrum).",
            trace.dr_skipped,
            steps,
        )

    return model.with_parameters(params), trace


def predict(model: ClassifierModel, x: Matrix) -> IndexArray:
    """Argmax class, ties going to the lowest index."""
    probs, _ = forward_batch(model, x)
    return np.argmax(probs, axis=1)


def evaluate(model: ClassifierModel, data: LabeledDataset) -> tuple[float, IndexArray]:
    check_compatible(model, data)
    predictions = predict(model, data.pooled_features())
    confusion = np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
    np.add.at(confusion, (data.labels, predictions), 1)
    return float(np.trace(confusion) / len(data)), confusion


def embed_dataset(
    model: ClassifierModel, data: LabeledDataset
) -> list[tuple[Vector, int]]:
    if data.feature_dim != model.input_dim:
        raise ShapeMismatch(
            f"Dataset has feature dimension {data.feature_dim}, "
            f"model expects {model.input_dim}."
        )
    _, embeddings = forward_batch(model, data.pooled_features())
    return [(vector, int(label)) for vector, label in zip(embeddings, data.labels)]


def separability_score(embeddings: Sequence[tuple[Vector, int]]) -> float:
    """Mean silhouette coefficient; 0 when every embedding coincides."""
    vectors = np.stack([np.asarray(v, dtype=np.float64) for v, _ in embeddings])
    labels = np.array([label for _, label in embeddings], dtype=np.int64)

    _, counts = np.unique(labels, return_counts=True)
    if len(counts) < 2 or counts.min() < 2:
        raise DegenerateClusters(
            "Separability needs at least two classes with two samples each."
        )
    if np.all(vectors == vectors[0]):
        return 0.0
    return float(silhouette_score(vectors, labels, metric="euclidean"))


def write_model(model: ClassifierModel, path: FilePath) -> None:
    text = serialize_model(
        model.layer_sizes, model.weights, model.biases, model.input_scale
    )
    with open(path, "w", encoding="utf-8", newline="\n") as model_file:
        model_file.write(text)


def load_model(path: FilePath) -> ClassifierModel:
    layer_sizes, weights, biases, input_scale = read_model(path)
    return ClassifierModel(
        layer_sizes, tuple(weights), tuple(biases), input_scale=input_scale
    )


class Classifier(Module):
    def __init__(self, manager: ExperimentManager):
        self.manager = manager

    @staticmethod
    @wraps(init_model)
    def init(
        layer_sizes: Sequence[int], seed: int, input_scale: float = 1.0
    ) -> ClassifierModel:
        return init_model(layer_sizes, seed, input_scale)

    @staticmethod
    @wraps(train)
    def train(
        model: ClassifierModel,
        data: LabeledDataset,
        cfg: TrainConfig,
        dr_ref: ClassifierModel | None = None,
    ) -> tuple[ClassifierModel, TrainTrace]:
        return train(model, data, cfg, dr_ref)

    @staticmethod
    @wraps(evaluate)
    def evaluate(
        model: ClassifierModel, data: LabeledDataset
    ) -> tuple[float, IndexArray]:
        return evaluate(model, data)

    @staticmethod
    @wraps(embed_dataset)
    def embed(model: ClassifierModel, data: LabeledDataset) -> list[tuple[Vector, int]]:
        return embed_dataset(model, data)

    @staticmethod
    @wraps(separability_score)
    def separability(embeddings: Sequence[tuple[Vector, int]]) -> float:
        return separability_score(embeddings)

    @staticmethod
    @wraps(write_model)
    def write(model: ClassifierModel, path: FilePath) -> None:
        write_model(model, path)

    @staticmethod
    @wraps(load_model)
    def load(path: FilePath) -> ClassifierModel:
        return load_model(path)

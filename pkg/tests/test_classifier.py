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

import numpy as np
import pytest

from modematch.classifier import (
    embed_dataset,
    evaluate,
    load_model,
    predict,
    separability_score,
    train,
    write_model,
)
from modematch.dataclasses import TrainConfig
from modematch.exceptions import DegenerateClusters, ShapeMismatch, ValidationError
from modematch.network import ClassifierModel, feature_scale, init_model
from modematch.regularizer import dr_loss

from .conftest import FAST_TRAIN


def test_training_reduces_loss_and_fits(small_data, small_model):
    _, target_train, _ = small_data
    cfg = TrainConfig(epochs=150, batch_size=5, learning_rate=0.1, l2_weight=1e-4)
    model, trace = train(small_model, target_train, cfg)

    assert len(trace.losses) == 150
    assert trace.losses[-1] < trace.losses[0]
    assert evaluate(model, target_train)[0] == 1.0
    assert trace.dr_losses == [] and trace.dr_skipped == 0


def test_training_is_deterministic(small_data, small_model):
    _, target_train, _ = small_data
    cfg = TrainConfig(**FAST_TRAIN, seed=3)

    first, first_trace = train(small_model, target_train, cfg)
    second, second_trace = train(small_model, target_train, cfg)

    assert first == second
    assert first_trace.losses == second_trace.losses


def test_training_does_not_mutate_the_input_model(small_data, small_model):
    _, target_train, _ = small_data
    before = small_model.flat_parameters().copy()
    train(small_model, target_train, TrainConfig(**FAST_TRAIN))

    assert np.array_equal(small_model.flat_parameters(), before)


def test_dr_requires_a_reference(small_data, small_model):
    _, target_train, _ = small_data
    cfg = TrainConfig(**FAST_TRAIN, dr_weight=1.0, dr_rank=2)

    with pytest.raises(ValidationError, match="reference"):
        train(small_model, target_train, cfg)


def test_dr_reference_must_share_architecture(small_data, small_model):
    _, target_train, _ = small_data
    cfg = TrainConfig(**FAST_TRAIN, dr_weight=1.0, dr_rank=2)

    with pytest.raises(ShapeMismatch):
        train(small_model, target_train, cfg, init_model((3, 5, 3), seed=0))


def test_dr_trace_is_recorded(small_data, small_model):
    _, target_train, _ = small_data
    reference = init_model((3, 6, 3), seed=99)
    cfg = TrainConfig(**FAST_TRAIN, dr_weight=0.5, dr_rank=2)
    model, trace = train(small_model, target_train, cfg, reference)

    assert len(trace.dr_losses) == cfg.epochs
    assert len(trace.spectra) == cfg.epochs
    assert all(len(values) == 2 for values in trace.spectra)
    assert trace.dr_losses[0] == pytest.approx(dr_loss(small_model, reference, 2))
    assert model != train(small_model, target_train, TrainConfig(**FAST_TRAIN))[0]


def test_degenerate_spectrum_skips_the_directional_term(small_data, caplog):
    _, target_train, _ = small_data
    zeros = init_model((3, 6, 3), seed=0).with_parameters(np.zeros(45))
    cfg = TrainConfig(**FAST_TRAIN, dr_weight=1.0, dr_rank=2)

    with caplog.at_level(logging.WARNING, logger="modematch.classifier"):
        _, trace = train(zeros, target_train, cfg, init_model((3, 6, 3), seed=1))

    assert trace.dr_skipped >= 1
    assert "Skipped the directional term" in caplog.text


def test_dataset_must_match_model(small_data):
    source, _, _ = small_data
    with pytest.raises(ShapeMismatch, match="classes"):
        evaluate(init_model((3, 4, 3), seed=0), source)


def test_evaluate_confusion(small_data, small_model):
    _, _, target_test = small_data
    accuracy, confusion = evaluate(small_model, target_test)
    predictions = predict(small_model, target_test.features)

    assert confusion.sum() == len(target_test)
    assert confusion.sum(axis=1).tolist() == target_test.class_counts.tolist()
    assert accuracy == pytest.approx(np.mean(predictions == target_test.labels))


def test_zero_weight_model_predicts_the_first_class(small_data):
    _, _, target_test = small_data
    zeros = init_model((3, 6, 3), seed=0).with_parameters(np.zeros(45))
    accuracy, _ = evaluate(zeros, target_test)

    assert predict(zeros, target_test.features).tolist() == [0] * len(target_test)
    assert accuracy == pytest.approx(1 / 3)


def test_zero_dr_weight_matches_plain_training(small_data, small_model):
    _, target_train, _ = small_data
    reference = init_model((3, 6, 3), seed=1)
    cfg = TrainConfig(**FAST_TRAIN, dr_weight=0.0, dr_rank=2)

    weighted, trace = train(small_model, target_train, cfg, reference)
    plain, _ = train(small_model, target_train, TrainConfig(**FAST_TRAIN))

    assert np.array_equal(weighted.flat_parameters(), plain.flat_parameters())
    assert trace.dr_losses == []


def test_separability_of_clustered_embeddings():
    pairs = [(np.array([x, 0.0]), 0) for x in (0.0, 0.1, 0.2)]
    pairs += [(np.array([x, 5.0]), 1) for x in (0.0, 0.1, 0.2)]

    assert separability_score(pairs) > 0.9


def test_separability_of_identical_embeddings_is_zero():
    pairs = [(np.ones(3), label) for label in (0, 0, 1, 1)]

    assert separability_score(pairs) == 0.0


@pytest.mark.parametrize(
    "labels",
    [(0, 0, 0), (0, 0, 1)],
)
def test_separability_needs_two_samples_per_class(labels):
    pairs = [(np.array([float(i)]), label) for i, label in enumerate(labels)]

    with pytest.raises(DegenerateClusters):
        separability_score(pairs)


def test_embeddings_have_hidden_width(small_data, small_model):
    _, _, target_test = small_data
    pairs = embed_dataset(small_model, target_test)

    assert len(pairs) == len(target_test)
    assert pairs[0][0].shape == (6,)


def test_model_file_round_trip(tmp_path, small_model):
    path = tmp_path / "model.txt"
    write_model(small_model, path)
    loaded = load_model(path)

    assert loaded.layer_sizes == small_model.layer_sizes
    assert loaded.input_scale == pytest.approx(small_model.input_scale, rel=1e-8)
    assert np.allclose(
        loaded.flat_parameters(), small_model.flat_parameters(), rtol=1e-8
    )


def test_linear_model_trains(small_data):
    _, target_train, _ = small_data
    model = ClassifierModel(
        (3, 3),
        (np.zeros((3, 3)),),
        (np.zeros(3),),
        input_scale=feature_scale(target_train.features),
    )
    trained, trace = train(model, target_train, TrainConfig(**FAST_TRAIN))

    assert trace.losses[-1] < np.log(3)
    assert trained.num_parameters == 12

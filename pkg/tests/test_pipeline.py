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
import os
from dataclasses import replace

import numpy as np
import pytest

from modematch.acceptance import (
    check_inverted_u,
    check_random_control,
    check_separability,
    check_source_generalization,
    check_table_ordering,
    first_round_gains,
)
from modematch.cli import main
from modematch.dataclasses import (
    PipelineConfig,
    PipelineResult,
    SourceInit,
    SweepRows,
    TrainConfig,
    TrimConfig,
    Variant,
)
from modematch.dataset import LabeledDataset, generate_sequences, split_dataset
from modematch.exceptions import BudgetExhausted, ShapeMismatch, ValidationError
from modematch.manager import ExperimentManager
from modematch.pipeline import (
    augmentation_sweep,
    budget_from_fraction,
    conform_augmentation,
    iteration_sweep,
    matched_source_dataset,
    prepare,
    run_experiment,
    run_pipeline,
    select_modes,
    train_source_classifier,
    warn_if_not_scarce,
)

from .conftest import FAST_TRAIN

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


@pytest.fixture
def prepared(small_data, fast_pipeline_config):
    return prepare(*small_data, fast_pipeline_config)


def test_budget_from_fraction(small_data):
    _, target_train, _ = small_data

    assert budget_from_fraction(1.0, target_train) == 5
    assert budget_from_fraction(0.25, target_train) == 1
    assert budget_from_fraction(4.0, target_train) == 20
    with pytest.raises(ValidationError, match="at least 1"):
        budget_from_fraction(0.05, target_train)


def test_prepare(prepared):
    assert 0.0 <= prepared.baseline_accuracy <= 1.0
    assert -1.0 <= prepared.baseline_separability <= 1.0
    assert prepared.source_modes == prepared.report.matched
    assert prepared.source_model.layer_sizes == prepared.baseline_model.layer_sizes
    assert prepared.source_model.input_scale == prepared.baseline_model.input_scale
    assert 0.0 <= prepared.source_holdout_accuracy <= 1.0
    assert prepared.baseline_confusion.sum() == 15


def test_pipeline_rounds(small_data, fast_pipeline_config, prepared):
    result = run_pipeline(*small_data, fast_pipeline_config, prepared)

    assert [record.round_index for record in result.rounds] == [1, 2]
    first, second = (set(record.used_sample_ids) for record in result.rounds)
    assert len(first) == len(second) == 3 * 3
    assert not first & second
    assert result.source_model is prepared.source_model
    assert result.final_accuracy == result.rounds[-1].accuracy
    assert not result.partial
    assert all(len(record.trace.dr_losses) == 30 for record in result.rounds)


def test_pipeline_uses_only_the_modes(small_data, fast_pipeline_config, prepared):
    source, _, _ = small_data
    result = run_pipeline(*small_data, fast_pipeline_config, prepared)

    for record in result.rounds:
        assert set(source.labels[record.used_sample_ids]) <= set(result.modes)


def test_pipeline_is_deterministic(small_data, fast_pipeline_config):
    first = run_pipeline(*small_data, fast_pipeline_config)
    second = run_pipeline(*small_data, fast_pipeline_config)

    assert first.final_model == second.final_model
    assert first.final_accuracy == second.final_accuracy
    assert first.to_dict() == second.to_dict()


def test_pipeline_runs_prepare_when_needed(small_data, fast_pipeline_config, prepared):
    fresh = run_pipeline(*small_data, fast_pipeline_config)
    reused = run_pipeline(*small_data, fast_pipeline_config, prepared)

    assert fresh.final_model == reused.final_model


def test_dr_only_variant_adds_no_samples(small_data, fast_pipeline_config, prepared):
    cfg = fast_pipeline_config.for_variant(Variant.DR)
    result = run_pipeline(*small_data, cfg, prepared)

    assert all(record.used_sample_ids == [] for record in result.rounds)
    assert result.source_model is prepared.source_model


def test_gws_only_variant_has_no_source_model(
    small_data, fast_pipeline_config, prepared
):
    cfg = fast_pipeline_config.for_variant(Variant.GWS)
    result = run_pipeline(*small_data, cfg, prepared)

    assert result.source_model is None
    assert all(record.trace.dr_losses == [] for record in result.rounds)


def test_random_modes_avoid_the_matched_class(
    small_data, fast_pipeline_config, prepared
):
    cfg = fast_pipeline_config.for_variant(Variant.RANDOM)
    modes = select_modes(cfg, prepared.report, 5)

    assert all(mode != matched for mode, matched in zip(modes, prepared.report.matched))
    assert select_modes(cfg, prepared.report, 5) == modes


def test_second_best_trains_its_own_source_model(
    small_data, fast_pipeline_config, prepared
):
    cfg = fast_pipeline_config.for_variant(Variant.SECOND_BEST_DR)
    result = run_pipeline(*small_data, cfg, prepared)

    assert result.modes == tuple(
        prepared.report.ranking(q)[1].source_class for q in range(3)
    )
    assert result.source_model is not None
    assert result.source_model is not prepared.source_model


def test_mode_override(small_data, fast_pipeline_config, prepared):
    cfg = replace(fast_pipeline_config, mode_override=(4, 3, 2))

    assert select_modes(cfg, prepared.report, 5) == (4, 3, 2)
    with pytest.raises(ValidationError):
        select_modes(replace(cfg, mode_override=(4, 3)), prepared.report, 5)
    with pytest.raises(ValidationError):
        select_modes(replace(cfg, mode_override=(4, 3, 9)), prepared.report, 5)


def test_budget_exhaustion_carries_the_partial_result(
    small_data, fast_pipeline_config, prepared
):
    cfg = replace(fast_pipeline_config, augment_budget=12, iterations=4)

    with pytest.raises(BudgetExhausted) as err:
        run_pipeline(*small_data, cfg, prepared)

    partial = err.value.partial
    assert isinstance(partial, PipelineResult)
    assert partial.partial
    assert err.value.round_index == len(partial.rounds) + 1
    assert err.value.round_index <= 3


def test_augmentation_sweep_rows(small_data, fast_pipeline_config, prepared):
    rows = augmentation_sweep(
        *small_data,
        fast_pipeline_config,
        (0.2, 0.6),
        (Variant.BASELINE, Variant.GWS, Variant.GWS_DR, Variant.RANDOM),
        prepared,
    )
    frame = rows.to_dataframe()

    assert len(frame) == 8
    assert frame["fraction_or_iter"].tolist() == [0.2] * 4 + [0.6] * 4
    baseline = frame[frame["variant"] == "baseline"]
    assert baseline["accuracy"].tolist() == [prepared.baseline_accuracy] * 2


def test_augmentation_sweep_exhaustion(small_data, fast_pipeline_config, prepared):
    with pytest.raises(BudgetExhausted) as err:
        augmentation_sweep(
            *small_data,
            fast_pipeline_config,
            (0.2, 8.0),
            (Variant.BASELINE, Variant.GWS),
            prepared,
        )

    assert isinstance(err.value.partial, SweepRows)
    assert [row["fraction_or_iter"] for row in err.value.partial] == [0.2, 0.2, 8.0]


def test_iteration_sweep_rows(small_data, fast_pipeline_config, prepared):
    rows = iteration_sweep(
        *small_data,
        fast_pipeline_config,
        2,
        (Variant.GWS, Variant.GWS_DR),
        prepared,
    )

    assert [(row["variant"], row["fraction_or_iter"]) for row in rows] == [
        ("gws", 0),
        ("gws", 1),
        ("gws", 2),
        ("gws_dr", 0),
        ("gws_dr", 1),
        ("gws_dr", 2),
    ]
    assert rows[0]["accuracy"] == prepared.baseline_accuracy


def test_iteration_sweep_truncates_on_exhaustion(
    small_data, fast_pipeline_config, prepared, caplog
):
    cfg = replace(fast_pipeline_config, augment_budget=12)
    with caplog.at_level(logging.WARNING, logger="modematch.pipeline"):
        rows = iteration_sweep(*small_data, cfg, 4, (Variant.GWS,), prepared)

    assert 1 <= len(rows) <= 3
    assert "ran out" in caplog.text


def test_sequence_pipeline_trims_augmentation(small_spec):
    source, target, _ = generate_sequences(small_spec, 12, 4, 4)
    target_train, target_test = split_dataset(target, 0.5, seed=1)
    cfg = PipelineConfig(
        hidden_sizes=(6,),
        baseline_cfg=TrainConfig(**FAST_TRAIN),
        source_cfg=TrainConfig(**FAST_TRAIN),
        retrain_cfg=TrainConfig(**FAST_TRAIN, dr_weight=1.0, dr_rank=2),
        augment_budget=2,
        trim=TrimConfig(window=4, stride=2),
    )
    result = run_pipeline(source, target_train, target_test, cfg)

    assert len(result.rounds) == 1
    assert len(result.rounds[0].used_sample_ids) == 6


def test_conform_pools_sequences_for_flat_targets(small_model):
    augmented = LabeledDataset(("a", "b"), np.ones((2, 5, 3)), [0, 1])
    like = LabeledDataset(("a", "b"), np.zeros((2, 3)), [0, 1])
    conformed = conform_augmentation(augmented, like, small_model, None)

    assert conformed.features.shape == (2, 3)
    assert np.array_equal(conformed.sample_ids, augmented.sample_ids)


def test_scarcity_warning(small_data, caplog):
    source, _, _ = small_data
    big = LabeledDataset(("a",), np.zeros((301, 3)), np.zeros(301, dtype=int))

    with caplog.at_level(logging.WARNING, logger="modematch.pipeline"):
        warn_if_not_scarce(source, big)
    assert "not scarce" in caplog.text


def test_shared_modes_warn(small_data, prepared, caplog):
    source, _, _ = small_data
    with caplog.at_level(logging.WARNING, logger="modematch.pipeline"):
        data = matched_source_dataset(source, prepared.report, (1, 1, 2))

    assert data.class_counts.tolist() == [30, 30, 30]
    assert "duplicated under 2 target labels" in caplog.text


def test_source_classifier_mirrors_the_target_architecture(
    small_data, fast_pipeline_config, prepared
):
    source, _, _ = small_data
    cfg = TrainConfig(**FAST_TRAIN, seed=4)
    theta = prepared.baseline_model

    phi = train_source_classifier(
        source, prepared.report, cfg, fast_pipeline_config.hidden_sizes
    )
    assert phi.layer_sizes == theta.layer_sizes

    shared = train_source_classifier(
        source,
        prepared.report,
        cfg,
        fast_pipeline_config.hidden_sizes,
        modes=(0, 0, 1),
        input_scale=theta.input_scale,
    )
    assert shared.input_scale == theta.input_scale
    assert shared.layer_sizes == theta.layer_sizes


def test_source_classifier_can_start_from_the_baseline(small_data, prepared):
    source, _, _ = small_data
    cfg = TrainConfig(**FAST_TRAIN, seed=4)
    theta = prepared.baseline_model
    hidden = theta.layer_sizes[1:-1]

    warm = train_source_classifier(source, prepared.report, cfg, hidden, init=theta)
    cold = train_source_classifier(source, prepared.report, cfg, hidden)

    assert warm.layer_sizes == theta.layer_sizes
    assert warm.input_scale == theta.input_scale
    assert not np.allclose(warm.flat_parameters(), cold.flat_parameters())
    with pytest.raises(ShapeMismatch, match="Initial source classifier"):
        train_source_classifier(source, prepared.report, cfg, (4,), init=theta)


def test_source_init_selects_the_starting_point(small_data, fast_pipeline_config):
    scratch_cfg = replace(fast_pipeline_config, source_init="scratch")
    assert scratch_cfg.source_init == SourceInit.SCRATCH

    warm = prepare(*small_data, fast_pipeline_config)
    cold = prepare(*small_data, scratch_cfg)

    assert warm.baseline_model == cold.baseline_model
    assert not np.allclose(
        warm.source_model.flat_parameters(), cold.source_model.flat_parameters()
    )


def test_pipeline_config_validation(fast_pipeline_config):
    with pytest.raises(ValidationError, match="Nothing to retrain"):
        replace(fast_pipeline_config, use_gws=False, use_dr=False)
    with pytest.raises(ValidationError, match="exclusive"):
        replace(fast_pipeline_config, use_second_best=True, random_modes=True)
    with pytest.raises(ValidationError, match="without DR"):
        replace(fast_pipeline_config, random_modes=True)
    with pytest.raises(ValidationError):
        fast_pipeline_config.for_variant(Variant.BASELINE)


def test_with_seed_derives_distinct_stage_seeds(fast_pipeline_config):
    cfg = fast_pipeline_config.with_seed(4)
    seeds = {
        cfg.baseline_cfg.seed,
        cfg.source_cfg.seed,
        cfg.retrain_cfg.seed,
        cfg.match_cfg.seed,
    }

    assert cfg.seed == 4
    assert len(seeds) == 4
    assert fast_pipeline_config.with_seed(4) == cfg


def test_run_experiment(tiny_experiment):
    output = run_experiment("pipeline", tiny_experiment, ExperimentManager())
    frame = output.rows.to_dataframe()

    assert len(frame) == 2 * 4
    assert frame["seed"].tolist() == [0] * 4 + [1] * 4
    assert frame[frame["variant"] == "baseline"]["fraction_or_iter"].tolist() == [0, 0]
    assert [record["seed"] for record in output.records] == [0, 1]
    assert not output.partial


def test_run_experiment_merge_ignores_worker_count(tiny_experiment):
    sequential = run_experiment("iterate", tiny_experiment, ExperimentManager(1))
    parallel = run_experiment("iterate", tiny_experiment, ExperimentManager(2))

    assert sequential.rows == parallel.rows
    assert sequential.records == parallel.records


def test_run_experiment_rejects_unknown_kinds(tiny_experiment):
    with pytest.raises(ValidationError, match="Unknown experiment"):
        run_experiment("grid", tiny_experiment, ExperimentManager())


@pytest.fixture(scope="module")
def pipeline_artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    config = os.path.join(CONFIGS, "pipeline.yaml")
    assert main(["pipeline", "--config", config, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def augment_artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("augment")
    config = os.path.join(CONFIGS, "sweep_augment.yaml")
    assert main(["sweep-augment", "--config", config, "--out", str(out)]) == 0
    return out


@pytest.mark.slow
def test_guided_supervision_beats_the_baseline(pipeline_artifacts):
    result = check_table_ordering(pipeline_artifacts)
    assert result.passed, result.detail


@pytest.mark.slow
def test_regularized_embeddings_are_separable(pipeline_artifacts):
    result = check_separability(pipeline_artifacts)
    assert result.passed, result.detail


@pytest.mark.slow
def test_source_classifier_generalizes(pipeline_artifacts):
    result = check_source_generalization(pipeline_artifacts)
    assert result.passed, result.detail


@pytest.mark.slow
def test_augmentation_curve_peaks_inside(augment_artifacts):
    result = check_inverted_u(augment_artifacts)
    assert result.passed, result.detail


@pytest.mark.slow
def test_random_augmentation_is_worse(augment_artifacts):
    result = check_random_control(augment_artifacts)
    assert result.passed, result.detail


@pytest.fixture(scope="module")
def iterate_artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("iterate")
    config = os.path.join(CONFIGS, "sweep_iterate.yaml")
    assert main(["sweep-iterate", "--config", config, "--out", str(out)]) == 0
    return out


@pytest.mark.slow
def test_first_round_improves_on_the_baseline(iterate_artifacts):
    gains = first_round_gains(iterate_artifacts)

    assert set(gains.index) == {str(Variant.GWS), str(Variant.GWS_DR)}
    assert (gains > 0).all(), gains.to_dict()

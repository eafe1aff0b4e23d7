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
import math

import numpy as np
import pytest

from modematch.acceptance import nearest_mean_model
from modematch.constants import MATCHING_BENCHMARK, REPORT_CSV_COLUMNS
from modematch.dataclasses import MatchConfig, MatchMethod, MatchScore
from modematch.dataset import LabeledDataset, SyntheticSpec, generate_synthetic
from modematch.exceptions import BudgetExhausted, ShapeMismatch, ValidationError
from modematch.matcher import (
    best_window_offset,
    candidate_offsets,
    class_log_likelihood,
    default_samples_per_class,
    log_likelihood_from_probs,
    match_modes,
    rank_scores,
    relabel_matched,
    second_best,
    second_best_modes,
    trim_dataset,
    trim_sequence,
)
from modematch.network import ClassifierModel, predict_proba


def _score(source_class, log_likelihood=0.0, count=0, mean_prob=0.0):
    return MatchScore(
        target_class=0,
        source_class=source_class,
        log_likelihood=log_likelihood,
        argmax_count=count,
        samples_used=4,
        mean_target_prob=mean_prob,
    )


def _class_mean_model(target: LabeledDataset) -> ClassifierModel:
    return nearest_mean_model(
        np.stack(
            [
                target.features[target.labels == q].mean(axis=0)
                for q in range(target.num_classes)
            ]
        )
    )


def _biased_model(num_classes: int, favored: int) -> ClassifierModel:
    bias = np.zeros(num_classes)
    bias[favored] = 10.0
    return ClassifierModel((3, num_classes), (np.zeros((num_classes, 3)),), (bias,))


def test_log_likelihood_is_sum_of_logs(small_data, small_model):
    source, _, _ = small_data
    x = source.features[:6]
    probs = predict_proba(small_model, x)

    assert class_log_likelihood(small_model, x, 1) == pytest.approx(
        float(np.sum(np.log(probs[:, 1])))
    )


def test_log_likelihood_pools_sequences_over_time(small_data, small_model):
    source, _, _ = small_data
    flat = source.features[:4]
    shift = np.array([[-1.0], [0.5], [0.5]])
    sequences = flat[:, None, :] + shift[None, :, :]

    assert sequences.shape == (4, 3, 3)
    assert class_log_likelihood(small_model, sequences, 2) == pytest.approx(
        class_log_likelihood(small_model, flat, 2)
    )


def _argmax_counts(model, source):
    report = match_modes(model, source, 3, MatchConfig(MatchMethod.COUNT, 12, seed=2))
    table = report.to_dataframe()[["target_class", "source_class", "argmax_count"]]
    return table.sort_values(["target_class", "source_class"], ignore_index=True)


def test_argmax_counts_ignore_a_shared_logit_shift(small_data, small_model):
    source, _, _ = small_data
    flat = small_model.flat_parameters().copy()
    flat[-small_model.num_classes:] -= 4.0
    shifted = small_model.with_parameters(flat)

    assert _argmax_counts(shifted, source).equals(_argmax_counts(small_model, source))


def test_log_likelihood_clamps_zero_probabilities():
    assert log_likelihood_from_probs([0.0, 1.0]) == pytest.approx(math.log(1e-300))


def test_log_likelihood_rejects_bad_arguments(small_model):
    with pytest.raises(ValidationError):
        class_log_likelihood(small_model, np.zeros((0, 3)), 0)
    with pytest.raises(ValidationError):
        class_log_likelihood(small_model, np.zeros((2, 3)), 3)


def test_likelihood_ranking_breaks_ties_by_index():
    scores = [_score(2, -1.0), _score(0, -3.0), _score(1, -1.0)]
    ranking, fell_back = rank_scores(scores, MatchMethod.LIKELIHOOD)

    assert [score.source_class for score in ranking] == [1, 2, 0]
    assert not fell_back


def test_count_ranking_breaks_ties_by_mean_probability():
    scores = [_score(0, count=3, mean_prob=0.5), _score(1, count=3, mean_prob=0.7)]
    scores.append(_score(2, count=4, mean_prob=0.1))
    ranking, _ = rank_scores(scores, MatchMethod.COUNT)

    assert [score.source_class for score in ranking] == [2, 1, 0]


def test_count_ranking_falls_back_when_all_counts_are_zero():
    scores = [_score(0, -5.0), _score(1, -2.0)]
    ranking, fell_back = rank_scores(scores, MatchMethod.COUNT)

    assert fell_back
    assert ranking[0].source_class == 1


@pytest.mark.parametrize("method", list(MatchMethod))
def test_match_recovers_ground_truth(method):
    spec = SyntheticSpec.with_random_map(seed=5, **MATCHING_BENCHMARK)
    source, target = generate_synthetic(spec)
    model = _class_mean_model(target)
    report = match_modes(model, source, 8, MatchConfig(method, seed=1))

    assert report.matched == spec.ground_truth_map
    assert report.method == method
    assert report.fallbacks == ()


def test_methods_agree_on_separable_data():
    spec = SyntheticSpec.with_random_map(seed=6, **MATCHING_BENCHMARK)
    source, target = generate_synthetic(spec)
    model = _class_mean_model(target)
    by_count = match_modes(model, source, 8, MatchConfig(MatchMethod.COUNT))
    by_likelihood = match_modes(model, source, 8, MatchConfig(MatchMethod.LIKELIHOOD))

    assert by_count.matched == by_likelihood.matched == spec.ground_truth_map


def test_report_table(small_spec):
    source, target = generate_synthetic(small_spec)
    report = match_modes(
        _class_mean_model(target),
        source,
        3,
        MatchConfig(samples_per_class=4),
        target.class_names,
    )
    table = report.to_dataframe()

    assert tuple(table.columns) == REPORT_CSV_COLUMNS
    assert len(table) == 3 * 5
    assert table["rank"].tolist()[:5] == [1, 2, 3, 4, 5]
    assert all(score.samples_used == 4 for score in report.ranking(0))
    assert set(report.matched_names()) == set(target.class_names)


def test_many_to_one_matching_warns_and_falls_back(small_data, caplog):
    source, _, _ = small_data
    with caplog.at_level(logging.WARNING, logger="modematch.matcher"):
        report = match_modes(_biased_model(3, 0), source, 3, MatchConfig())

    assert report.matched == (0, 0, 0)
    assert report.fallbacks == (1, 2)
    assert "matched to 3 target classes" in caplog.text
    assert "ranking it by log-likelihood" in caplog.text


def test_match_is_deterministic(small_data, small_model):
    source, _, _ = small_data
    cfg = MatchConfig(MatchMethod.LIKELIHOOD, samples_per_class=5, seed=3)

    first = match_modes(small_model, source, 3, cfg)
    second = match_modes(small_model, source, 3, cfg)
    assert first == second


def test_match_checks_shapes_and_sample_counts(small_data, small_model):
    source, _, _ = small_data
    with pytest.raises(ShapeMismatch):
        match_modes(small_model, source, 4, MatchConfig())
    with pytest.raises(ValidationError, match="smallest"):
        match_modes(small_model, source, 3, MatchConfig(samples_per_class=31))


def test_default_samples_per_class(small_data):
    source, _, _ = small_data

    assert default_samples_per_class(source) == 30


def test_second_best(small_spec):
    source, target = generate_synthetic(small_spec)
    report = match_modes(_class_mean_model(target), source, 3, MatchConfig())

    assert second_best(report, 0) == report.ranking(0)[1].source_class
    assert second_best_modes(report) == tuple(
        report.ranking(q)[1].source_class for q in range(3)
    )
    assert all(second_best(report, q) != report.matched[q] for q in range(3))


@pytest.mark.parametrize(
    "length, window, stride, expected",
    [
        (10, 4, 3, [0, 3, 6]),
        (11, 4, 3, [0, 3, 6, 7]),
        (4, 4, 2, [0]),
        (9, 3, 1, [0, 1, 2, 3, 4, 5, 6]),
    ],
)
def test_candidate_offsets(length, window, stride, expected):
    assert candidate_offsets(length, window, stride) == expected


def test_candidate_offsets_need_a_long_enough_sequence():
    with pytest.raises(ValidationError, match="shorter"):
        candidate_offsets(3, 4, 1)


def test_trimming_finds_the_planted_window():
    means = np.array([[4.0, 0.0], [0.0, 4.0]])
    model = nearest_mean_model(means)
    sequence = np.zeros((12, 2))
    sequence[6:10] = means[1]

    assert best_window_offset(model, sequence, 1, 4, 2) == 6
    assert np.array_equal(trim_sequence(model, sequence, 1, 4, 2), sequence[6:10])


def test_trimming_ties_go_to_the_earliest_window():
    model = nearest_mean_model(np.array([[1.0, 0.0], [0.0, 1.0]]))

    assert best_window_offset(model, np.zeros((8, 2)), 0, 2, 1) == 0


def test_trim_dataset():
    model = nearest_mean_model(np.eye(3)[:2] * 4.0)
    sequences = np.zeros((2, 6, 3))
    sequences[0, 2:4] = [4.0, 0.0, 0.0]
    sequences[1, 0:2] = [0.0, 4.0, 0.0]
    data = LabeledDataset(("a", "b"), sequences, [0, 1])
    trimmed = trim_dataset(model, data, 2, 1)

    assert trimmed.sequence_length == 2
    assert np.array_equal(trimmed.features[0], sequences[0, 2:4])
    assert np.array_equal(trimmed.features[1], sequences[1, 0:2])

    with pytest.raises(ValidationError):
        trim_dataset(model, LabeledDataset(("a",), np.zeros((1, 3)), [0]), 2, 1)


@pytest.fixture
def matched_report(small_spec):
    source, target = generate_synthetic(small_spec)
    report = match_modes(_class_mean_model(target), source, 3, MatchConfig())
    return source, report


def test_relabel_draws_budget_from_each_mode(matched_report):
    source, report = matched_report
    augmented = relabel_matched(source, report, 4, seed=2)

    assert augmented.class_names == report.target_class_names
    assert augmented.class_counts.tolist() == [4, 4, 4]
    for q in range(3):
        ids = augmented.sample_ids[augmented.labels == q]
        assert np.all(source.labels[ids] == report.matched[q])
        assert np.array_equal(
            augmented.features[augmented.labels == q], source.features[ids]
        )


def test_relabel_respects_exclusions(matched_report):
    source, report = matched_report
    first = relabel_matched(source, report, 10, seed=1)
    second = relabel_matched(source, report, 10, exclude=first.sample_ids, seed=1)

    assert not set(first.sample_ids.tolist()) & set(second.sample_ids.tolist())


def test_relabel_chains_exclusion_for_shared_modes(matched_report):
    source, report = matched_report
    shared = (report.matched[0],) * 3
    augmented = relabel_matched(source, report, 10, seed=1, modes=shared)

    assert len(set(augmented.sample_ids.tolist())) == 30
    with pytest.raises(BudgetExhausted) as err:
        relabel_matched(source, report, 11, seed=1, modes=shared)
    assert err.value.target_class == 2


def test_relabel_budget_must_be_positive(matched_report):
    source, report = matched_report
    with pytest.raises(ValidationError):
        relabel_matched(source, report, 0)

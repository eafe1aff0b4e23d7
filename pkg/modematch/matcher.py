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
from collections import Counter
from functools import wraps
from typing import Iterable, Sequence

import numpy as np

from modematch.constants import MAX_MATCH_SAMPLES, PROBABILITY_FLOOR
from modematch.dataclasses import MatchConfig, MatchMethod, MatchScore, ModeMatchReport
from modematch.dataset import LabeledDataset
from modematch.exceptions import BudgetExhausted, ShapeMismatch, ValidationError
from modematch.manager import ExperimentManager
from modematch.module import Module
from modematch.network import ClassifierModel, log_proba, predict_proba
from modematch.types import Matrix
from modematch.utils.seeding import rng_for

logger = logging.getLogger(__name__)


def log_likelihood_from_probs(probs: Sequence[float]) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    return float(np.sum(np.log(np.maximum(probs, PROBABILITY_FLOOR))))


def class_log_likelihood(
    model: ClassifierModel, source_samples: Matrix, target_class: int
) -> float:
    """
    Sum over samples of ``log P(y = target_class | x)``, clamped at 1e-300.
    ``(l, T, d)`` sequences are mean-pooled over time first.
    """
    source_samples = np.asarray(source_samples, dtype=np.float64)
    if source_samples.ndim == 3:
        source_samples = source_samples.mean(axis=1)
    if len(source_samples) == 0:
        raise ValidationError("Log-likelihood needs at least one source sample.")
    if not 0 <= target_class < model.num_classes:
        raise ValidationError(
            f"Target class {target_class} outside [0, {model.num_classes})."
        )
    probs = predict_proba(model, source_samples)
    return log_likelihood_from_probs(probs[:, target_class])


def default_samples_per_class(source: LabeledDataset) -> int:
    return int(min(source.class_counts.min(), MAX_MATCH_SAMPLES))


def _score_source_class(
    probs: Matrix, source_class: int
) -> list[MatchScore]:
    predictions = np.argmax(probs, axis=1)
    return [
        MatchScore(
            target_class=q,
            source_class=source_class,
            log_likelihood=log_likelihood_from_probs(probs[:, q]),
            argmax_count=int(np.sum(predictions == q)),
            samples_used=len(probs),
            mean_target_prob=float(np.mean(probs[:, q])),
        )
        for q in range(probs.shape[1])
    ]


def _likelihood_key(score: MatchScore) -> tuple:
    return (-score.log_likelihood, score.source_class)


def _count_key(score: MatchScore) -> tuple:
    return (-score.argmax_count, -score.mean_target_prob, score.source_class)


def rank_scores(
    scores: Iterable[MatchScore], method: MatchMethod
) -> tuple[tuple[MatchScore, ...], bool]:
    """
    Ranked scores for one target class and whether the count method fell back
    to likelihood ranking because no source sample was labeled as the class.
    """
    scores = list(scores)
    if method == MatchMethod.COUNT:
        if any(score.argmax_count for score in scores):
            return tuple(sorted(scores, key=_count_key)), False
        return tuple(sorted(scores, key=_likelihood_key)), True
    return tuple(sorted(scores, key=_likelihood_key)), False


def match_modes(
    model: ClassifierModel,
    source: LabeledDataset,
    target_class_count: int,
    cfg: MatchConfig,
    target_class_names: Sequence[str] | None = None,
) -> ModeMatchReport:
    if model.num_classes != target_class_count:
        raise ShapeMismatch(
            f"Model outputs {model.num_classes} classes, "
            f"expected {target_class_count} target classes."
        )
    if source.feature_dim != model.input_dim:
        raise ShapeMismatch(
            f"Source features have dimension {source.feature_dim}, "
            f"model expects {model.input_dim}."
        )

    smallest = int(source.class_counts.min())
    samples_per_class = cfg.samples_per_class or default_samples_per_class(source)
    if samples_per_class > smallest:
        raise ValidationError(
            f"samples_per_class={samples_per_class} exceeds the smallest "
            f"source class ({smallest} samples)."
        )

    rng = rng_for(cfg.seed, "match-subsample")
    features = source.pooled_features()
    per_target: list[list[MatchScore]] = [[] for _ in range(target_class_count)]
    for p in range(source.num_classes):
        chosen = np.sort(
            rng.choice(source.indices_of(p), samples_per_class, replace=False)
        )
        for score in _score_source_class(predict_proba(model, features[chosen]), p):
            per_target[score.target_class].append(score)

    rankings, fallbacks = [], []
    for q, scores in enumerate(per_target):
        ranking, fell_back = rank_scores(scores, cfg.method)
        rankings.append(ranking)
        if fell_back:
            fallbacks.append(q)
            logger.warning(
                "No source sample was labeled as target class %d; "
                "ranking it by log-likelihood instead.",
                q,
            )

    matched = tuple(ranking[0].source_class for ranking in rankings)
    for source_class, hits in Counter(matched).items():
        if hits > 1:
            logger.warning(
                "Source class '%s' is matched to %d target classes.",
                source.class_names[source_class],
                hits,
            )

    if target_class_names is None:
        target_class_names = tuple(f"target_{q}" for q in range(target_class_count))

    return ModeMatchReport(
        rankings=tuple(rankings),
        matched=matched,
        method=cfg.method,
        source_class_names=source.class_names,
        target_class_names=tuple(target_class_names),
        fallbacks=tuple(fallbacks),
    )


def second_best(report: ModeMatchReport, target_class: int) -> int:
    ranking = report.ranking(target_class)
    if len(ranking) < 2:
        raise ValidationError("Second-best mode needs at least two source classes.")
    return ranking[1].source_class


def second_best_modes(report: ModeMatchReport) -> tuple[int, ...]:
    return tuple(second_best(report, q) for q in range(len(report.matched)))


def candidate_offsets(sequence_length: int, window: int, stride: int) -> list[int]:
    if stride < 1:
        raise ValidationError(f"Stride must be positive, got {stride}.")
    if window < 1 or sequence_length < window:
        raise ValidationError(
            f"Sequence of length {sequence_length} is shorter than window {window}."
        )
    return sorted(
        set(range(0, sequence_length - window + 1, stride)) | {sequence_length - window}
    )


def best_window_offset(
    model: ClassifierModel,
    sequence: Matrix,
    target_class: int,
    window: int,
    stride: int,
) -> int:
    """Offset of the mean-pooled window scoring highest for ``target_class``."""
    sequence = np.asarray(sequence, dtype=np.float64)
    offsets = candidate_offsets(len(sequence), window, stride)
    pooled = np.stack([sequence[o: o + window].mean(axis=0) for o in offsets])
    scores = log_proba(model, pooled)[:, target_class]
    return offsets[int(np.argmax(scores))]


def trim_sequence(
    model: ClassifierModel,
    sequence: Matrix,
    target_class: int,
    window: int,
    stride: int,
) -> Matrix:
    offset = best_window_offset(model, sequence, target_class, window, stride)
    return np.asarray(sequence)[offset: offset + window]


def trim_dataset(
    model: ClassifierModel, data: LabeledDataset, window: int, stride: int
) -> LabeledDataset:
    """Trim every sequence to the window best matching its own label."""
    if data.sequence_length is None:
        raise ValidationError("Only sequence datasets can be trimmed.")
    windows = np.stack(
        [
            trim_sequence(model, sequence, int(label), window, stride)
            for sequence, label in zip(data.features, data.labels)
        ]
    )
    return LabeledDataset(data.class_names, windows, data.labels, data.sample_ids)


def relabel_matched(
    source: LabeledDataset,
    report: ModeMatchReport,
    per_class_budget: int,
    exclude: Iterable[int] = (),
    seed: int = 0,
    modes: Sequence[int] | None = None,
) -> LabeledDataset:
    """
    Draw per_class_budget unused samples of each target class's mode and
    relabel them with the target class. modes defaults to the matched
    classes. The result's sample_ids are the source ids used.
    """
    if per_class_budget < 1:
        raise ValidationError("per_class_budget must be at least 1.")
    modes = report.matched if modes is None else tuple(modes)
    if len(modes) != len(report.target_class_names):
        raise ValidationError("One mode per target class is required.")

    used = set(int(sample_id) for sample_id in exclude)
    rng = rng_for(seed, "relabel")
    chosen_rows, labels = [], []
    for q, p in enumerate(modes):
        members = source.indices_of(p)
        available = members[~np.isin(source.sample_ids[members], list(used))]
        if len(available) < per_class_budget:
            raise BudgetExhausted(
                f"Source class '{source.class_names[p]}' has {len(available)} unused "
                f"samples left, target class {q} needs {per_class_budget}.",
                target_class=q,
            )
        picked = np.sort(rng.choice(available, per_class_budget, replace=False))
        used.update(int(sample_id) for sample_id in source.sample_ids[picked])
        chosen_rows.extend(picked)
        labels.extend([q] * per_class_budget)

    chosen_rows = np.asarray(chosen_rows, dtype=np.int64)
    return LabeledDataset(
        report.target_class_names,
        source.features[chosen_rows],
        np.asarray(labels, dtype=np.int64),
        source.sample_ids[chosen_rows],
    )


class Matcher(Module):
    def __init__(self, manager: ExperimentManager):
        self.manager = manager

    @staticmethod
    @wraps(class_log_likelihood)
    def log_likelihood(
        model: ClassifierModel, source_samples: Matrix, target_class: int
    ) -> float:
        return class_log_likelihood(model, source_samples, target_class)

    @staticmethod
    @wraps(match_modes)
    def match(
        model: ClassifierModel,
        source: LabeledDataset,
        target_class_count: int,
        cfg: MatchConfig,
        target_class_names: Sequence[str] | None = None,
    ) -> ModeMatchReport:
        return match_modes(model, source, target_class_count, cfg, target_class_names)

    @staticmethod
    @wraps(second_best)
    def second_best(report: ModeMatchReport, target_class: int) -> int:
        return second_best(report, target_class)

    @staticmethod
    @wraps(trim_sequence)
    def trim(
        model: ClassifierModel,
        sequence: Matrix,
        target_class: int,
        window: int,
        stride: int,
    ) -> Matrix:
        return trim_sequence(model, sequence, target_class, window, stride)

    @staticmethod
    @wraps(relabel_matched)
    def relabel(
        source: LabeledDataset,
        report: ModeMatchReport,
        per_class_budget: int,
        exclude: Iterable[int] = (),
        seed: int = 0,
        modes: Sequence[int] | None = None,
    ) -> LabeledDataset:
        return relabel_matched(source, report, per_class_budget, exclude, seed, modes)

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
from dataclasses import replace
from functools import wraps
from typing import Any, Sequence

import numpy as np

from modematch.classifier import embed_dataset, evaluate, separability_score, train
from modematch.constants import DEFAULT_HIDDEN_SIZES, SCARCITY_RATIO
from modematch.dataclasses import (
    DataConfig,
    ExperimentConfig,
    ExperimentOutput,
    ModeMatchReport,
    PipelineConfig,
    PipelineResult,
    PreparedRun,
    RoundRecord,
    SourceInit,
    SweepRows,
    TrainConfig,
    TrimConfig,
    Variant,
)
from modematch.dataset import (
    LabeledDataset,
    SyntheticSpec,
    concat_datasets,
    generate_synthetic,
    load_dataset,
    split_dataset,
)
from modematch.exceptions import BudgetExhausted, ShapeMismatch, ValidationError
from modematch.manager import ExperimentManager
from modematch.matcher import (
    match_modes,
    relabel_matched,
    second_best_modes,
    trim_dataset,
)
from modematch.module import Module
from modematch.network import ClassifierModel, feature_scale, init_model
from modematch.utils.decorators import timed
from modematch.utils.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)


def layer_sizes_for(
    feature_dim: int, hidden_sizes: Sequence[int], num_classes: int
) -> tuple[int, ...]:
    return (feature_dim, *hidden_sizes, num_classes)


def budget_from_fraction(fraction: float, target_train: LabeledDataset) -> int:
    """Per-class budget as a fraction of the mean per-class target-train size."""
    budget = round(fraction * float(np.mean(target_train.class_counts)))
    if budget < 1:
        raise ValidationError(
            f"Fraction {fraction} maps to a per-class budget of {budget}; "
            "budgets must be at least 1."
        )
    return budget


def check_datasets(
    source: LabeledDataset, target_train: LabeledDataset, target_test: LabeledDataset
) -> None:
    if source.feature_dim != target_train.feature_dim:
        raise ShapeMismatch(
            f"Source features have dimension {source.feature_dim}, "
            f"target features {target_train.feature_dim}."
        )
    if target_train.class_names != target_test.class_names:
        raise ValidationError("Target train and test sets must share their classes.")
    if target_train.features.shape[1:] != target_test.features.shape[1:]:
        raise ShapeMismatch("Target train and test samples differ in shape.")


def warn_if_not_scarce(source: LabeledDataset, target_train: LabeledDataset) -> None:
    smallest = int(source.class_counts.min())
    if len(target_train) > SCARCITY_RATIO * smallest:
        logger.warning(
            "Target training set (%d samples) is not scarce: it exceeds %dx the "
            "smallest source class (%d samples).",
            len(target_train),
            SCARCITY_RATIO,
            smallest,
        )


def matched_source_dataset(
    source: LabeledDataset, report: ModeMatchReport, modes: Sequence[int] | None = None
) -> LabeledDataset:
    """
    All samples of each target class's mode, labeled with the target class.
    A source class serving several target classes appears under each label.
    """
    modes = report.matched if modes is None else tuple(modes)
    for source_class in sorted(set(modes)):
        if (hits := modes.count(source_class)) > 1:
            logger.warning(
                "Source class '%s' is duplicated under %d target labels.",
                source.class_names[source_class],
                hits,
            )

    rows = [source.indices_of(p) for p in modes]
    indices = np.concatenate(rows)
    labels = np.concatenate([np.full(len(r), q) for q, r in enumerate(rows)])
    return LabeledDataset(
        report.target_class_names,
        source.features[indices],
        labels,
        source.sample_ids[indices],
    )


def train_source_classifier(
    source: LabeledDataset,
    report: ModeMatchReport,
    cfg: TrainConfig,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN_SIZES,
    modes: Sequence[int] | None = None,
    input_scale: float | None = None,
    init: ClassifierModel | None = None,
) -> ClassifierModel:
    """
    Train φ to discriminate the modes, labeled with their target classes,
    using the same architecture as the target classifier. Training starts
    from ``init`` when given, keeping its input scale; otherwise from a seeded
    initialization whose ``input_scale`` defaults to the scale of the matched
    source samples.
    """
    data = matched_source_dataset(source, report, modes)
    if data.class_counts.min() < 2:
        raise ValidationError("Every matched source class needs at least two samples.")

    layer_sizes = layer_sizes_for(source.feature_dim, hidden_sizes, data.num_classes)
    if init is None:
        phi = init_model(
            layer_sizes,
            derive_seed(cfg.seed, "source-init"),
            input_scale=input_scale or feature_scale(data.pooled_features()),
        )
    elif init.layer_sizes != layer_sizes:
        raise ShapeMismatch(
            f"Initial source classifier has layers {list(init.layer_sizes)}, "
            f"expected {list(layer_sizes)}."
        )
    else:
        phi = init
    phi, _ = train(phi, data, replace(cfg, dr_weight=0.0))
    return phi


def select_modes(
    cfg: PipelineConfig, report: ModeMatchReport, num_source_classes: int
) -> tuple[int, ...]:
    """Source class augmenting each target class under ``cfg``."""
    if cfg.mode_override is not None:
        if len(cfg.mode_override) != len(report.matched):
            raise ValidationError(
                f"mode_override names {len(cfg.mode_override)} classes, "
                f"expected {len(report.matched)}."
            )
        if any(not 0 <= p < num_source_classes for p in cfg.mode_override):
            raise ValidationError("mode_override must name existing source classes.")
        return cfg.mode_override

    if cfg.use_second_best:
        return second_best_modes(report)

    if cfg.random_modes:
        if num_source_classes < 2:
            raise ValidationError("Random modes need at least two source classes.")
        rng = rng_for(cfg.seed, "random-modes")
        modes = []
        for matched in report.matched:
            others = [p for p in range(num_source_classes) if p != matched]
            modes.append(int(rng.choice(others)))
        return tuple(modes)

    return report.matched


def _source_start(
    cfg: PipelineConfig, baseline: ClassifierModel
) -> ClassifierModel | None:
    return baseline if cfg.source_init == SourceInit.BASELINE else None


def _source_reference(
    source: LabeledDataset,
    report: ModeMatchReport,
    cfg: PipelineConfig,
    modes: tuple[int, ...],
    baseline: ClassifierModel,
) -> tuple[ClassifierModel, float | None]:
    """φ trained without the source holdout, and its accuracy on the holdout."""
    fit, holdout = source, None
    if cfg.source_holdout_fraction > 0:
        fit, holdout = split_dataset(
            source,
            1.0 - cfg.source_holdout_fraction,
            derive_seed(cfg.seed, "source-holdout"),
        )

    phi = train_source_classifier(
        fit,
        report,
        cfg.source_cfg,
        cfg.hidden_sizes,
        modes,
        baseline.input_scale,
        _source_start(cfg, baseline),
    )
    if holdout is None:
        return phi, None
    accuracy, _ = evaluate(phi, matched_source_dataset(holdout, report, modes))
    return phi, accuracy


@timed()
def prepare(
    source: LabeledDataset,
    target_train: LabeledDataset,
    target_test: LabeledDataset,
    cfg: PipelineConfig,
) -> PreparedRun:
    """
    Stages shared by every variant of a seed: the baseline target classifier,
    its matching report and the source classifier on the reference modes.
    """
    check_datasets(source, target_train, target_test)
    warn_if_not_scarce(source, target_train)

    layer_sizes = layer_sizes_for(
        target_train.feature_dim, cfg.hidden_sizes, target_train.num_classes
    )
    theta = init_model(
        layer_sizes,
        derive_seed(cfg.seed, "baseline-init"),
        input_scale=feature_scale(target_train.pooled_features()),
    )
    baseline, trace = train(theta, target_train, cfg.baseline_cfg)
    accuracy, confusion = evaluate(baseline, target_test)
    separability = separability_score(embed_dataset(baseline, target_test))
    logger.info("Baseline accuracy %.4f (seed %d)", accuracy, cfg.seed)

    report = match_modes(
        baseline,
        source,
        target_train.num_classes,
        cfg.match_cfg,
        target_train.class_names,
    )
    modes = cfg.mode_override if cfg.mode_override is not None else report.matched
    phi, holdout_accuracy = _source_reference(source, report, cfg, modes, baseline)

    return PreparedRun(
        baseline_model=baseline,
        baseline_trace=trace,
        baseline_accuracy=accuracy,
        baseline_confusion=confusion,
        baseline_separability=separability,
        report=report,
        source_model=phi,
        source_modes=tuple(modes),
        source_holdout_accuracy=holdout_accuracy,
    )


def conform_augmentation(
    augmented: LabeledDataset,
    like: LabeledDataset,
    model: ClassifierModel,
    trim: TrimConfig | None,
) -> LabeledDataset:
    """Trim and/or pool relabeled source samples to the target sample shape."""
    if augmented.sequence_length is not None and trim is not None:
        augmented = trim_dataset(model, augmented, trim.window, trim.stride)
    if augmented.features.shape[1:] == like.features.shape[1:]:
        return augmented
    if like.sequence_length is None:
        return LabeledDataset(
            augmented.class_names,
            augmented.pooled_features(),
            augmented.labels,
            augmented.sample_ids,
        )
    raise ShapeMismatch(
        f"Augmented samples have shape {augmented.features.shape[1:]}, target "
        f"samples {like.features.shape[1:]}; configure trim to match them."
    )


@timed()
def run_pipeline(
    source: LabeledDataset,
    target_train: LabeledDataset,
    target_test: LabeledDataset,
    cfg: PipelineConfig,
    prepared: PreparedRun | None = None,
) -> PipelineResult:
    """
    Baseline training, mode matching, source classifier, then iterations
    rounds of retraining from the previous round's parameters on the target
    samples plus fresh relabeled samples of the modes, with the directional
    term toward φ when use_dr is set. Modes stay fixed across rounds and
    used source samples are never drawn again.
    """
    if prepared is None:
        prepared = prepare(source, target_train, target_test, cfg)
    else:
        check_datasets(source, target_train, target_test)

    report = prepared.report
    modes = select_modes(cfg, report, source.num_classes)

    phi = None
    if cfg.use_dr:
        if modes == prepared.source_modes:
            phi = prepared.source_model
        else:
            phi = train_source_classifier(
                source,
                report,
                cfg.source_cfg,
                cfg.hidden_sizes,
                modes,
                prepared.baseline_model.input_scale,
                _source_start(cfg, prepared.baseline_model),
            )
    retrain_cfg = cfg.retrain_cfg
    if not cfg.use_dr:
        retrain_cfg = replace(retrain_cfg, dr_weight=0.0)

    result = PipelineResult(
        baseline_model=prepared.baseline_model,
        source_model=phi,
        final_model=prepared.baseline_model,
        report=report,
        modes=modes,
        baseline_accuracy=prepared.baseline_accuracy,
        baseline_confusion=prepared.baseline_confusion,
        baseline_separability=prepared.baseline_separability,
        source_holdout_accuracy=prepared.source_holdout_accuracy,
        baseline_trace=prepared.baseline_trace,
    )

    theta = prepared.baseline_model
    exclude: set[int] = set()
    for round_index in range(1, cfg.iterations + 1):
        train_data, used = target_train, []
        if cfg.use_gws:
            try:
                augmented = relabel_matched(
                    source,
                    report,
                    cfg.augment_budget,
                    exclude,
                    derive_seed(cfg.seed, f"relabel-{round_index}"),
                    modes,
                )
            except BudgetExhausted as err:
                result.partial = True
                raise BudgetExhausted(
                    f"Round {round_index}: {err}",
                    err.target_class,
                    round_index=round_index,
                    partial=result,
                )
            augmented = conform_augmentation(augmented, target_train, theta, cfg.trim)
            used = sorted(int(sample_id) for sample_id in augmented.sample_ids)
            exclude.update(used)
            train_data = concat_datasets(target_train, augmented)

        round_cfg = replace(
            retrain_cfg, seed=derive_seed(retrain_cfg.seed, f"round-{round_index}")
        )
        theta, trace = train(theta, train_data, round_cfg, dr_ref=phi)
        accuracy, confusion = evaluate(theta, target_test)
        separability = separability_score(embed_dataset(theta, target_test))
        logger.info(
            "Round %d: accuracy %.4f, separability %.4f",
            round_index,
            accuracy,
            separability,
        )

        result.rounds.append(
            RoundRecord(round_index, accuracy, confusion, separability, trace, used)
        )
        result.final_model = theta

    return result


@timed()
def augmentation_sweep(
    source: LabeledDataset,
    target_train: LabeledDataset,
    target_test: LabeledDataset,
    cfg: PipelineConfig,
    fractions: Sequence[float],
    variants: Sequence[Variant] = (Variant.BASELINE, Variant.GWS, Variant.GWS_DR),
    prepared: PreparedRun | None = None,
) -> SweepRows:
    """One single-round pipeline per (fraction, variant), all on ``cfg.seed``."""
    if list(fractions) != sorted(fractions):
        raise ValidationError("Sweep fractions must be ascending.")
    budgets = [budget_from_fraction(fraction, target_train) for fraction in fractions]
    if prepared is None:
        prepared = prepare(source, target_train, target_test, cfg)

    rows = SweepRows()
    for fraction, budget in zip(fractions, budgets):
        for variant in map(Variant, variants):
            if variant == Variant.BASELINE:
                rows.add(
                    variant,
                    fraction,
                    cfg.seed,
                    prepared.baseline_accuracy,
                    prepared.baseline_separability,
                )
                continue

            variant_cfg = replace(
                cfg.for_variant(variant), augment_budget=budget, iterations=1
            )
            try:
                result = run_pipeline(
                    source, target_train, target_test, variant_cfg, prepared
                )
            except BudgetExhausted as err:
                raise BudgetExhausted(
                    f"Fraction {fraction}: {err}",
                    err.target_class,
                    round_index=err.round_index,
                    partial=rows,
                )
            rows.add(
                variant,
                fraction,
                cfg.seed,
                result.final_accuracy,
                result.final_separability,
            )
            logger.info(
                "Seed %d, fraction %g, %s: accuracy %.4f",
                cfg.seed,
                fraction,
                variant,
                result.final_accuracy,
            )
    return rows


@timed()
def iteration_sweep(
    source: LabeledDataset,
    target_train: LabeledDataset,
    target_test: LabeledDataset,
    cfg: PipelineConfig,
    max_iterations: int,
    variants: Sequence[Variant] = (Variant.GWS, Variant.GWS_DR),
    prepared: PreparedRun | None = None,
) -> SweepRows:
    """
    Accuracy per retraining round, round 0 being the baseline. Runs cut short
    by an exhausted budget are reported up to their last complete round.
    """
    if prepared is None:
        prepared = prepare(source, target_train, target_test, cfg)

    rows = SweepRows()
    for variant in map(Variant, variants):
        rows.add(
            variant,
            0,
            cfg.seed,
            prepared.baseline_accuracy,
            prepared.baseline_separability,
        )
        variant_cfg = replace(cfg.for_variant(variant), iterations=max_iterations)
        try:
            result = run_pipeline(
                source, target_train, target_test, variant_cfg, prepared
            )
        except BudgetExhausted as err:
            result = err.partial
            logger.warning(
                "%s: source samples ran out in round %d; reporting %d of %d rounds.",
                variant,
                err.round_index,
                len(result.rounds),
                max_iterations,
            )
        for record in result.rounds:
            rows.add(
                variant,
                record.round_index,
                cfg.seed,
                record.accuracy,
                record.separability,
            )
    return rows


def experiment_datasets(
    data_cfg: DataConfig, seed: int
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset, tuple[int, ...] | None]:
    """Source, target train, target test and the ground-truth map when known."""
    if data_cfg.from_files:
        source = load_dataset(data_cfg.source_path)
        target = load_dataset(data_cfg.target_path)
        ground_truth = None
    else:
        spec = SyntheticSpec.with_random_map(
            seed=seed,
            num_source_classes=data_cfg.num_source_classes,
            num_target_classes=data_cfg.num_target_classes,
            feature_dim=data_cfg.feature_dim,
            samples_per_source_class=data_cfg.samples_per_source_class,
            samples_per_target_class=data_cfg.samples_per_target_class,
            class_separation=data_cfg.class_separation,
            target_perturbation=data_cfg.target_perturbation,
            noise_scale=data_cfg.noise_scale,
            source_noise_scale=data_cfg.source_noise_scale,
        )
        source, target = generate_synthetic(spec)
        ground_truth = spec.ground_truth_map

    target_train, target_test = split_dataset(
        target, data_cfg.train_fraction, derive_seed(seed, "target-split")
    )
    return source, target_train, target_test, ground_truth


def _seed_record(
    seed: int, prepared: PreparedRun, ground_truth: tuple[int, ...] | None
) -> dict[str, Any]:
    return {
        "seed": seed,
        "baseline_accuracy": prepared.baseline_accuracy,
        "baseline_separability": prepared.baseline_separability,
        "source_holdout_accuracy": prepared.source_holdout_accuracy,
        "ground_truth_map": None if ground_truth is None else list(ground_truth),
        "matched": list(prepared.report.matched),
        "report": prepared.report.to_dict(),
    }


def pipeline_cell(cell: tuple[ExperimentConfig, int]) -> tuple[SweepRows, dict, bool]:
    experiment, seed = cell
    source, target_train, target_test, ground_truth = experiment_datasets(
        experiment.data, seed
    )
    cfg = experiment.pipeline.with_seed(seed)
    prepared = prepare(source, target_train, target_test, cfg)

    rows = SweepRows()
    record = _seed_record(seed, prepared, ground_truth)
    record["variants"] = {}
    for variant in experiment.sweep.pipeline_variants:
        if variant == Variant.BASELINE:
            rows.add(
                variant,
                0,
                seed,
                prepared.baseline_accuracy,
                prepared.baseline_separability,
            )
            continue
        try:
            result = run_pipeline(
                source, target_train, target_test, cfg.for_variant(variant), prepared
            )
        except BudgetExhausted as err:
            logger.warning("Seed %d, %s: %s", seed, variant, err)
            record["variants"][str(variant)] = err.partial.to_dict()
            return rows, record, True
        rows.add(
            variant,
            cfg.iterations,
            seed,
            result.final_accuracy,
            result.final_separability,
        )
        record["variants"][str(variant)] = result.to_dict()
    return rows, record, False


def augment_cell(cell: tuple[ExperimentConfig, int]) -> tuple[SweepRows, dict, bool]:
    experiment, seed = cell
    source, target_train, target_test, ground_truth = experiment_datasets(
        experiment.data, seed
    )
    cfg = experiment.pipeline.with_seed(seed)
    prepared = prepare(source, target_train, target_test, cfg)

    record = _seed_record(seed, prepared, ground_truth)
    record["budgets"] = {
        str(fraction): budget_from_fraction(fraction, target_train)
        for fraction in experiment.sweep.fractions
    }
    try:
        rows = augmentation_sweep(
            source,
            target_train,
            target_test,
            cfg,
            experiment.sweep.fractions,
            experiment.sweep.augment_variants,
            prepared,
        )
    except BudgetExhausted as err:
        logger.warning("Seed %d: %s", seed, err)
        return err.partial, record, True
    return rows, record, False


def iterate_cell(cell: tuple[ExperimentConfig, int]) -> tuple[SweepRows, dict, bool]:
    experiment, seed = cell
    source, target_train, target_test, ground_truth = experiment_datasets(
        experiment.data, seed
    )
    cfg = experiment.pipeline.with_seed(seed)
    prepared = prepare(source, target_train, target_test, cfg)

    rows = iteration_sweep(
        source,
        target_train,
        target_test,
        cfg,
        experiment.sweep.max_iterations,
        experiment.sweep.iterate_variants,
        prepared,
    )
    record = _seed_record(seed, prepared, ground_truth)
    record["rounds"] = {
        str(variant): max(
            (row["fraction_or_iter"] for row in rows if row["variant"] == str(variant)),
            default=0,
        )
        for variant in experiment.sweep.iterate_variants
    }
    truncated = any(
        completed < experiment.sweep.max_iterations
        for completed in record["rounds"].values()
    )
    return rows, record, truncated


EXPERIMENT_CELLS = {
    "pipeline": pipeline_cell,
    "augment": augment_cell,
    "iterate": iterate_cell,
}


@timed()
def run_experiment(
    kind: str, experiment: ExperimentConfig, manager: ExperimentManager
) -> ExperimentOutput:
    """
    Run one cell per seed (in parallel when the manager has workers) and merge
    rows and per-seed records in seed order.
    """
    if kind not in EXPERIMENT_CELLS:
        raise ValidationError(
            f"Unknown experiment '{kind}', expected one of {sorted(EXPERIMENT_CELLS)}."
        )
    outputs = manager.map(
        EXPERIMENT_CELLS[kind], [(experiment, seed) for seed in experiment.seeds]
    )

    merged = ExperimentOutput(rows=SweepRows(), records=[])
    for rows, record, partial in outputs:
        merged.rows.extend(rows)
        merged.records.append(record)
        merged.partial = merged.partial or partial
    return merged


class Pipeline(Module):
    def __init__(self, manager: ExperimentManager):
        self.manager = manager

    @staticmethod
    @wraps(prepare)
    def prepare(
        source: LabeledDataset,
        target_train: LabeledDataset,
        target_test: LabeledDataset,
        cfg: PipelineConfig,
    ) -> PreparedRun:
        return prepare(source, target_train, target_test, cfg)

    @staticmethod
    @wraps(run_pipeline)
    def run(
        source: LabeledDataset,
        target_train: LabeledDataset,
        target_test: LabeledDataset,
        cfg: PipelineConfig,
        prepared: PreparedRun | None = None,
    ) -> PipelineResult:
        return run_pipeline(source, target_train, target_test, cfg, prepared)

    @staticmethod
    @wraps(train_source_classifier)
    def train_source_classifier(
        source: LabeledDataset,
        report: ModeMatchReport,
        cfg: TrainConfig,
        hidden_sizes: Sequence[int] = DEFAULT_HIDDEN_SIZES,
        modes: Sequence[int] | None = None,
        input_scale: float | None = None,
        init: ClassifierModel | None = None,
    ) -> ClassifierModel:
        return train_source_classifier(
            source, report, cfg, hidden_sizes, modes, input_scale, init
        )

    @staticmethod
    @wraps(augmentation_sweep)
    def augmentation_sweep(
        source: LabeledDataset,
        target_train: LabeledDataset,
        target_test: LabeledDataset,
        cfg: PipelineConfig,
        fractions: Sequence[float],
        variants: Sequence[Variant] = (Variant.BASELINE, Variant.GWS, Variant.GWS_DR),
    ) -> SweepRows:
        return augmentation_sweep(
            source, target_train, target_test, cfg, fractions, variants
        )

    @staticmethod
    @wraps(iteration_sweep)
    def iteration_sweep(
        source: LabeledDataset,
        target_train: LabeledDataset,
        target_test: LabeledDataset,
        cfg: PipelineConfig,
        max_iterations: int,
        variants: Sequence[Variant] = (Variant.GWS, Variant.GWS_DR),
    ) -> SweepRows:
        return iteration_sweep(
            source, target_train, target_test, cfg, max_iterations, variants
        )

    def experiment(self, kind: str, experiment: ExperimentConfig) -> ExperimentOutput:
        """Run ``kind`` over every seed of ``experiment`` on the shared manager."""
        return run_experiment(kind, experiment, self.manager)

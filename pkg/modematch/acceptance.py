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

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from modematch.classifier import train
from modematch.constants import (
    AUGMENT_CSV,
    DEFAULT_TRAIN,
    EXPERIMENT_ARTIFACTS,
    ITERATE_CSV,
    MATCHING_BENCHMARK,
    ORTHONORMALITY_TOLERANCE,
    PIPELINE_CSV,
    PIPELINE_JSON,
)
from modematch.dataclasses import MatchConfig, MatchMethod, TrainConfig, Variant
from modematch.dataset import (
    SyntheticSpec,
    generate_sequences,
    generate_synthetic,
)
from modematch.exceptions import ConfigError, ModeMatchException
from modematch.manager import ExperimentManager
from modematch.matcher import (
    best_window_offset,
    class_log_likelihood,
    match_modes,
)
from modematch.network import (
    ClassifierModel,
    feature_scale,
    init_model,
    parameter_count,
    predict_proba,
)
from modematch.pipeline import run_experiment
from modematch.regularizer import dr_grad, dr_loss, square_side
from modematch.types import FilePath, Matrix
from modematch.utils.config import parse_experiment_config
from modematch.utils.decorators import timed
from modematch.utils.export import csv_text, json_text
from modematch.utils.gradcheck import central_differences, relative_error
from modematch.utils.metadata import generate_run_document
from modematch.utils.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.number:>2} {self.name}: {self.detail}"


def model_from_matrix(layer_sizes: Sequence[int], m: Matrix) -> ClassifierModel:
    """Model whose reshaped parameter matrix is ``m`` (padding entries dropped)."""
    count = parameter_count(layer_sizes)
    n = square_side(count)
    if np.shape(m) != (n, n):
        raise ValueError(f"Layers {list(layer_sizes)} reshape to {n}x{n} matrices.")
    model = init_model(layer_sizes, 0)
    return model.with_parameters(np.asarray(m, dtype=np.float64).ravel()[:count])


def spectral_matrix(eigenvalues: Sequence[float], seed: int) -> Matrix:
    """Random rotation of ``diag(eigenvalues)`` plus a random antisymmetric part."""
    rng = rng_for(seed, "spectral-matrix")
    n = len(eigenvalues)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    skew = rng.standard_normal((n, n))
    return q @ np.diag(eigenvalues) @ q.T + (skew - skew.T) / 2


def nearest_mean_model(means: Matrix) -> ClassifierModel:
    """Linear model whose logits rank classes like Euclidean nearest-mean."""
    means = np.asarray(means, dtype=np.float64)
    return ClassifierModel(
        (means.shape[1], means.shape[0]),
        (means,),
        (-0.5 * np.sum(means**2, axis=1),),
    )


def dr_gradient_error(theta: ClassifierModel, phi: ClassifierModel, k: int) -> float:
    flat = theta.flat_parameters()
    numeric = central_differences(
        lambda v: dr_loss(theta.with_parameters(v), phi, k), flat, step=1e-5
    )
    return relative_error(dr_grad(theta, phi, k), numeric)


def gradient_case(k: int) -> tuple[ClassifierModel, ClassifierModel]:
    """A 36-parameter pair whose reshaped spectra have unit gaps."""
    layer_sizes = (3, 4, 4)
    theta = model_from_matrix(layer_sizes, spectral_matrix([6, 5, 4, 3, 2, 1], k))
    phi = model_from_matrix(
        layer_sizes, spectral_matrix([-5.5, 4.5, -3.5, 2.5, -1.5, 0.5], 100 + k)
    )
    return theta, phi


def orthogonal_case() -> tuple[ClassifierModel, ClassifierModel]:
    """16-parameter pair whose top-2 eigenvectors span orthogonal planes."""
    layer_sizes = (3, 3, 1)
    theta = model_from_matrix(layer_sizes, np.diag([4.0, 3.0, 1.0, 0.5]))
    phi = model_from_matrix(layer_sizes, np.diag([0.5, 1.0, 4.0, 3.0]))
    return theta, phi


@timed()
def check_dr_gradient() -> CriterionResult:
    errors = {k: dr_gradient_error(*gradient_case(k), k) for k in (1, 2, 4)}
    worst = max(errors.values())
    return CriterionResult(
        1,
        "directional gradient vs central differences",
        worst < 1e-4,
        ", ".join(f"k={k}: {error:.2e}" for k, error in errors.items()),
    )


def check_dr_identities() -> CriterionResult:
    theta = init_model((3, 4, 4), 7)
    self_loss = dr_loss(theta, theta, 2)
    orthogonal_loss = dr_loss(*orthogonal_case(), 2)
    passed = (
        self_loss < ORTHONORMALITY_TOLERANCE
        and abs(orthogonal_loss - math.sqrt(2)) < ORTHONORMALITY_TOLERANCE
    )
    return CriterionResult(
        2,
        "directional loss identities",
        passed,
        f"self={self_loss:.2e}, orthogonal={orthogonal_loss:.10f}",
    )


def check_likelihood_oracle(cases: int = 100) -> CriterionResult:
    rng = rng_for(0, "likelihood-oracle")
    worst = 0.0
    for case in range(cases):
        num_classes = int(rng.integers(2, 7))
        samples = int(rng.integers(1, 9))
        model = init_model((3, 5, num_classes), case)
        x = 2.0 * rng.standard_normal((samples, 3))
        q = int(rng.integers(num_classes))

        product = float(np.prod(predict_proba(model, x)[:, q]))
        likelihood = math.exp(class_log_likelihood(model, x, q))
        worst = max(worst, abs(likelihood - product) / product)
    return CriterionResult(
        3,
        "log-likelihood vs direct product",
        worst <= 1e-9,
        f"{cases} cases, worst relative error {worst:.2e}",
    )


def benchmark_recovery(seed: int) -> dict[MatchMethod, bool]:
    spec = SyntheticSpec.with_random_map(seed=seed, **MATCHING_BENCHMARK)
    source, target = generate_synthetic(spec)
    layer_sizes = (spec.feature_dim, 16, spec.num_target_classes)
    model = init_model(
        layer_sizes,
        derive_seed(seed, "benchmark-init"),
        input_scale=feature_scale(target.features),
    )
    cfg = TrainConfig(**DEFAULT_TRAIN["baseline"], seed=seed)
    model, _ = train(model, target, cfg)

    recovered = {}
    for method in MatchMethod:
        report = match_modes(
            model, source, spec.num_target_classes, MatchConfig(method, seed=seed)
        )
        recovered[method] = report.matched == spec.ground_truth_map
    return recovered


@timed()
def check_mode_recovery(seeds: int = 20) -> CriterionResult:
    hits = {method: 0 for method in MatchMethod}
    for seed in range(seeds):
        for method, recovered in benchmark_recovery(seed).items():
            hits[method] += recovered
    needed = math.ceil(0.9 * seeds)
    return CriterionResult(
        4,
        "mode matching recovers the ground-truth map",
        all(count >= needed for count in hits.values()),
        ", ".join(f"{method}: {count}/{seeds}" for method, count in hits.items()),
    )


def trimming_hits(cases: int = 100, seed: int = 0) -> int:
    span, length = 8, 24
    spec = SyntheticSpec.with_random_map(
        seed=seed,
        num_source_classes=4,
        num_target_classes=4,
        feature_dim=8,
        samples_per_source_class=cases // 4 + 1,
        samples_per_target_class=2,
        class_separation=4.0,
        target_perturbation=0.0,
        noise_scale=0.5,
    )
    source, target, offsets = generate_sequences(spec, length, span, span // 2)
    model = nearest_mean_model(
        np.stack(
            [target.features[target.labels == q].mean(axis=(0, 1)) for q in range(4)]
        )
    )
    mate_of = {p: q for q, p in enumerate(spec.ground_truth_map)}

    hits = 0
    for row in range(cases):
        q = mate_of[int(source.labels[row])]
        found = best_window_offset(model, source.features[row], q, span, span // 2)
        hits += found == offsets[row]
    return hits


@timed()
def check_trimming(cases: int = 100) -> CriterionResult:
    hits = trimming_hits(cases)
    return CriterionResult(
        10,
        "trimming recovers the planted span",
        hits >= 0.9 * cases,
        f"{hits}/{cases} exact offsets",
    )


def _read_csv(out_dir: FilePath, name: str) -> pd.DataFrame:
    path = os.path.join(out_dir, name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing artifact {name}")
    return pd.read_csv(path)


def _means(frame: pd.DataFrame, column: str = "accuracy") -> pd.Series:
    return frame.groupby(["variant", "fraction_or_iter"])[column].mean()


def check_table_ordering(out_dir: FilePath) -> CriterionResult:
    frame = _read_csv(out_dir, PIPELINE_CSV)
    means = frame.groupby("variant")["accuracy"].mean()
    baseline, gws, gws_dr = (
        means[str(Variant.BASELINE)],
        means[str(Variant.GWS)],
        means[str(Variant.GWS_DR)],
    )
    return CriterionResult(
        5,
        "baseline < +GWS <= +GWS+DR",
        gws - baseline >= 0.01 and gws <= gws_dr,
        f"baseline={baseline:.4f}, gws={gws:.4f}, gws_dr={gws_dr:.4f}",
    )


def check_inverted_u(out_dir: FilePath) -> CriterionResult:
    means = _means(_read_csv(out_dir, AUGMENT_CSV))
    gws = means[str(Variant.GWS)].sort_index()
    gws_dr = means[str(Variant.GWS_DR)].sort_index()
    peak = gws.idxmax()
    interior = peak not in (gws.index[0], gws.index[-1])
    above_ends = gws[peak] > gws.iloc[0] and gws[peak] > gws.iloc[-1]
    smoother = gws_dr.iloc[-1] >= gws.iloc[-1]
    curve = ", ".join(f"{fraction:g}: {value:.4f}" for fraction, value in gws.items())
    return CriterionResult(
        6,
        "GWS accuracy peaks at an interior budget",
        interior and above_ends and smoother,
        f"gws {{{curve}}}, gws_dr at end {gws_dr.iloc[-1]:.4f}",
    )


def check_random_control(out_dir: FilePath) -> CriterionResult:
    means = _means(_read_csv(out_dir, AUGMENT_CSV))
    random_value = means[(str(Variant.RANDOM), 1.0)]
    gws_value = means[(str(Variant.GWS), 1.0)]
    return CriterionResult(
        7,
        "random augmentation falls below GWS",
        random_value < gws_value,
        f"random={random_value:.4f}, gws={gws_value:.4f} at 1x",
    )


def first_round_gains(out_dir: FilePath) -> pd.Series:
    """Seed-mean accuracy after round 1 minus round 0, per iterated variant."""
    means = _means(_read_csv(out_dir, ITERATE_CSV)).unstack("fraction_or_iter")
    return means[1] - means[0]


def check_separability(out_dir: FilePath) -> CriterionResult:
    frame = _read_csv(out_dir, PIPELINE_CSV)
    means = frame.groupby("variant")["separability"].mean()
    baseline, gws_dr = means[str(Variant.BASELINE)], means[str(Variant.GWS_DR)]
    return CriterionResult(
        8,
        "GWS+DR embeddings at least as separable as baseline",
        gws_dr >= baseline,
        f"baseline={baseline:.4f}, gws_dr={gws_dr:.4f}",
    )


def _read_json(out_dir: FilePath, name: str) -> dict:
    path = os.path.join(out_dir, name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing artifact {name}")
    with open(path, "r", encoding="utf-8") as json_file:
        return json.load(json_file)


def check_source_generalization(out_dir: FilePath) -> CriterionResult:
    records = _read_json(out_dir, PIPELINE_JSON)["seeds"]
    source = float(np.mean([record["source_holdout_accuracy"] for record in records]))
    target = float(np.mean([record["baseline_accuracy"] for record in records]))
    return CriterionResult(
        9,
        "source classifier generalizes at least as well as the baseline",
        source >= target,
        f"phi holdout={source:.4f}, theta baseline={target:.4f}",
    )


def _read_text(out_dir: FilePath, name: str) -> str:
    with open(os.path.join(out_dir, name), "r", encoding="utf-8", newline="") as file:
        return file.read()


def rerun_differences(
    out_dir: FilePath, kind: str, manager: ExperimentManager
) -> list[str]:
    """Artifacts of ``kind`` that a rerun from their config echo does not reproduce."""
    csv_name, json_name = EXPERIMENT_ARTIFACTS[kind]
    document = _read_json(out_dir, json_name)
    try:
        config_echo = document["config"]
    except KeyError:
        raise ConfigError(f"{json_name} carries no config echo")
    output = run_experiment(kind, parse_experiment_config(config_echo), manager)
    rerun = {
        csv_name: csv_text(output.rows.to_dataframe()),
        json_name: json_text(
            generate_run_document(config_echo, output.partial, output.records)
        ),
    }
    return [name for name, text in rerun.items() if text != _read_text(out_dir, name)]


def check_determinism(
    out_dir: FilePath, manager: ExperimentManager
) -> CriterionResult:
    """
    Rerun the pipeline and every sweep whose run document is present; each
    CSV and JSON artifact must come back byte-identical.
    """
    kinds = ["pipeline"] + [
        kind
        for kind, (_, json_name) in EXPERIMENT_ARTIFACTS.items()
        if kind != "pipeline" and os.path.exists(os.path.join(out_dir, json_name))
    ]
    differing = [
        name for kind in kinds for name in rerun_differences(out_dir, kind, manager)
    ]
    return CriterionResult(
        11,
        "rerunning each config reproduces its artifacts",
        not differing,
        f"{', '.join(kinds)} byte-identical"
        if not differing
        else f"differ: {', '.join(differing)}",
    )


def _guarded(
    number: int, name: str, check: Callable[[], CriterionResult]
) -> CriterionResult:
    try:
        return check()
    except (FileNotFoundError, KeyError, ValueError, ModeMatchException) as err:
        return CriterionResult(number, name, False, str(err))


@timed()
def run_checks(
    out_dir: FilePath, manager: ExperimentManager | None = None
) -> list[CriterionResult]:
    manager = manager or ExperimentManager()
    checks: list[tuple[int, str, Callable[[], CriterionResult]]] = [
        (1, "directional gradient", check_dr_gradient),
        (2, "directional loss identities", check_dr_identities),
        (3, "likelihood oracle", check_likelihood_oracle),
        (4, "mode recovery", check_mode_recovery),
        (5, "ordering", lambda: check_table_ordering(out_dir)),
        (6, "inverted-U", lambda: check_inverted_u(out_dir)),
        (7, "random control", lambda: check_random_control(out_dir)),
        (8, "separability", lambda: check_separability(out_dir)),
        (9, "source generalization", lambda: check_source_generalization(out_dir)),
        (10, "trimming", check_trimming),
        (11, "determinism", lambda: check_determinism(out_dir, manager)),
    ]
    results = []
    for number, name, check in checks:
        result = _guarded(number, name, check)
        logger.info("%s", result)
        results.append(result)
    return results

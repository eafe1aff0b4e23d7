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

from dataclasses import dataclass, field, replace
from enum import IntEnum, auto
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from modematch.constants import (
    DEFAULT_DR_GRAD_CLIP,
    DEFAULT_HIDDEN_SIZES,
    DEFAULT_SOURCE_HOLDOUT_FRACTION,
    DEFAULT_SWEEP_FRACTIONS,
    DEFAULT_SWEEP_SEEDS,
    DEFAULT_TRAIN,
    REPORT_CSV_COLUMNS,
    SWEEP_CSV_COLUMNS,
)
from modematch.exceptions import ValidationError
from modematch.types import AutoStrEnum, IndexArray, Matrix
from modematch.utils.seeding import derive_seed

if TYPE_CHECKING:
    from modematch.network import ClassifierModel


class MatchMethod(AutoStrEnum):
    LIKELIHOOD = auto()
    COUNT = auto()


class SourceInit(AutoStrEnum):
    """Where training of the source classifier starts."""

    BASELINE = auto()
    SCRATCH = auto()


class Variant(AutoStrEnum):
    BASELINE = auto()
    DR = auto()
    GWS = auto()
    GWS_DR = auto()
    RANDOM = auto()
    SECOND_BEST = auto()
    SECOND_BEST_DR = auto()

    @property
    def flags(self) -> dict[str, bool] | None:
        """PipelineConfig switches of the variant, None for the baseline."""
        return {
            Variant.BASELINE: None,
            Variant.DR: {"use_gws": False, "use_dr": True},
            Variant.GWS: {"use_gws": True, "use_dr": False},
            Variant.GWS_DR: {"use_gws": True, "use_dr": True},
            Variant.RANDOM: {"use_gws": True, "use_dr": False, "random_modes": True},
            Variant.SECOND_BEST: {
                "use_gws": True,
                "use_dr": False,
                "use_second_best": True,
            },
            Variant.SECOND_BEST_DR: {
                "use_gws": True,
                "use_dr": True,
                "use_second_best": True,
            },
        }[self]


class ExitCode(IntEnum):
    SUCCESS = 0
    CHECK_FAILED = 1
    INVALID = 2
    PARTIAL = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DEFAULT_TRAIN["baseline"]["epochs"]
    batch_size: int = DEFAULT_TRAIN["baseline"]["batch_size"]
    learning_rate: float = DEFAULT_TRAIN["baseline"]["learning_rate"]
    l2_weight: float = DEFAULT_TRAIN["baseline"]["l2_weight"]
    dr_weight: float = 0.0
    dr_rank: int | None = None
    dr_grad_clip: float | None = DEFAULT_DR_GRAD_CLIP
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive.")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive.")
        if self.l2_weight < 0 or self.dr_weight < 0:
            raise ValidationError("l2_weight and dr_weight must be non-negative.")
        if self.dr_weight > 0 and (self.dr_rank is None or self.dr_rank < 1):
            raise ValidationError("dr_weight > 0 requires a positive dr_rank.")
        if self.dr_grad_clip is not None and self.dr_grad_clip <= 0:
            raise ValidationError("dr_grad_clip must be positive or None.")

    @property
    def uses_dr(self) -> bool:
        return self.dr_weight > 0


@dataclass(frozen=True)
class MatchConfig:
    method: MatchMethod = MatchMethod.COUNT
    samples_per_class: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", MatchMethod(self.method))
        if self.samples_per_class is not None and self.samples_per_class < 1:
            raise ValidationError("samples_per_class must be positive.")


@dataclass(frozen=True)
class TrimConfig:
    window: int
    stride: int

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValidationError("Trim window and stride must be positive.")


@dataclass(frozen=True)
class PipelineConfig:
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN_SIZES
    baseline_cfg: TrainConfig = field(
        default_factory=lambda: TrainConfig(**DEFAULT_TRAIN["baseline"])
    )
    source_cfg: TrainConfig = field(
        default_factory=lambda: TrainConfig(**DEFAULT_TRAIN["source"])
    )
    retrain_cfg: TrainConfig = field(
        default_factory=lambda: TrainConfig(**DEFAULT_TRAIN["retrain"])
    )
    match_cfg: MatchConfig = field(default_factory=MatchConfig)
    augment_budget: int = 10
    iterations: int = 1
    use_gws: bool = True
    use_dr: bool = True
    use_second_best: bool = False
    random_modes: bool = False
    mode_override: tuple[int, ...] | None = None
    trim: TrimConfig | None = None
    source_holdout_fraction: float = DEFAULT_SOURCE_HOLDOUT_FRACTION
    source_init: SourceInit = SourceInit.BASELINE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        object.__setattr__(self, "source_init", SourceInit(self.source_init))
        if self.mode_override is not None:
            object.__setattr__(self, "mode_override", tuple(self.mode_override))

        if self.iterations < 1:
            raise ValidationError("iterations must be at least 1.")
        if self.augment_budget < 1:
            raise ValidationError("augment_budget must be at least 1.")
        if any(size < 1 for size in self.hidden_sizes):
            raise ValidationError("Hidden layer sizes must be positive.")
        if not (self.use_gws or self.use_dr):
            raise ValidationError(
                "Nothing to retrain: enable use_gws, use_dr or both."
            )
        mode_sources = [
            self.use_second_best,
            self.random_modes,
            self.mode_override is not None,
        ]
        if sum(mode_sources) > 1:
            raise ValidationError(
                "use_second_best, random_modes and mode_override are exclusive."
            )
        if self.random_modes and self.use_dr:
            raise ValidationError("The random-modes control runs without DR.")
        if self.use_dr and self.retrain_cfg.dr_rank is None:
            raise ValidationError("use_dr requires retrain_cfg.dr_rank.")
        if not 0 <= self.source_holdout_fraction < 1:
            raise ValidationError("source_holdout_fraction must lie in [0, 1).")

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Same config with every stage seed derived from ``seed``."""
        return replace(
            self,
            seed=seed,
            baseline_cfg=replace(self.baseline_cfg, seed=derive_seed(seed, "baseline")),
            source_cfg=replace(self.source_cfg, seed=derive_seed(seed, "source")),
            retrain_cfg=replace(self.retrain_cfg, seed=derive_seed(seed, "retrain")),
            match_cfg=replace(self.match_cfg, seed=derive_seed(seed, "match")),
        )

    def for_variant(self, variant: Variant) -> "PipelineConfig":
        flags = Variant(variant).flags
        if flags is None:
            raise ValidationError("The baseline variant has no retraining config.")
        random_modes = flags.get("random_modes", False)
        use_second_best = flags.get("use_second_best", False)
        return replace(
            self,
            use_gws=flags["use_gws"],
            use_dr=flags["use_dr"],
            random_modes=random_modes,
            use_second_best=use_second_best,
            mode_override=(
                None if random_modes or use_second_best else self.mode_override
            ),
        )


@dataclass(frozen=True)
class DataConfig:
    num_source_classes: int = 12
    num_target_classes: int = 8
    feature_dim: int = 8
    samples_per_source_class: int = 150
    samples_per_target_class: int = 80
    class_separation: float = 4.0
    target_perturbation: float = 1.84
    noise_scale: float = 1.8
    source_noise_scale: float | None = None
    train_fraction: float = 0.0625
    source_path: str | None = None
    target_path: str | None = None

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValidationError("train_fraction must lie in (0, 1).")
        if (self.source_path is None) != (self.target_path is None):
            raise ValidationError("source_path and target_path go together.")

    @property
    def from_files(self) -> bool:
        return self.source_path is not None


@dataclass(frozen=True)
class SweepConfig:
    fractions: tuple[float, ...] = DEFAULT_SWEEP_FRACTIONS
    max_iterations: int = 4
    pipeline_variants: tuple[Variant, ...] = (
        Variant.BASELINE,
        Variant.DR,
        Variant.GWS,
        Variant.GWS_DR,
    )
    augment_variants: tuple[Variant, ...] = (
        Variant.BASELINE,
        Variant.GWS,
        Variant.GWS_DR,
        Variant.RANDOM,
    )
    iterate_variants: tuple[Variant, ...] = (Variant.GWS, Variant.GWS_DR)

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(self.fractions))
        for name in ("pipeline_variants", "augment_variants", "iterate_variants"):
            object.__setattr__(
                self, name, tuple(Variant(variant) for variant in getattr(self, name))
            )
        if list(self.fractions) != sorted(self.fractions) or not self.fractions:
            raise ValidationError("Sweep fractions must be non-empty and ascending.")
        if any(fraction <= 0 for fraction in self.fractions):
            raise ValidationError("Sweep fractions must be positive.")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1.")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: tuple[int, ...] = DEFAULT_SWEEP_SEEDS

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(seed) for seed in self.seeds))
        if not self.seeds:
            raise ValidationError("At least one seed is required.")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("Seeds must be distinct.")


@dataclass(frozen=True, eq=False)
class DRContext:
    m_theta: Matrix
    m_phi: Matrix
    e_theta_hat: Matrix
    e_phi_hat: Matrix
    k: int
    pad_count: int
    sign_alignment: np.ndarray
    eigenvalues_theta: np.ndarray
    eigenvalues_phi: np.ndarray

    @property
    def n(self) -> int:
        return self.m_theta.shape[0]

    @property
    def cross(self) -> Matrix:
        """Aligned ``Ê_θᵀ Ê_φ``."""
        return self.e_theta_hat.T @ self.e_phi_hat


@dataclass
class TrainTrace:
    losses: list[float] = field(default_factory=list)
    dr_losses: list[float] = field(default_factory=list)
    dr_skipped: int = 0
    spectra: list[list[float]] = field(default_factory=list)
    eigengaps: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "losses": self.losses,
            "dr_losses": self.dr_losses,
            "dr_skipped": self.dr_skipped,
            "spectra": self.spectra,
            "eigengaps": self.eigengaps,
        }


@dataclass(frozen=True)
class MatchScore:
    target_class: int
    source_class: int
    log_likelihood: float
    argmax_count: int
    samples_used: int
    mean_target_prob: float


@dataclass(frozen=True)
class ModeMatchReport:
    rankings: tuple[tuple[MatchScore, ...], ...]
    matched: tuple[int, ...]
    method: MatchMethod
    source_class_names: tuple[str, ...]
    target_class_names: tuple[str, ...]
    fallbacks: tuple[int, ...] = ()

    def ranking(self, target_class: int) -> tuple[MatchScore, ...]:
        return self.rankings[target_class]

    def matched_names(self) -> dict[str, str]:
        return {
            self.target_class_names[q]: self.source_class_names[p]
            for q, p in enumerate(self.matched)
        }

    def to_dataframe(self) -> pd.DataFrame:
        rows = [
            (
                score.target_class,
                rank,
                score.source_class,
                score.log_likelihood,
                score.argmax_count,
                score.mean_target_prob,
            )
            for ranking in self.rankings
            for rank, score in enumerate(ranking, start=1)
        ]
        return pd.DataFrame(rows, columns=list(REPORT_CSV_COLUMNS))

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": str(self.method),
            "matched": list(self.matched),
            "matched_names": self.matched_names(),
            "fallbacks": list(self.fallbacks),
            "table": self.to_dataframe().to_dict(orient="records"),
        }


@dataclass
class RoundRecord:
    round_index: int
    accuracy: float
    confusion: IndexArray
    separability: float
    trace: TrainTrace
    used_sample_ids: list[int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "round_index": self.round_index,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "separability": self.separability,
            "trace": self.trace.to_dict(),
            "used_sample_ids": self.used_sample_ids,
        }


@dataclass
class PreparedRun:
    baseline_model: "ClassifierModel"
    baseline_trace: TrainTrace
    baseline_accuracy: float
    baseline_confusion: IndexArray
    baseline_separability: float
    report: ModeMatchReport
    source_model: "ClassifierModel"
    source_modes: tuple[int, ...]
    source_holdout_accuracy: float | None


@dataclass
class PipelineResult:
    baseline_model: "ClassifierModel"
    source_model: "ClassifierModel | None"
    final_model: "ClassifierModel"
    report: ModeMatchReport
    modes: tuple[int, ...]
    baseline_accuracy: float
    baseline_confusion: IndexArray
    baseline_separability: float
    source_holdout_accuracy: float | None
    baseline_trace: TrainTrace
    rounds: list[RoundRecord] = field(default_factory=list)
    partial: bool = False

    @property
    def final_accuracy(self) -> float:
        return self.rounds[-1].accuracy if self.rounds else self.baseline_accuracy

    @property
    def final_separability(self) -> float:
        if self.rounds:
            return self.rounds[-1].separability
        return self.baseline_separability

    def to_dict(self) -> dict[str, Any]:
        return {
            "partial": self.partial,
            "modes": list(self.modes),
            "baseline_accuracy": self.baseline_accuracy,
            "baseline_confusion": self.baseline_confusion.tolist(),
            "baseline_separability": self.baseline_separability,
            "source_holdout_accuracy": self.source_holdout_accuracy,
            "baseline_trace": self.baseline_trace.to_dict(),
            "report": self.report.to_dict(),
            "rounds": [record.to_dict() for record in self.rounds],
        }


class SweepRows(list):
    def add(
        self,
        variant: Variant,
        fraction_or_iter: float,
        seed: int,
        accuracy: float,
        separability: float,
    ) -> None:
        self.append(
            {
                "variant": str(variant),
                "fraction_or_iter": fraction_or_iter,
                "seed": seed,
                "accuracy": accuracy,
                "separability": separability,
            }
        )

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(list(self), columns=list(SWEEP_CSV_COLUMNS))


@dataclass
class ExperimentOutput:
    rows: SweepRows
    records: list[dict[str, Any]]
    partial: bool = False

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

import math
from dataclasses import dataclass, field
from functools import wraps
from typing import Iterable, Sequence

import numpy as np

from modematch.constants import MEAN_PLACEMENT_ATTEMPTS
from modematch.exceptions import InvalidSyntheticSpec, ValidationError
from modematch.manager import ExperimentManager
from modematch.module import Module
from modematch.types import FilePath, IndexArray, Matrix, Vector
from modematch.utils.seeding import rng_for
from modematch.utils.text_format import read_dataset, serialize_dataset


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """
    Named classes plus fixed-dimension samples.

    ``features`` is ``(n, d)`` for flat datasets and ``(n, T, d)`` for
    sequence datasets. ``sample_ids`` identify samples across relabeling and
    default to the row order.
    """

    class_names: tuple[str, ...]
    features: Matrix
    labels: IndexArray
    sample_ids: IndexArray | None = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        sample_ids = (
            np.arange(len(labels), dtype=np.int64)
            if self.sample_ids is None
            else np.asarray(self.sample_ids, dtype=np.int64)
        )

        if features.ndim not in (2, 3):
            raise ValidationError(
                "Features must be (n, d) vectors or (n, T, d) sequences, "
                f"got shape {features.shape}."
            )
        if labels.shape != (features.shape[0],) or sample_ids.shape != labels.shape:
            raise ValidationError(
                "Features, labels and sample ids must describe the same samples."
            )
        if features.shape[-1] < 1:
            raise ValidationError("Feature dimension must be positive.")
        if any(("," in name or not name or name != name.strip())
               for name in self.class_names):
            raise ValidationError(
                "Class names must be non-empty, comma-free and unpadded."
            )

        num_classes = len(self.class_names)
        if num_classes == 0:
            raise ValidationError("A dataset needs at least one class.")
        if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
            bad = int(np.flatnonzero((labels < 0) | (labels >= num_classes))[0])
            raise ValidationError(
                f"Sample {bad} has label {labels[bad]} outside [0, {num_classes})."
            )

        counts = np.bincount(labels, minlength=num_classes)
        if (empty := np.flatnonzero(counts == 0)).size:
            raise ValidationError(
                f"Class '{self.class_names[empty[0]]}' has no samples."
            )

        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "sample_ids", _frozen(sample_ids))

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.class_names == other.class_names
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[-1]

    @property
    def sequence_length(self) -> int | None:
        return self.features.shape[1] if self.features.ndim == 3 else None

    @property
    def class_counts(self) -> IndexArray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def indices_of(self, label: int) -> IndexArray:
        return np.flatnonzero(self.labels == label)

    def pooled_features(self) -> Matrix:
        """Flat ``(n, d)`` view; sequences are mean-pooled over time."""
        if self.features.ndim == 3:
            return self.features.mean(axis=1)
        return self.features

    def subset(self, indices: Iterable[int]) -> "LabeledDataset":
        return subset_dataset(self, indices)


@dataclass(frozen=True)
class SyntheticSpec:
    num_source_classes: int
    num_target_classes: int
    feature_dim: int
    samples_per_source_class: int
    samples_per_target_class: int
    class_separation: float
    target_perturbation: float
    noise_scale: float
    ground_truth_map: tuple[int, ...]
    seed: int = 0
    source_noise_scale: float | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "ground_truth_map", tuple(self.ground_truth_map))
        validate_spec(self)

    @classmethod
    def with_random_map(cls, seed: int = 0, **fields) -> "SyntheticSpec":
        """Spec whose ground-truth map is a seeded injective draw."""
        _check_class_counts(fields["num_source_classes"], fields["num_target_classes"])
        rng = rng_for(seed, "ground-truth-map")
        mapping = rng.choice(
            fields["num_source_classes"],
            size=fields["num_target_classes"],
            replace=False,
        )
        return cls(ground_truth_map=tuple(int(p) for p in mapping), seed=seed, **fields)


def _check_class_counts(num_source: int, num_target: int) -> None:
    if num_target < 1 or num_source < 1:
        raise InvalidSyntheticSpec(
            "Class counts N and M must be positive, "
            f"got N={num_source} and M={num_target}."
        )
    if num_target > num_source:
        raise InvalidSyntheticSpec(
            f"num_target_classes (M={num_target}) must not exceed "
            f"num_source_classes (N={num_source})."
        )


def validate_spec(spec: SyntheticSpec) -> None:
    _check_class_counts(spec.num_source_classes, spec.num_target_classes)
    if spec.feature_dim < 1:
        raise InvalidSyntheticSpec("feature_dim must be positive.")
    if spec.samples_per_source_class < 1 or spec.samples_per_target_class < 1:
        raise InvalidSyntheticSpec("Every class needs at least one sample.")
    if spec.class_separation <= 0 or spec.noise_scale <= 0:
        raise InvalidSyntheticSpec("class_separation and noise_scale must be positive.")
    if spec.source_noise_scale is not None and spec.source_noise_scale <= 0:
        raise InvalidSyntheticSpec("source_noise_scale must be positive.")
    if not 0 <= spec.target_perturbation < spec.class_separation / 2:
        raise InvalidSyntheticSpec(
            "target_perturbation must lie in [0, class_separation / 2), got "
            f"{spec.target_perturbation} with class_separation {spec.class_separation}."
        )
    if len(spec.ground_truth_map) != spec.num_target_classes:
        raise InvalidSyntheticSpec("ground_truth_map must cover every target class.")
    if any(not 0 <= p < spec.num_source_classes for p in spec.ground_truth_map):
        raise InvalidSyntheticSpec("ground_truth_map must map into source classes.")


def place_class_means(spec: SyntheticSpec) -> Matrix:
    """
    Source class means pairwise at least ``class_separation`` apart.

    On a line (``feature_dim == 1``) the means are evenly spaced around the
    origin; otherwise they lie on a sphere, placed by rejection sampling.
    """
    n, d = spec.num_source_classes, spec.feature_dim
    if d == 1:
        offsets = np.arange(n, dtype=np.float64) - (n - 1) / 2
        return (spec.class_separation * offsets)[:, None]

    radius = spec.class_separation * max(1.0, n ** (1.0 / (d - 1)))
    rng = rng_for(spec.seed, "class-means")

    means: list[Vector] = []
    for index in range(n):
        for _ in range(MEAN_PLACEMENT_ATTEMPTS):
            direction = rng.standard_normal(d)
            norm = np.linalg.norm(direction)
            if norm == 0:
                continue
            candidate = radius * direction / norm
            if all(
                np.linalg.norm(candidate - other) >= spec.class_separation
                for other in means
            ):
                means.append(candidate)
                break
        else:
            raise InvalidSyntheticSpec(
                f"Could not place class mean {index} within "
                f"{MEAN_PLACEMENT_ATTEMPTS} attempts."
            )

    return np.stack(means)


def target_class_means(spec: SyntheticSpec, source_means: Matrix) -> Matrix:
    rng = rng_for(spec.seed, "target-means")
    means = []
    for mate in spec.ground_truth_map:
        direction = rng.standard_normal(spec.feature_dim)
        norm = np.linalg.norm(direction)
        offset = (
            spec.target_perturbation * direction / norm
            if norm > 0 and spec.target_perturbation > 0
            else np.zeros(spec.feature_dim)
        )
        means.append(source_means[mate] + offset)
    return np.stack(means)


def _draw(rng: np.random.Generator, means: Matrix, per_class: int, scale: float):
    labels = np.repeat(np.arange(len(means)), per_class)
    noise = rng.standard_normal((len(labels), means.shape[1])) * scale
    return means[labels] + noise, labels


def generate_synthetic(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset]:
    validate_spec(spec)

    source_means = place_class_means(spec)
    target_means = target_class_means(spec, source_means)

    source_features, source_labels = _draw(
        rng_for(spec.seed, "source-samples"),
        source_means,
        spec.samples_per_source_class,
        spec.source_noise_scale or spec.noise_scale,
    )
    target_features, target_labels = _draw(
        rng_for(spec.seed, "target-samples"),
        target_means,
        spec.samples_per_target_class,
        spec.noise_scale,
    )

    source = LabeledDataset(
        tuple(f"source_{p}" for p in range(spec.num_source_classes)),
        source_features,
        source_labels,
    )
    target = LabeledDataset(
        tuple(f"target_{q}" for q in range(spec.num_target_classes)),
        target_features,
        target_labels,
    )
    return source, target


def generate_sequences(
    spec: SyntheticSpec,
    sequence_length: int,
    span_length: int,
    offset_stride: int = 1,
) -> tuple[LabeledDataset, LabeledDataset, IndexArray]:
    """
    Sequence source data: each sample is zero-mean noise of length
    ``sequence_length`` with one active span of the class signal planted at a
    seeded offset drawn from multiples of ``offset_stride``. Target samples are
    spans alone (length ``span_length``).

    Returns source, target and the planted source offsets.
    """
    if not 1 <= span_length <= sequence_length:
        raise ValidationError("span_length must lie in [1, sequence_length].")
    if offset_stride < 1:
        raise ValidationError("offset_stride must be positive.")

    validate_spec(spec)
    source_means = place_class_means(spec)
    target_means = target_class_means(spec, source_means)
    source_scale = spec.source_noise_scale or spec.noise_scale

    rng = rng_for(spec.seed, "sequences")
    offsets_grid = np.arange(0, sequence_length - span_length + 1, offset_stride)

    labels = np.repeat(
        np.arange(spec.num_source_classes), spec.samples_per_source_class
    )
    sequences = rng.standard_normal((len(labels), sequence_length, spec.feature_dim))
    sequences *= source_scale
    offsets = rng.choice(offsets_grid, size=len(labels))
    for row, (label, offset) in enumerate(zip(labels, offsets)):
        sequences[row, offset: offset + span_length] += source_means[label]

    target_labels = np.repeat(
        np.arange(spec.num_target_classes), spec.samples_per_target_class
    )
    target_sequences = target_means[target_labels][:, None, :] + rng.standard_normal(
        (len(target_labels), span_length, spec.feature_dim)
    ) * spec.noise_scale

    source = LabeledDataset(
        tuple(f"source_{p}" for p in range(spec.num_source_classes)),
        sequences,
        labels,
    )
    target = LabeledDataset(
        tuple(f"target_{q}" for q in range(spec.num_target_classes)),
        target_sequences,
        target_labels,
    )
    return source, target, offsets.astype(np.int64)


def subset_dataset(ds: LabeledDataset, indices: Iterable[int]) -> LabeledDataset:
    """
    Rows ``indices`` of ``ds`` under the same class list and label indices.

    The label space is kept so that splits stay combinable, hence every
    class must keep at least one row; use ``filter_classes`` to drop classes.
    """
    indices = np.asarray(list(indices), dtype=np.int64)
    if missing := sorted(set(range(ds.num_classes)) - set(ds.labels[indices].tolist())):
        raise ValidationError(
            f"Subset leaves class '{ds.class_names[missing[0]]}' without samples; "
            "drop it with filter_classes first."
        )
    return LabeledDataset(
        ds.class_names,
        ds.features[indices],
        ds.labels[indices],
        ds.sample_ids[indices],
    )


def filter_classes(ds: LabeledDataset, classes: Sequence[int]) -> LabeledDataset:
    """Keep only ``classes`` (re-indexed in the given order)."""
    remap = {int(c): i for i, c in enumerate(classes)}
    keep = np.flatnonzero(np.isin(ds.labels, list(remap)))
    return LabeledDataset(
        tuple(ds.class_names[c] for c in classes),
        ds.features[keep],
        np.array([remap[int(label)] for label in ds.labels[keep]], dtype=np.int64),
        ds.sample_ids[keep],
    )


def concat_datasets(first: LabeledDataset, second: LabeledDataset) -> LabeledDataset:
    if first.class_names != second.class_names:
        raise ValidationError("Only datasets with identical classes can be combined.")
    if first.features.shape[1:] != second.features.shape[1:]:
        raise ValidationError(
            f"Sample shapes differ: {first.features.shape[1:]} "
            f"vs {second.features.shape[1:]}."
        )
    return LabeledDataset(
        first.class_names,
        np.concatenate([first.features, second.features]),
        np.concatenate([first.labels, second.labels]),
        np.concatenate([first.sample_ids, second.sample_ids]),
    )


def split_dataset(
    ds: LabeledDataset, fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Per-class stratified split, ``ceil(fraction * n_c)`` train samples each."""
    if not 0 < fraction < 1:
        raise ValidationError(f"Split fraction must lie in (0, 1), got {fraction}.")

    counts = ds.class_counts
    if (single := np.flatnonzero(counts < 2)).size:
        raise ValidationError(
            f"Class '{ds.class_names[single[0]]}' has a single sample "
            "and cannot be split."
        )

    rng = rng_for(seed, "split")
    train_indices, test_indices = [], []
    for label in range(ds.num_classes):
        members = rng.permutation(ds.indices_of(label))
        # Keep at least one test sample per class.
        cut = min(math.ceil(fraction * len(members)), len(members) - 1)
        train_indices.extend(sorted(members[:cut]))
        test_indices.extend(sorted(members[cut:]))

    return subset_dataset(ds, train_indices), subset_dataset(ds, test_indices)


def load_dataset(path: FilePath) -> LabeledDataset:
    class_names, features, labels = read_dataset(path)
    return LabeledDataset(class_names, features, labels)


def write_dataset(ds: LabeledDataset, path: FilePath) -> None:
    text = serialize_dataset(ds.class_names, ds.features, ds.labels)
    with open(path, "w", encoding="utf-8", newline="\n") as dataset_file:
        dataset_file.write(text)


class Dataset(Module):
    def __init__(self, manager: ExperimentManager):
        self.manager = manager

    @staticmethod
    @wraps(generate_synthetic)
    def generate(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset]:
        return generate_synthetic(spec)

    @staticmethod
    @wraps(generate_sequences)
    def generate_sequences(
        spec: SyntheticSpec,
        sequence_length: int,
        span_length: int,
        offset_stride: int = 1,
    ) -> tuple[LabeledDataset, LabeledDataset, IndexArray]:
        return generate_sequences(spec, sequence_length, span_length, offset_stride)

    @staticmethod
    @wraps(load_dataset)
    def load(path: FilePath) -> LabeledDataset:
        return load_dataset(path)

    @staticmethod
    @wraps(write_dataset)
    def write(ds: LabeledDataset, path: FilePath) -> None:
        write_dataset(ds, path)

    @staticmethod
    @wraps(split_dataset)
    def split(
        ds: LabeledDataset, fraction: float, seed: int
    ) -> tuple[LabeledDataset, LabeledDataset]:
        return split_dataset(ds, fraction, seed)

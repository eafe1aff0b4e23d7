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

import numpy as np
import pytest

from modematch.dataclasses import (
    DataConfig,
    ExperimentConfig,
    MatchConfig,
    PipelineConfig,
    SweepConfig,
    TrainConfig,
)
from modematch.dataset import SyntheticSpec, generate_synthetic, split_dataset
from modematch.network import ClassifierModel, feature_scale, init_model

SMALL_SPEC = {
    "num_source_classes": 5,
    "num_target_classes": 3,
    "feature_dim": 3,
    "samples_per_source_class": 30,
    "samples_per_target_class": 10,
    "class_separation": 5.0,
    "target_perturbation": 0.5,
    "noise_scale": 0.6,
}

FAST_TRAIN = {"epochs": 30, "batch_size": 8, "learning_rate": 0.05, "l2_weight": 1e-3}


@pytest.fixture
def small_spec() -> SyntheticSpec:
    return SyntheticSpec.with_random_map(seed=3, **SMALL_SPEC)


@pytest.fixture
def small_data(small_spec):
    source, target = generate_synthetic(small_spec)
    target_train, target_test = split_dataset(target, 0.5, seed=11)
    return source, target_train, target_test


@pytest.fixture
def small_model(small_data) -> ClassifierModel:
    _, target_train, _ = small_data
    return init_model(
        (3, 6, 3), seed=5, input_scale=feature_scale(target_train.features)
    )


@pytest.fixture
def fast_pipeline_config() -> PipelineConfig:
    return PipelineConfig(
        hidden_sizes=(6,),
        baseline_cfg=TrainConfig(**FAST_TRAIN),
        source_cfg=TrainConfig(**FAST_TRAIN),
        retrain_cfg=TrainConfig(**FAST_TRAIN, dr_weight=1.0, dr_rank=2),
        match_cfg=MatchConfig(),
        augment_budget=3,
        iterations=2,
        seed=7,
    )


@pytest.fixture
def tiny_experiment(fast_pipeline_config) -> ExperimentConfig:
    data = DataConfig(
        num_source_classes=5,
        num_target_classes=3,
        feature_dim=3,
        samples_per_source_class=30,
        samples_per_target_class=10,
        class_separation=5.0,
        target_perturbation=0.5,
        noise_scale=0.6,
        train_fraction=0.5,
    )
    return ExperimentConfig(
        data=data,
        pipeline=fast_pipeline_config,
        sweep=SweepConfig(fractions=(0.2, 0.6), max_iterations=2),
        seeds=(0, 1),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)

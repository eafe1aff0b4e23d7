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

SIGNIFICANT_DIGITS = 9
NUMBER_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"

MEAN_PLACEMENT_ATTEMPTS = 10_000

SOFTMAX_TOLERANCE = 1e-9
PROBABILITY_FLOOR = 1e-300
MAX_MATCH_SAMPLES = 64

EIGENGAP_TOLERANCE = 1e-8
ORTHONORMALITY_TOLERANCE = 1e-8

DEFAULT_HIDDEN_SIZES = (16,)
DEFAULT_DR_WEIGHT = 1.0
DEFAULT_DR_RANK = 4
DEFAULT_DR_GRAD_CLIP = 1.0

DEFAULT_TRAIN = {
    "baseline": {
        "epochs": 200,
        "batch_size": 16,
        "learning_rate": 0.05,
        "l2_weight": 1e-3,
    },
    "source": {
        "epochs": 60,
        "batch_size": 32,
        "learning_rate": 0.05,
        "l2_weight": 1e-3,
    },
    "retrain": {
        "epochs": 100,
        "batch_size": 16,
        "learning_rate": 0.05,
        "l2_weight": 1e-3,
        "dr_weight": DEFAULT_DR_WEIGHT,
        "dr_rank": DEFAULT_DR_RANK,
    },
}

DEFAULT_SOURCE_HOLDOUT_FRACTION = 0.2
SCARCITY_RATIO = 10

DEFAULT_SWEEP_FRACTIONS = (0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_SWEEP_SEEDS = tuple(range(10))

# Mode-matching benchmark used by the acceptance checker.
MATCHING_BENCHMARK = {
    "num_source_classes": 8,
    "num_target_classes": 8,
    "feature_dim": 4,
    "samples_per_source_class": 40,
    "samples_per_target_class": 10,
    "class_separation": 10.0,
    "target_perturbation": 1.0,
    "noise_scale": 0.5,
}

SWEEP_CSV_COLUMNS = ("variant", "fraction_or_iter", "seed", "accuracy", "separability")
REPORT_CSV_COLUMNS = (
    "target_class",
    "rank",
    "source_class",
    "log_likelihood",
    "argmax_count",
    "mean_prob",
)

PIPELINE_JSON = "pipeline.json"
PIPELINE_CSV = "pipeline.csv"
AUGMENT_CSV = "augment.csv"
AUGMENT_JSON = "augment.json"
ITERATE_CSV = "iterate.csv"
ITERATE_JSON = "iterate.json"

# Artifacts written per experiment kind: (rows CSV, run document JSON).
EXPERIMENT_ARTIFACTS = {
    "pipeline": (PIPELINE_CSV, PIPELINE_JSON),
    "augment": (AUGMENT_CSV, AUGMENT_JSON),
    "iterate": (ITERATE_CSV, ITERATE_JSON),
}

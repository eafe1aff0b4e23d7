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

from dataclasses import fields
from typing import Any, Type, TypeVar

import yaml

from modematch.constants import DEFAULT_TRAIN
from modematch.dataclasses import (
    DataConfig,
    ExperimentConfig,
    MatchConfig,
    PipelineConfig,
    SweepConfig,
    TrainConfig,
    TrimConfig,
)
from modematch.exceptions import ConfigError, ValidationError
from modematch.types import FilePath
from modematch.utils.export import to_jsonable

TConfig = TypeVar("TConfig")

TRAIN_STAGES = {
    "baseline_cfg": "baseline",
    "source_cfg": "source",
    "retrain_cfg": "retrain",
}


def _build(cls: Type[TConfig], mapping: Any, where: str, **overrides: Any) -> TConfig:
    if not isinstance(mapping, dict):
        raise ConfigError(f"'{where}' must be a mapping, got {type(mapping).__name__}.")

    known = {field.name for field in fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{where}': {', '.join(unknown)}.")

    values = {**mapping, **overrides}
    for key, value in values.items():
        if isinstance(value, list):
            values[key] = tuple(value)
    try:
        return cls(**values)
    except (ValidationError, TypeError, ValueError) as err:
        raise ConfigError(f"Invalid '{where}': {err}")


def parse_pipeline_config(mapping: dict[str, Any]) -> PipelineConfig:
    mapping = dict(mapping or {})
    nested = {}
    for key, stage in TRAIN_STAGES.items():
        if key in mapping:
            train = mapping.pop(key) or {}
            if not isinstance(train, dict):
                raise ConfigError(f"'pipeline.{key}' must be a mapping.")
            nested[key] = _build(
                TrainConfig, {**DEFAULT_TRAIN[stage], **train}, f"pipeline.{key}"
            )
    if "match_cfg" in mapping:
        nested["match_cfg"] = _build(
            MatchConfig, mapping.pop("match_cfg") or {}, "pipeline.match_cfg"
        )
    if "trim" in mapping:
        trim = mapping.pop("trim")
        nested["trim"] = (
            None if trim is None else _build(TrimConfig, trim, "pipeline.trim")
        )

    return _build(PipelineConfig, mapping, "pipeline", **nested)


def parse_experiment_config(document: dict[str, Any]) -> ExperimentConfig:
    document = dict(document or {})
    unknown = sorted(set(document) - {"data", "pipeline", "sweep", "seeds"})
    if unknown:
        raise ConfigError(f"Unknown top-level key(s): {', '.join(unknown)}.")

    sections = {
        "data": _build(DataConfig, document.get("data") or {}, "data"),
        "pipeline": parse_pipeline_config(document.get("pipeline") or {}),
        "sweep": _build(SweepConfig, document.get("sweep") or {}, "sweep"),
    }
    if "seeds" in document:
        sections["seeds"] = document["seeds"]
    try:
        return ExperimentConfig(**sections)
    except (ValidationError, TypeError, ValueError) as err:
        raise ConfigError(f"Invalid experiment config: {err}")


def load_experiment_config(path: FilePath) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as config_file:
            document = yaml.safe_load(config_file)
    except yaml.YAMLError as err:
        raise ConfigError(f"Cannot parse {path}: {err}")
    return parse_experiment_config(document)


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return to_jsonable(cfg)

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

from functools import wraps

from modematch.classifier import Classifier
from modematch.dataclasses import ExperimentConfig
from modematch.dataset import Dataset
from modematch.manager import ExperimentManager
from modematch.matcher import Matcher
from modematch.module import Module
from modematch.pipeline import Pipeline
from modematch.regularizer import Regularizer
from modematch.types import FilePath
from modematch.utils.config import load_experiment_config


class ModeMatch(Module):
    dataset: Dataset
    classifier: Classifier
    matcher: Matcher
    regularizer: Regularizer
    pipeline: Pipeline

    @staticmethod
    @wraps(load_experiment_config)
    def load_config(path: FilePath) -> ExperimentConfig:
        return load_experiment_config(path)

    def __init__(self, workers: int = 1):
        self.manager = ExperimentManager(workers)
        modules = {
            "dataset": Dataset(self.manager),
            "classifier": Classifier(self.manager),
            "matcher": Matcher(self.manager),
            "regularizer": Regularizer(self.manager),
            "pipeline": Pipeline(self.manager),
        }
        self._attach_modules(modules)

    @property
    def workers(self) -> int:
        return self.manager.workers

    @workers.setter
    def workers(self, workers: int) -> None:
        self.manager.workers = workers

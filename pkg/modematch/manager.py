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
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable

from modematch.exceptions import ValidationError

logger = logging.getLogger(__name__)


class ExperimentManager:
    def __init__(self, workers: int = 1):
        self.workers = workers

    @property
    def workers(self) -> int:
        return self._workers

    @workers.setter
    def workers(self, workers: int) -> None:
        if workers < 1:
            raise ValidationError(f"Worker count must be positive, got {workers}.")
        self._workers = workers

    def map(self, fn: Callable[[Any], Any], cells: Iterable[Any]) -> list[Any]:
        """
        Apply fn to every cell. Results keep the order of cells
        whatever the worker count; fn must be a module-level function.
        """
        cells = list(cells)
        if self.workers == 1 or len(cells) < 2:
            return [fn(cell) for cell in cells]

        logger.info("Running %d cells on %d workers", len(cells), self.workers)
        with ProcessPoolExecutor(max_workers=min(self.workers, len(cells))) as pool:
            return list(pool.map(fn, cells))

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
from dataclasses import asdict, is_dataclass
from enum import Enum
from typing import Any

import numpy as np
import pandas as pd

from modematch.constants import NUMBER_FORMAT
from modematch.types import FilePath


def to_jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return str(value.value)
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def json_text(document: Any) -> str:
    return json.dumps(to_jsonable(document), sort_keys=True, indent=2) + "\n"


def csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=NUMBER_FORMAT, lineterminator="\n")


def write_json(document: Any, path: FilePath) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as json_file:
        json_file.write(json_text(document))


def write_csv(frame: pd.DataFrame, path: FilePath) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as csv_file:
        csv_file.write(csv_text(frame))

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

from typing import Iterable

from modematch.constants import SIGNIFICANT_DIGITS


def format_number(value: float) -> str:
    text = f"{float(value):.{SIGNIFICANT_DIGITS}g}"
    return "0" if text == "-0" else text


def format_numbers(values: Iterable[float]) -> str:
    return ",".join(format_number(value) for value in values)


def parse_numbers(text: str) -> list[float]:
    return [float(token) for token in text.split(",")]


def parse_header(line: str, key: str) -> str:
    prefix = f"{key}:"
    if not line.startswith(prefix):
        raise ValueError(f"expected '{prefix}' header")
    return line[len(prefix):].strip()

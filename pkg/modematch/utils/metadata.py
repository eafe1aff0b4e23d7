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

import hashlib
from importlib.metadata import PackageNotFoundError, version
from typing import Any

from modematch.utils.export import json_text


def content_digest(document: Any) -> str:
    return hashlib.sha256(json_text(document).encode("utf-8")).hexdigest()


def package_version() -> str:
    try:
        return version("modematch")
    except PackageNotFoundError:
        return "unknown"


def generate_run_metadata(config_echo: dict[str, Any], partial: bool) -> dict[str, Any]:
    return {
        "config": config_echo,
        "config_digest": content_digest(config_echo),
        "modematch_version": package_version(),
        "partial": partial,
    }


def generate_run_document(
    config_echo: dict[str, Any], partial: bool, records: list[dict[str, Any]]
) -> dict[str, Any]:
    """Run metadata plus the per-seed records, as written next to a rows CSV."""
    document = generate_run_metadata(config_echo, partial)
    document["seeds"] = records
    return document

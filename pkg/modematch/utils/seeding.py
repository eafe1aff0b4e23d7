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

import zlib

import numpy as np


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named stream of a run seed."""
    return np.random.default_rng((int(seed), stream_id(stream)))


def derive_seed(seed: int, stream: str) -> int:
    sequence = np.random.SeedSequence((int(seed), stream_id(stream)))
    return int(sequence.generate_state(1)[0])

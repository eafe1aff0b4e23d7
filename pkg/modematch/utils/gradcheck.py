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

from typing import Callable

import numpy as np

from modematch.types import Matrix, Vector


def central_differences(
    fn: Callable[[Vector], float], x: Vector, step: float = 1e-5
) -> Vector:
    x = np.asarray(x, dtype=np.float64)
    gradient = np.empty_like(x)
    for index in range(x.size):
        forward, backward = x.copy(), x.copy()
        forward[index] += step
        backward[index] -= step
        gradient[index] = (fn(forward) - fn(backward)) / (2 * step)
    return gradient


def relative_error(analytic: Vector, numeric: Vector) -> float:
    """Max absolute deviation relative to the larger gradient's max-norm."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradient(
    fn: Callable[[Vector], float],
    gradient: Vector,
    x: Vector,
    step: float = 1e-5,
) -> float:
    return relative_error(gradient, central_differences(fn, x, step))


def directional_derivatives(
    fn: Callable[[Vector], float],
    x: Vector,
    directions: Matrix,
    step: float = 1e-5,
) -> Vector:
    """One-sided derivatives of ``fn`` at ``x`` along each row of ``directions``."""
    base = fn(x)
    return np.array([(fn(x + step * d) - base) / step for d in directions])

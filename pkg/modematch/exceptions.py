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

from typing import Any


class ModeMatchException(Exception):
    """
    Exception mixin inherited by all exceptions of modematch
    This allows::
        try:
            some_call()
        except ModeMatchException:
            # deal with modematch exception
        except:
            # deal with other exceptions
    """


class ValidationError(ModeMatchException):
    """
    Raised when something does not pass a validation check.
    """

    pass


class InvalidSyntheticSpec(ValidationError):
    """
    Raised when a synthetic benchmark specification violates its invariants
    or class means cannot be placed within the attempt budget.
    """

    pass


class ShapeMismatch(ValidationError):
    """
    Raised when a model and a dataset (or two models) disagree on dimensions.
    """

    pass


class DatasetFormatError(ModeMatchException):
    """
    Raised when a dataset file cannot be parsed. Carries the 1-based row number.
    """

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class ModelFormatError(ModeMatchException):
    """
    Raised when a model file cannot be parsed.
    """

    pass


class ConfigError(ModeMatchException):
    """
    Raised when a run config has unknown keys or invalid values.
    """

    pass


class DegenerateSpectrum(ModeMatchException):
    """
    Raised when eigenvalues involved in the directional gradient are closer
    than the eigengap tolerance. Callers skip the directional term for the step.
    """

    def __init__(self, message: str, gap: float):
        self.gap = gap
        super().__init__(message)


class DegenerateClusters(ValidationError):
    """
    Raised when a separability score is requested for fewer than two classes
    or a class with fewer than two samples.
    """

    pass


class BudgetExhausted(ModeMatchException):
    """
    Raised when a matched source class has fewer unused samples than the
    augmentation budget. `partial` holds whatever result was completed.
    """

    def __init__(
        self,
        message: str,
        target_class: int,
        round_index: int | None = None,
        partial: Any = None,
    ):
        self.target_class = target_class
        self.round_index = round_index
        self.partial = partial
        super().__init__(message)

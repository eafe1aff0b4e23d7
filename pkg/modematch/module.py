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

from modematch.exceptions import ValidationError
from modematch.manager import ExperimentManager


class Module:
    manager: ExperimentManager

    def _attach_modules(self, module_definitions: dict[str, "Module"]) -> None:
        for module_name, module in module_definitions.items():
            if hasattr(self, module_name):
                raise AttributeError(
                    f"Cannot set {self} module named '{module_name}'. "
                    "The object already has an attribute with that name"
                )
            if not isinstance(module, Module):
                raise ValidationError(
                    f"Module '{module_name}' must be a Module, got {type(module)}."
                )
            if module.manager is not self.manager:
                raise ValidationError(
                    f"Module '{module_name}' does not share the experiment manager."
                )

            setattr(self, module_name, module)

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

from typing import Sequence

import numpy as np

from modematch.exceptions import DatasetFormatError, ModelFormatError
from modematch.types import FilePath, IndexArray, Matrix
from modematch.utils.string_transformations import (
    format_number,
    format_numbers,
    parse_header,
    parse_numbers,
)


def serialize_dataset(
    class_names: Sequence[str], features: Matrix, labels: IndexArray
) -> str:
    lines = [f"classes: {','.join(class_names)}"]

    if features.ndim == 3:
        lines.append(f"dim: {features.shape[2]}; seqlen: {features.shape[1]}")
        for label, sequence in zip(labels, features):
            steps = ";".join(
                f"t{t}:{format_numbers(frame)}" for t, frame in enumerate(sequence)
            )
            lines.append(f"{int(label)}|{steps}")
    else:
        lines.append(f"dim: {features.shape[1]}")
        for label, vector in zip(labels, features):
            lines.append(f"{int(label)}|{format_numbers(vector)}")

    return "\n".join(lines) + "\n"


def _parse_shape(line: str) -> tuple[int, int | None]:
    dim, seqlen = None, None
    for part in line.split(";"):
        key, _, value = part.strip().partition(":")
        match key.strip():
            case "dim":
                dim = int(value)
            case "seqlen":
                seqlen = int(value)
            case _:
                raise ValueError(f"unknown shape key '{key.strip()}'")
    if dim is None or dim < 1 or (seqlen is not None and seqlen < 1):
        raise ValueError("dim (and seqlen when given) must be positive integers")
    return dim, seqlen


def _parse_vector(text: str, dim: int, row: int) -> list[float]:
    try:
        values = parse_numbers(text)
    except ValueError:
        raise DatasetFormatError(f"non-numeric feature value in '{text}'", row)
    if len(values) != dim:
        raise DatasetFormatError(
            f"dimension mismatch: expected {dim} values, found {len(values)}", row
        )
    return values


def read_dataset(path: FilePath) -> tuple[tuple[str, ...], Matrix, IndexArray]:
    with open(path, "r", encoding="utf-8") as dataset_file:
        lines = dataset_file.read().splitlines()

    if len(lines) < 2:
        raise DatasetFormatError("missing 'classes:' and 'dim:' header lines", 1)

    try:
        class_names = tuple(
            name.strip() for name in parse_header(lines[0], "classes").split(",")
        )
    except ValueError as err:
        raise DatasetFormatError(f"malformed header: {err}", 1)
    if not all(class_names):
        raise DatasetFormatError("malformed header: empty class name", 1)

    try:
        dim, seqlen = _parse_shape(lines[1])
    except ValueError as err:
        raise DatasetFormatError(f"malformed header: {err}", 2)

    features, labels = [], []
    for row, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue

        label_text, separator, body = line.partition("|")
        if not separator:
            raise DatasetFormatError("expected 'label|values'", row)
        try:
            label = int(label_text)
        except ValueError:
            raise DatasetFormatError(f"label '{label_text}' is not an integer", row)
        if not 0 <= label < len(class_names):
            raise DatasetFormatError(
                f"unknown label {label}, dataset has {len(class_names)} classes", row
            )

        if seqlen is None:
            features.append(_parse_vector(body, dim, row))
        else:
            steps = body.split(";")
            if len(steps) != seqlen:
                raise DatasetFormatError(
                    f"dimension mismatch: expected {seqlen} time steps, "
                    f"found {len(steps)}",
                    row,
                )
            sequence = []
            for t, step in enumerate(steps):
                tag, _, values = step.partition(":")
                if tag != f"t{t}":
                    raise DatasetFormatError(
                        f"expected time step tag 't{t}', found '{tag}'", row
                    )
                sequence.append(_parse_vector(values, dim, row))
            features.append(sequence)

        labels.append(label)

    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(class_names))
    for index, count in enumerate(counts):
        if count == 0:
            raise DatasetFormatError(
                f"empty class '{class_names[index]}' (index {index})", len(lines)
            )

    shape = (len(labels), dim) if seqlen is None else (len(labels), seqlen, dim)
    return (
        class_names,
        np.asarray(features, dtype=np.float64).reshape(shape),
        np.asarray(labels, dtype=np.int64),
    )


def serialize_model(
    layer_sizes: Sequence[int],
    weights: Sequence[Matrix],
    biases: Sequence[Matrix],
    input_scale: float = 1.0,
) -> str:
    lines = [
        f"layers: {','.join(str(size) for size in layer_sizes)}",
        f"scale: {format_number(input_scale)}",
    ]
    for index, (weight, bias) in enumerate(zip(weights, biases)):
        lines.append(f"weight {index}: {weight.shape[0]}x{weight.shape[1]}")
        lines.extend(format_numbers(row) for row in weight)
        lines.append(f"bias {index}: {bias.shape[0]}")
        lines.append(format_numbers(bias))
    return "\n".join(lines) + "\n"


def _expect(lines: list[str], cursor: int, expected: str) -> None:
    if lines[cursor] != expected:
        raise ModelFormatError(f"Expected '{expected}', found '{lines[cursor]}'.")


def read_model(
    path: FilePath,
) -> tuple[tuple[int, ...], list[Matrix], list[Matrix], float]:
    with open(path, "r", encoding="utf-8") as model_file:
        lines = [line for line in model_file.read().splitlines() if line.strip()]

    try:
        header = parse_header(lines[0], "layers")
        layer_sizes = tuple(int(size) for size in header.split(","))
    except (IndexError, ValueError) as err:
        raise ModelFormatError(f"Malformed 'layers:' header: {err}")

    input_scale, cursor = 1.0, 1
    if len(lines) > 1 and lines[1].startswith("scale:"):
        try:
            input_scale = float(parse_header(lines[1], "scale"))
        except ValueError as err:
            raise ModelFormatError(f"Malformed 'scale:' line: {err}")
        cursor = 2

    weights, biases = [], []
    try:
        for index, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
            _expect(lines, cursor, f"weight {index}: {fan_out}x{fan_in}")
            rows = lines[cursor + 1: cursor + 1 + fan_out]
            weight = np.asarray([parse_numbers(row) for row in rows], dtype=np.float64)
            weights.append(weight.reshape(fan_out, fan_in))
            cursor += 1 + fan_out

            _expect(lines, cursor, f"bias {index}: {fan_out}")
            bias = np.asarray(parse_numbers(lines[cursor + 1]), dtype=np.float64)
            biases.append(bias.reshape(fan_out))
            cursor += 2
    except (IndexError, ValueError) as err:
        raise ModelFormatError(f"Truncated or malformed parameter block: {err}")

    return layer_sizes, weights, biases, input_scale

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

import argparse
import json
import logging
import os
import sys
from typing import Callable, Sequence

from modematch.acceptance import run_checks
from modematch.constants import (
    DEFAULT_HIDDEN_SIZES,
    DEFAULT_TRAIN,
    EXPERIMENT_ARTIFACTS,
)
from modematch.dataclasses import (
    ExitCode,
    ExperimentConfig,
    MatchConfig,
    MatchMethod,
    TrainConfig,
)
from modematch.dataset import SyntheticSpec
from modematch.exceptions import BudgetExhausted, ModeMatchException
from modematch.main import ModeMatch
from modematch.network import feature_scale
from modematch.pipeline import layer_sizes_for
from modematch.utils.config import experiment_config_to_dict
from modematch.utils.export import write_csv, write_json
from modematch.utils.metadata import generate_run_document

logger = logging.getLogger(__name__)

SOURCE_FILE = "source.txt"
TARGET_FILE = "target.txt"
GROUND_TRUTH_FILE = "ground_truth.json"

EXPERIMENT_KINDS = {
    "pipeline": "pipeline",
    "sweep-augment": "augment",
    "sweep-iterate": "iterate",
}


def cmd_generate(args: argparse.Namespace, modematch: ModeMatch) -> ExitCode:
    spec = SyntheticSpec.with_random_map(
        seed=args.seed,
        num_source_classes=args.source_classes,
        num_target_classes=args.target_classes,
        feature_dim=args.dim,
        samples_per_source_class=args.source_samples,
        samples_per_target_class=args.target_samples,
        class_separation=args.separation,
        target_perturbation=args.perturbation,
        noise_scale=args.noise,
    )
    os.makedirs(args.out, exist_ok=True)

    sidecar = {
        "ground_truth_map": list(spec.ground_truth_map),
        "seed": spec.seed,
    }
    if args.sequence_length is None:
        source, target = modematch.dataset.generate(spec)
    else:
        source, target, offsets = modematch.dataset.generate_sequences(
            spec, args.sequence_length, args.span_length, args.offset_stride
        )
        sidecar["offsets"] = offsets.tolist()

    modematch.dataset.write(source, os.path.join(args.out, SOURCE_FILE))
    modematch.dataset.write(target, os.path.join(args.out, TARGET_FILE))
    write_json(sidecar, os.path.join(args.out, GROUND_TRUTH_FILE))
    logger.info(
        "Wrote %d source and %d target samples to %s",
        len(source),
        len(target),
        args.out,
    )
    return ExitCode.SUCCESS


def cmd_train(args: argparse.Namespace, modematch: ModeMatch) -> ExitCode:
    data = modematch.dataset.load(args.data)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        l2_weight=args.l2_weight,
        dr_weight=args.dr_weight if args.reference else 0.0,
        dr_rank=args.dr_rank if args.reference else None,
        seed=args.seed,
    )
    reference = None
    input_scale = feature_scale(data.pooled_features())
    if args.reference:
        reference = modematch.classifier.load(args.reference)
        input_scale = reference.input_scale

    model = modematch.classifier.init(
        layer_sizes_for(data.feature_dim, args.hidden, data.num_classes),
        args.seed,
        input_scale,
    )
    model, trace = modematch.classifier.train(model, data, cfg, reference)
    modematch.classifier.write(model, args.out)

    accuracy, _ = modematch.classifier.evaluate(model, data)
    print(f"train_accuracy={accuracy:.6f} final_loss={trace.losses[-1]:.6f}")
    return ExitCode.SUCCESS


def cmd_match(args: argparse.Namespace, modematch: ModeMatch) -> ExitCode:
    model = modematch.classifier.load(args.model)
    source = modematch.dataset.load(args.source)
    target_names = (
        modematch.dataset.load(args.target).class_names if args.target else None
    )
    report = modematch.matcher.match(
        model,
        source,
        model.num_classes,
        MatchConfig(args.method, args.samples_per_class, args.seed),
        target_names,
    )
    write_csv(report.to_dataframe(), args.out)
    for target_name, source_name in report.matched_names().items():
        print(f"{target_name} -> {source_name}")
    return ExitCode.SUCCESS


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    experiment = ModeMatch.load_config(args.config)
    if args.seed is not None:
        experiment = ExperimentConfig(
            experiment.data, experiment.pipeline, experiment.sweep, (args.seed,)
        )
    return experiment


def cmd_experiment(args: argparse.Namespace, modematch: ModeMatch) -> ExitCode:
    experiment = _experiment_config(args)
    kind = EXPERIMENT_KINDS[args.command]
    output = modematch.pipeline.experiment(kind, experiment)

    os.makedirs(args.out, exist_ok=True)
    csv_name, json_name = EXPERIMENT_ARTIFACTS[kind]
    write_csv(output.rows.to_dataframe(), os.path.join(args.out, csv_name))
    document = generate_run_document(
        experiment_config_to_dict(experiment), output.partial, output.records
    )
    write_json(document, os.path.join(args.out, json_name))

    logger.info("Wrote %s and %s to %s", csv_name, json_name, args.out)
    if output.partial:
        logger.warning("Source samples ran out; artifacts are flagged partial.")
        return ExitCode.PARTIAL
    return ExitCode.SUCCESS


def cmd_check(args: argparse.Namespace, modematch: ModeMatch) -> ExitCode:
    results = run_checks(args.out, modematch.manager)
    for result in results:
        print(result)
    if all(result.passed for result in results):
        return ExitCode.SUCCESS
    return ExitCode.CHECK_FAILED


COMMANDS: dict[str, Callable[[argparse.Namespace, ModeMatch], ExitCode]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "match": cmd_match,
    "pipeline": cmd_experiment,
    "sweep-augment": cmd_experiment,
    "sweep-iterate": cmd_experiment,
    "check": cmd_check,
}


def _common(parser: argparse.ArgumentParser, seed_default: int | None = 0) -> None:
    parser.add_argument("--seed", type=int, default=seed_default)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modematch",
        description="Guided weak supervision and directional regularization.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Write a synthetic benchmark")
    _common(generate)
    generate.add_argument("--out", required=True, help="Output directory")
    generate.add_argument("--source-classes", type=int, default=12)
    generate.add_argument("--target-classes", type=int, default=8)
    generate.add_argument("--dim", type=int, default=8)
    generate.add_argument("--source-samples", type=int, default=150)
    generate.add_argument("--target-samples", type=int, default=80)
    generate.add_argument("--separation", type=float, default=4.0)
    generate.add_argument("--perturbation", type=float, default=1.84)
    generate.add_argument("--noise", type=float, default=1.8)
    generate.add_argument("--sequence-length", type=int, default=None)
    generate.add_argument("--span-length", type=int, default=8)
    generate.add_argument("--offset-stride", type=int, default=1)

    baseline = DEFAULT_TRAIN["baseline"]
    train = commands.add_parser("train", help="Train a classifier on a dataset")
    _common(train)
    train.add_argument("--data", required=True, help="Dataset file")
    train.add_argument("--out", required=True, help="Model file to write")
    train.add_argument(
        "--hidden", type=int, nargs="*", default=list(DEFAULT_HIDDEN_SIZES)
    )
    train.add_argument("--epochs", type=int, default=baseline["epochs"])
    train.add_argument("--batch-size", type=int, default=baseline["batch_size"])
    train.add_argument(
        "--learning-rate", type=float, default=baseline["learning_rate"]
    )
    train.add_argument("--l2-weight", type=float, default=baseline["l2_weight"])
    train.add_argument(
        "--reference", default=None, help="Model to align with (enables DR)"
    )
    train.add_argument("--dr-weight", type=float, default=1.0)
    train.add_argument("--dr-rank", type=int, default=4)

    match = commands.add_parser("match", help="Match target classes to sources")
    _common(match)
    match.add_argument("--model", required=True, help="Target classifier file")
    match.add_argument("--source", required=True, help="Source dataset file")
    match.add_argument("--target", default=None, help="Target dataset (for names)")
    match.add_argument("--out", required=True, help="Report CSV to write")
    match.add_argument(
        "--method",
        choices=[str(method) for method in MatchMethod],
        default=str(MatchMethod.COUNT),
    )
    match.add_argument("--samples-per-class", type=int, default=None)

    for name in EXPERIMENT_KINDS:
        experiment = commands.add_parser(name, help=f"Run the {name} experiment")
        _common(experiment, seed_default=None)
        experiment.add_argument("--config", required=True, help="YAML run config")
        experiment.add_argument("--out", required=True, help="Output directory")

    check = commands.add_parser("check", help="Evaluate the acceptance criteria")
    _common(check)
    check.add_argument("--out", required=True, help="Directory with run artifacts")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        modematch = ModeMatch(args.workers)
        return int(COMMANDS[args.command](args, modematch))
    except BudgetExhausted as err:
        logger.error("%s", err)
        return int(ExitCode.PARTIAL)
    except (ModeMatchException, OSError, json.JSONDecodeError) as err:
        logger.error("%s", err)
        return int(ExitCode.INVALID)


if __name__ == "__main__":
    sys.exit(main())

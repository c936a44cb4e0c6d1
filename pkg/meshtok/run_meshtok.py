import argparse
import json
import logging
import sys
from typing import Callable, Dict, List, Optional

from meshtok.errors import ConfigurationException, InvalidInputException, UsageException
from meshtok.general import (attribute_parts, decode_token_file, encode_mesh_file, evaluate_directories,
                             generate_dataset, interpolate_mesh_files, predict_image, swap_parts,
                             train_codec_on_directory, train_predictor_on_directory)
from meshtok.representations import CommandResult
from meshtok.synthetic.dataset import DataSplit
from meshtok.training.config import AblationFlags, Stage, TrainConfig
from meshtok.training.seeding import deterministic_requested

logger = logging.getLogger("meshtok")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_RECORD_FIELDS = set(logging.makeLogRecord({}).__dict__) | {"message", "asctime"}


class JsonLinesFormatter(logging.Formatter):
    """One JSON object per record: time, level, logger, message, plus any ``extra`` payload."""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "time": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RECORD_FIELDS:
                entry[key] = value
        if record.exc_info:
            entry["traceback"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


class MeshtokArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageException(f"{self.prog}: {message}")


def configure_logging(log_file: Optional[str] = None, level: str = "INFO") -> List[logging.Handler]:
    """Console handler plus, when ``log_file`` is given, a JSON-lines file handler on the package logger.

    Handlers from a previous call are removed and closed first.
    """
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.setLevel(getattr(logging, level))
    logger.propagate = False

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    handlers = [console]
    if log_file is not None:
        file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
        file_handler.setFormatter(JsonLinesFormatter())
        handlers.append(file_handler)
    for handler in handlers:
        logger.addHandler(handler)
    return handlers


def parse_indices(text: str) -> List[int]:
    """Comma-separated cell indices; an empty string is the empty set."""
    if not text.strip():
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"indices must be comma-separated integers, got '{text}'")


def build_parser() -> MeshtokArgumentParser:
    parser = MeshtokArgumentParser(prog="meshtok", description="Mesh tokenisation and token-based body mesh "
                                                              "recovery at desk scale.")
    parser.add_argument("--log-file", default=None, help="Write JSON-lines logs to this file.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--progress", action="store_true", help="Show progress bars.")
    commands = parser.add_subparsers(dest="command", parser_class=MeshtokArgumentParser)
    commands.required = True

    gen_data = commands.add_parser("gen-data", help="Generate a synthetic dataset.")
    gen_data.add_argument("--count", type=int, required=True)
    gen_data.add_argument("--seed", type=int, default=0)
    gen_data.add_argument("--out", required=True)
    gen_data.add_argument("--image-size", type=int, default=64)

    train = commands.add_parser("train", help="Train the codec or the predictor.")
    train.add_argument("--stage", required=True, choices=["codec", "predictor"])
    train.add_argument("--config", default=None, help="YAML training config.")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--codec", default=None, help="Trained codec directory (predictor stage).")
    train.add_argument("--ablation", action="append", default=[], choices=["loss_3d", "no_reprojection"])
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--max-steps", type=int, default=None)
    train.add_argument("--deterministic", action="store_true")

    evaluate = commands.add_parser("eval", help="Evaluate a trained model.")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--codec", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--report", required=True, help="Report path prefix (.json and .csv are added).")
    evaluate.add_argument("--split", default="test", choices=["train", "val", "test"])
    evaluate.add_argument("--no-baselines", action="store_true")
    evaluate.add_argument("--plot", default=None, help="Write a PVE distribution figure here.")

    codec = commands.add_parser("codec", help="Encode meshes to tokens or decode tokens to meshes.")
    codec_commands = codec.add_subparsers(dest="action", parser_class=MeshtokArgumentParser)
    codec_commands.required = True
    encode = codec_commands.add_parser("encode")
    encode.add_argument("--mesh", required=True)
    encode.add_argument("--codec", required=True)
    encode.add_argument("--out", required=True)
    decode = codec_commands.add_parser("decode")
    decode.add_argument("--tokens", required=True)
    decode.add_argument("--codec", required=True)
    decode.add_argument("--out", required=True)

    edit = commands.add_parser("edit", help="Edit meshes in token space.")
    edit_commands = edit.add_subparsers(dest="action", parser_class=MeshtokArgumentParser)
    edit_commands.required = True
    swap = edit_commands.add_parser("swap")
    swap.add_argument("--a", required=True, help="Token file or OBJ.")
    swap.add_argument("--b", required=True, help="Token file or OBJ.")
    swap.add_argument("--indices", type=parse_indices, default=[])
    swap.add_argument("--codec", required=True)
    swap.add_argument("--out", required=True)
    swap.add_argument("--error-mesh", default=None)
    interp = edit_commands.add_parser("interp")
    interp.add_argument("--a", required=True, help="OBJ.")
    interp.add_argument("--b", required=True, help="OBJ.")
    interp.add_argument("--codec", required=True)
    interp.add_argument("--out", required=True, help="Output directory for frame OBJs.")
    weights = interp.add_mutually_exclusive_group(required=True)
    weights.add_argument("--t", type=float)
    weights.add_argument("--frames", type=int)
    attribute = edit_commands.add_parser("attribute")
    attribute.add_argument("--codec", required=True)
    attribute.add_argument("--out", required=True)
    attribute.add_argument("--probes", type=int, default=8)
    attribute.add_argument("--seed", type=int, default=0)

    predict = commands.add_parser("predict", help="Predict a mesh from an image stored as .npy.")
    predict.add_argument("--model", required=True)
    predict.add_argument("--codec", required=True)
    predict.add_argument("--image", required=True)
    predict.add_argument("--out", required=True)
    predict.add_argument("--name", default="prediction")
    return parser


def cmd_gen_data(args: argparse.Namespace) -> CommandResult:
    if args.count < 1:
        raise UsageException(f"--count must be at least 1, got {args.count}")
    dataset, artifacts = generate_dataset(args.count, args.seed, args.out, args.image_size, args.progress)
    logger.info("Wrote %d records to %s", len(dataset), args.out)
    return CommandResult(EXIT_OK, artifacts, {"count": len(dataset), "fingerprint": dataset.fingerprint,
                                              "splits": dataset.split_sizes()})


def training_config(args: argparse.Namespace) -> TrainConfig:
    config = TrainConfig.from_yaml(args.config) if args.config else TrainConfig()
    config.stage = Stage.from_string(args.stage)
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    config.deterministic = deterministic_requested(args.deterministic or config.deterministic)
    if args.ablation:
        extra = AblationFlags.from_names(args.ablation)
        config.ablation.loss_3d = config.ablation.loss_3d or extra.loss_3d
        config.ablation.no_reprojection = config.ablation.no_reprojection or extra.no_reprojection
    config.validate()
    return config


def cmd_train(args: argparse.Namespace) -> CommandResult:
    config = training_config(args)
    if config.stage == Stage.CODEC:
        result = train_codec_on_directory(args.data, config, args.out, args.progress)
        summary = {"stage": "codec", "validation_pve_mm": result.validation_pve,
                   "codebook_usage": result.codebook_usage, "steps": result.steps,
                   "codec_fingerprint": result.codec.fingerprint()}
    else:
        if args.codec is None:
            raise UsageException("The predictor stage needs --codec.")
        result = train_predictor_on_directory(args.data, args.codec, config, args.out, args.progress)
        summary = {"stage": "predictor", "validation_pve_mm": result.validation_pve, "steps": result.steps,
                   "codec_fingerprint": result.codec_fingerprint, "active_losses": config.active_terms()}
    return CommandResult(EXIT_OK, result.artifacts, summary)


def cmd_eval(args: argparse.Namespace) -> CommandResult:
    reports, artifacts = evaluate_directories(args.model, args.codec, args.data, args.report,
                                              DataSplit.from_string(args.split), not args.no_baselines,
                                              args.plot)
    return CommandResult(EXIT_OK, artifacts, {method: report.summary() for method, report in reports.items()})


def cmd_codec(args: argparse.Namespace) -> CommandResult:
    if args.action == "encode":
        sequence = encode_mesh_file(args.mesh, args.codec, args.out)
        return CommandResult(EXIT_OK, [args.out], {"tokens": sequence.indices,
                                                   "codec_fingerprint": sequence.codec_fingerprint})
    mesh = decode_token_file(args.tokens, args.codec, args.out)
    return CommandResult(EXIT_OK, [args.out], {"vertices": int(mesh.vertices.shape[0])})


def cmd_edit(args: argparse.Namespace) -> CommandResult:
    if args.action == "swap":
        swapped = swap_parts(args.a, args.b, args.indices, args.codec, args.out, args.error_mesh)
        artifacts = [args.out] + ([args.error_mesh] if args.error_mesh else [])
        return CommandResult(EXIT_OK, artifacts, {"tokens": swapped.tolist(), "indices": args.indices})
    if args.action == "interp":
        paths = interpolate_mesh_files(args.a, args.b, args.codec, args.out, frames=args.frames, t=args.t)
        return CommandResult(EXIT_OK, paths, {"frames": len(paths)})
    attribution, artifacts = attribute_parts(args.codec, args.out, args.probes, args.seed)
    return CommandResult(EXIT_OK, artifacts, attribution.to_dict())


def cmd_predict(args: argparse.Namespace) -> CommandResult:
    representation, artifacts = predict_image(args.model, args.codec, args.image, args.out, args.name)
    return CommandResult(EXIT_OK, artifacts, {"tokens": representation.tokens,
                                              "camera": representation.camera.as_array().tolist()})


COMMANDS: Dict[str, Callable[[argparse.Namespace], CommandResult]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "codec": cmd_codec,
    "edit": cmd_edit,
    "predict": cmd_predict,
}


def run(argv: Optional[List[str]] = None) -> CommandResult:
    """Parse ``argv`` and run one command; errors become exit codes instead of propagating."""
    handlers = []
    try:
        args = build_parser().parse_args(argv)
        handlers = configure_logging(args.log_file, args.log_level)
        return COMMANDS[args.command](args)
    except UsageException as error:
        logger.error("Usage error: %s", error)
        return CommandResult(EXIT_USAGE, summary={"error": str(error)})
    except (InvalidInputException, ConfigurationException) as error:
        logger.error("%s: %s", type(error).__name__, error)
        return CommandResult(EXIT_VALIDATION, summary={"error": str(error), "type": type(error).__name__})
    except Exception as error:
        logger.exception("Command failed: %s", error)
        summary = {"error": str(error), "type": type(error).__name__}
        last_good = getattr(error, "last_good_checkpoint", None)
        if last_good is not None:
            summary["last_good_checkpoint"] = last_good
        return CommandResult(EXIT_RUNTIME, summary=summary)
    finally:
        for handler in handlers:
            handler.flush()
            if isinstance(handler, logging.FileHandler):
                logger.removeHandler(handler)
                handler.close()


def main(argv: Optional[List[str]] = None) -> int:
    result = run(argv)
    print(result.to_json())
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``neopain <command> [options]``.

Every command writes its artifacts under an output directory and prints
JSON-lines records on stdout. Exit status is 0 on success, 1 when input data
fails validation and 2 for usage errors or missing files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

from . import pipeline
from .backbone import BackboneSpec
from .train import TrainConfig

logger = logging.getLogger("neopain")

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _channels(text: str):
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) <= 0:
        raise argparse.ArgumentTypeError(f"channels must be positive, got {text!r}")
    return values


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--learning-rate", type=float, default=d.learning_rate, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="mini-batch size")
    p.add_argument("--max-epochs", type=int, default=d.max_epochs, help="epoch budget")
    p.add_argument("--patience", type=int, default=d.patience, help="early-stopping patience (epochs)")
    p.add_argument("--precision", choices=("float32", "float64"), default=d.precision,
                   help="training precision")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="neopain", formatter_class=fmt,
                                     description="Two-stage bilinear CNN + LSTM pain-intensity pipeline.")
    common = argparse.ArgumentParser(add_help=False, formatter_class=fmt)
    common.add_argument("--seed", type=int, default=0, help="global random seed")
    common.add_argument("--config", default=None, help="key=value file of option defaults (flags override)")
    common.add_argument("--jobs", type=int, default=1, help="maximum worker processes")
    common.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="stderr logging level")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("synth", parents=[common], formatter_class=fmt,
                       help="write the synthetic fixture (frames, boxes, manifest)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, default=9, help="number of synthetic subjects")
    p.add_argument("--max-events", type=int, default=None, help="keep only this many events (quick runs)")

    p = sub.add_parser("preprocess", parents=[common], formatter_class=fmt,
                       help="segment events and cut 32-key-frame clips")
    p.add_argument("--manifest", required=True, help="event manifest (tab-separated)")
    p.add_argument("--out", required=True, help="output directory for clips.tsv")
    p.add_argument("--balance", action="store_true", help="under-sample the majority class")

    p = sub.add_parser("features", parents=[common], formatter_class=fmt,
                       help="compute per-key-frame bilinear descriptors")
    p.add_argument("--clips", required=True, help="clips.tsv written by preprocess")
    p.add_argument("--out", required=True, help="output feature directory")
    p.add_argument("--augment-frames", type=int, default=8,
                   help="augmented key-frames per clip (training partitions only)")
    p.add_argument("--per-clip-augment", action="store_true",
                   help="one augmentation draw per clip instead of per frame")
    p.add_argument("--single-stream", action="store_true",
                   help="also store flattened stream-A maps for the single-stream baseline")
    spec = BackboneSpec()
    p.add_argument("--backbone-seed", type=int, default=spec.seed, help="stand-in CNN weight seed")
    p.add_argument("--channels", type=_channels, default=",".join(map(str, spec.channels)),
                   help="stand-in CNN channels per block")
    p.add_argument("--input-size", type=int, default=spec.input_size, help="square crop size")
    p.add_argument("--bilinear", default=None, help="bilinear checkpoint whose backbone weights to use")
    p.add_argument("--feature-batch", type=int, default=32, help="frames per backbone batch")

    p = sub.add_parser("train-bilinear", parents=[common], formatter_class=fmt,
                       help="train the facial-intensity head (80/20 event split)")
    p.add_argument("--features", required=True, help="feature directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--input", choices=pipeline.SOURCES, default="bilinear",
                   help="bilinear descriptors or flattened stream-A maps")
    p.add_argument("--freeze-prefix", type=int, default=None,
                   help="frozen leading backbone blocks (default: all)")
    _add_train_flags(p)

    p = sub.add_parser("train-lstm", parents=[common], formatter_class=fmt,
                       help="train the sequence regressor on postoperative events")
    p.add_argument("--features", required=True, help="feature directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--joint", action="store_true", help="also train the backbone tail through the LSTM loss")
    p.add_argument("--freeze-prefix", type=int, default=None,
                   help="frozen leading backbone blocks with --joint (default: all but the last)")
    _add_train_flags(p)

    p = sub.add_parser("evaluate", parents=[common], formatter_class=fmt,
                       help="train and test per fold; print metrics")
    p.add_argument("--features", required=True, help="feature directory")
    p.add_argument("--protocol", choices=("loso", "split"), default="loso", help="evaluation protocol")
    p.add_argument("--stage", choices=("lstm", "bilinear"), default="lstm", help="model to evaluate")
    p.add_argument("--input", choices=pipeline.SOURCES, default="bilinear", help="bilinear stage input")
    p.add_argument("--joint", action="store_true", help="lstm stage: joint training")
    p.add_argument("--freeze-prefix", type=int, default=None, help="frozen leading backbone blocks")
    p.add_argument("--out", default=None, help="directory for metrics.jsonl and history.jsonl")
    _add_train_flags(p)

    p = sub.add_parser("predict", parents=[common], formatter_class=fmt,
                       help="32 intensity values for one clip")
    p.add_argument("--checkpoint", required=True, help="lstm or bilinear checkpoint directory")
    p.add_argument("--clip", required=True, help="tensor file of shape (32, 224, 224, 3) in [0, 1]")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> Optional[argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(command)
    return None


def read_config(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _apply_config(sub: argparse.ArgumentParser, values: Dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} expects a boolean, got {raw!r}")
            defaults[key] = raw.lower() in ("true", "1", "yes")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"config key {key!r}: invalid value {raw!r}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r}: {raw!r} not in {sorted(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command:
        sub = _subparser(parser, known.command)
        if sub is not None:
            _apply_config(sub, read_config(known.config))
    return parser.parse_args(argv)


def _require(path: Optional[str], what: str) -> None:
    if path is not None and not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.learning_rate, batch_size=args.batch_size, max_epochs=args.max_epochs,
                       patience=args.patience, seed=args.seed, precision=args.precision)


def _emit(records: List[dict], out=None) -> None:
    out = out or sys.stdout
    for rec in records:
        out.write(json.dumps(rec, sort_keys=True) + "\n")
    out.flush()


def run(args: argparse.Namespace) -> int:
    cmd = args.command
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if cmd == "synth":
        if args.subjects < 1:
            raise UsageError("--subjects must be at least 1")
        _emit([{"command": cmd, **pipeline.run_synth(args.out, args.seed, args.subjects, args.max_events)}])
    elif cmd == "preprocess":
        _require(args.manifest, "manifest")
        _emit([{"command": cmd, **pipeline.run_preprocess(args.manifest, args.out, args.balance, args.seed)}])
    elif cmd == "features":
        _require(args.clips, "clips file")
        _require(args.bilinear, "bilinear checkpoint")
        spec = BackboneSpec(input_size=args.input_size, channels=args.channels,
                            freeze_prefix=len(args.channels), seed=args.backbone_seed)
        summary = pipeline.run_features(args.clips, args.out, args.seed, args.augment_frames, args.per_clip_augment,
                                        spec, args.bilinear, args.single_stream, args.feature_batch)
        _emit([{"command": cmd, **summary}])
    elif cmd == "train-bilinear":
        _require(args.features, "feature directory")
        history, records = pipeline.run_train_bilinear(args.features, args.out, _train_config(args), args.input,
                                                       args.freeze_prefix)
        _emit(history + records)
    elif cmd == "train-lstm":
        _require(args.features, "feature directory")
        history, records = pipeline.run_train_lstm(args.features, args.out, _train_config(args), args.joint,
                                                   args.freeze_prefix)
        _emit(history + records)
    elif cmd == "evaluate":
        _require(args.features, "feature directory")
        options = ({"joint": args.joint, "freeze_prefix": args.freeze_prefix} if args.stage == "lstm"
                   else {"source": args.input, "freeze_prefix": args.freeze_prefix})
        history, records = pipeline.run_evaluate(args.features, args.protocol, args.stage, _train_config(args),
                                                 args.jobs, options)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            pipeline.write_jsonl(os.path.join(args.out, "history.jsonl"), history)
            pipeline.write_jsonl(os.path.join(args.out, "metrics.jsonl"), records)
        _emit(records)
    elif cmd == "predict":
        _require(args.checkpoint, "checkpoint")
        _require(args.clip, "clip file")
        values = pipeline.run_predict(args.checkpoint, args.clip)
        _emit([{"command": cmd, "intensity": [float(v) for v in values]}])
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"neopain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"neopain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"neopain: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

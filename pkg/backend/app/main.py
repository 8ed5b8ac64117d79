"""Command-line entry point: ``python -m app.main <command> ...``."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml
from pydantic import ValidationError

from app import __version__
from app.config import settings
from app.corefud.conllu_io import corpus_id_from_path, parse_corpus, read_corpus_file, serialize_corpus, write_corpus_file
from app.corefud.document import Document
from app.corefud.empty_nodes import strip_surfaced_forms, surface_empty_nodes, write_surfaced_forms
from app.errors import ConfigurationError, CorefError
from app.presets import PRESETS, resolve_train_config
from app.schemas import EpochRecord, ScoreReport, SynthSpec
from app.services.prediction_service import PredictionService
from app.services.sampling import compute_ratios, load_mix_spec, sample_stream
from app.services.scorer import format_report_table, reports_to_json, score_corpus
from app.services.selftest import SUITES, run_selftest
from app.services.synth import generate
from app.services.training_service import TrainingService
from app.tagging.mention_codec import read_tag_dump, tagged_documents, write_tag_dump
from app.utils.checkpoint import load_checkpoint, save_checkpoint
from app.utils.hashing import fingerprint
from app.utils.logging import setup_logging
from app.utils.parallel import map_documents

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.yaml"


def read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8", newline="\n")


def read_yaml(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        values = yaml.safe_load(read_text(path)) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot read configuration {path}: {e}")
    if not isinstance(values, dict):
        raise ConfigurationError(f"configuration {path} must be a mapping")
    return values


def read_corpora(paths: Sequence[str]) -> List[Document]:
    docs: List[Document] = []
    for path in paths:
        docs += read_corpus_file(Path(path))
    return docs


def manifest_path(output: Optional[str], command: str) -> Path:
    """Next to a file output; in the run directory when the output goes to stdout."""
    if output is None or output == "-":
        return Path(settings.output_dir) / f"{command}.manifest.yaml"
    target = Path(output)
    return target.with_name(f"{target.name}.manifest.yaml")


def write_run_manifest(path: Path, command: str, config: Dict[str, Any], argv: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "argv": list(argv),
        "config": config,
        "fingerprint": fingerprint(config),
    }
    path.write_text(yaml.safe_dump(manifest, sort_keys=True, allow_unicode=True), encoding="utf-8")
    logger.info(f"Wrote run manifest {path}")
    return path


def marker_of(args: argparse.Namespace) -> str:
    return args.marker or settings.empty_node_marker


# Subcommands


def cmd_convert(args: argparse.Namespace) -> int:
    docs = read_corpus_file(Path(args.input), args.corpus_id)
    direction = "surface" if args.surface else "restore" if args.restore else "normalize"
    if args.surface:
        docs = map_documents(lambda doc: write_surfaced_forms(doc, args.marker), docs, args.jobs)
    elif args.restore:
        docs = map_documents(lambda doc: strip_surfaced_forms(doc, args.marker), docs, args.jobs)
    write_text(args.output, serialize_corpus(docs))
    write_run_manifest(manifest_path(args.output, "convert"), "convert", {
        "input": args.input,
        "output": args.output,
        "corpus_id": args.corpus_id,
        "direction": direction,
        "empty_node_marker": marker_of(args),
        "jobs": args.jobs,
    }, args.argv)
    return 0


def write_tag_manifest(args: argparse.Namespace, command: str) -> None:
    config = {"input": args.input, "output": args.output, "empty_node_marker": marker_of(args)}
    write_run_manifest(manifest_path(args.output, command), command, config, args.argv)


def cmd_tags_encode(args: argparse.Namespace) -> int:
    docs = parse_corpus(read_text(args.input))
    write_text(args.output, write_tag_dump([surface_empty_nodes(doc, args.marker) for doc in docs]))
    write_tag_manifest(args, "tags-encode")
    return 0


def cmd_tags_decode(args: argparse.Namespace) -> int:
    docs = tagged_documents(read_tag_dump(read_text(args.input)), args.marker)
    write_text(args.output, serialize_corpus(docs))
    write_tag_manifest(args, "tags-decode")
    return 0


TRAIN_FLAGS = (
    "batch_size", "peak_lr", "warmup_fraction", "beta1", "beta2", "epochs", "batches_per_epoch", "lazy_adam",
    "seed", "detection_weight", "linking_weight", "at_most_k_links", "linking_loss", "scale_attention",
    "learn_transitions", "dim", "layers", "attention_heads", "dropout", "min_count", "dtype", "window_size",
    "right_context", "mixing", "half_focus_target", "use_corpus_id", "exclude", "with_singletons", "reduce_to_heads",
)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_train_config(
        args.preset or [],
        read_yaml(args.config),
        {name: getattr(args, name) for name in TRAIN_FLAGS},
    )
    output_dir = Path(args.output_dir or settings.output_dir)
    write_run_manifest(output_dir / MANIFEST_NAME, "train", cfg.model_dump(mode="json"), args.argv)

    train_docs = read_corpora(args.train)
    dev_docs = read_corpora(args.dev or [])
    history_path = output_dir / "history.json"

    def on_epoch(record: EpochRecord, model) -> None:
        history.append(record.model_dump())
        history_path.write_text(json.dumps(history, indent=2), encoding="utf-8")

    history: List[Dict[str, Any]] = []
    result = TrainingService(cfg, args.marker, args.jobs).train(train_docs, dev_docs, on_epoch)
    save_checkpoint(output_dir / "model_final.ckpt", result.load_final())
    save_checkpoint(output_dir / "model_best.ckpt", result.load_best())
    print(f"best epoch {result.best_epoch}; checkpoints in {output_dir}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_checkpoint(Path(args.model))
    if args.full_mentions:
        model.cfg = model.cfg.model_copy(update={"reduce_to_heads": False})
    docs = read_corpus_file(Path(args.input), args.corpus_id)
    predicted = PredictionService(model, args.marker).predict_corpus(docs, args.jobs)
    write_corpus_file(Path(args.output), predicted)
    write_run_manifest(manifest_path(args.output, "predict"), "predict", {
        "model": args.model,
        "input": args.input,
        "output": args.output,
        "corpus_id": args.corpus_id,
        "empty_node_marker": marker_of(args),
        "jobs": args.jobs,
        "train_config": model.cfg.model_dump(mode="json"),
    }, args.argv)
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    if len(args.key) != len(args.response):
        raise ConfigurationError(f"{len(args.key)} key files but {len(args.response)} response files")
    reports: Dict[str, ScoreReport] = {}
    for key_path, response_path in zip(args.key, args.response):
        corpus_id = corpus_id_from_path(Path(key_path))
        key = read_corpus_file(Path(key_path), corpus_id)
        response = read_corpus_file(Path(response_path), corpus_id)
        name = corpus_id if corpus_id not in reports else key_path
        reports[name] = score_corpus(key, response, args.with_singletons, args.jobs)
    print(format_report_table(reports))
    if args.json:
        write_text(args.json, reports_to_json(reports) + "\n")
    write_run_manifest(manifest_path(args.json, "score"), "score", {
        "key": args.key,
        "response": args.response,
        "with_singletons": args.with_singletons,
        "json": args.json,
        "jobs": args.jobs,
    }, args.argv)
    return 0


def cmd_mix(args: argparse.Namespace) -> int:
    spec = load_mix_spec(Path(args.config), {
        "strategy": args.strategy,
        "target": args.target,
        "exclude": args.exclude,
        "seed": args.seed,
        "use_corpus_id": args.use_corpus_id,
    })
    ratios = compute_ratios(spec)
    summary: Dict[str, Any] = {"weights": ratios.weights, "probabilities": ratios.probabilities}
    if args.samples:
        pools = {d.corpus_id: range(d.size) for d in spec.datasets}
        stream = sample_stream(spec, pools)
        counts = {corpus_id: 0 for corpus_id in ratios.probabilities}
        for _ in range(args.samples):
            counts[next(stream).corpus_id] += 1
        summary["counts"] = counts
    print(yaml.safe_dump(summary, sort_keys=True), end="")
    config = {**spec.model_dump(mode="json"), "samples": args.samples}
    write_run_manifest(manifest_path(None, "mix"), "mix", config, args.argv)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    values = read_yaml(args.config)
    for name in ("documents", "seed", "corpus_id", "crossing_prob", "empty_node_prob", "max_depth"):
        if getattr(args, name) is not None:
            values[name] = getattr(args, name)
    try:
        spec = SynthSpec(**values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid synthetic corpus configuration: {e}")
    write_corpus_file(Path(args.output), generate(spec))
    write_run_manifest(manifest_path(args.output, "synth"), "synth", spec.model_dump(mode="json"), args.argv)
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(args.suite)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(f"{result.name:<22} {result.cases:>6} cases  {len(result.failures):>4} failures  {result.seconds:6.2f}s  {status}")
    return 0 if all(r.passed for r in results) else 1


# Argument parsing

def _bool_flag(parser: argparse.ArgumentParser, name: str, dest: str, help_text: str) -> None:
    parser.add_argument(f"--{name}", dest=dest, action="store_true", default=None, help=help_text)


def _add_train_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training configuration (overrides presets and --config)")
    group.add_argument("--batch-size", type=int)
    group.add_argument("--peak-lr", type=float)
    group.add_argument("--warmup-fraction", type=float)
    group.add_argument("--beta1", type=float)
    group.add_argument("--beta2", type=float)
    group.add_argument("--epochs", type=int)
    group.add_argument("--batches-per-epoch", type=int)
    _bool_flag(group, "lazy-adam", "lazy_adam", "sparse Adam updates for the embeddings")
    group.add_argument("--seed", type=int)
    group.add_argument("--detection-weight", type=float)
    group.add_argument("--linking-weight", type=float)
    group.add_argument("--at-most-k-links", type=int)
    group.add_argument("--linking-loss", choices=["uniform", "marginal"])
    _bool_flag(group, "scale-attention", "scale_attention", "divide antecedent scores by sqrt(dim)")
    group.add_argument("--fixed-transitions", dest="learn_transitions", action="store_false", default=None,
                       help="keep CRF transition scores at zero")
    group.add_argument("--dim", type=int)
    group.add_argument("--layers", type=int)
    group.add_argument("--attention-heads", type=int)
    group.add_argument("--dropout", type=float)
    group.add_argument("--min-count", type=int)
    group.add_argument("--dtype", choices=["float32", "float64"])
    group.add_argument("--window-size", type=int)
    group.add_argument("--right-context", type=int)
    group.add_argument("--mixing", choices=["logarithmic", "uniform", "linear", "half_focus"])
    group.add_argument("--half-focus-target")
    _bool_flag(group, "use-corpus-id", "use_corpus_id", "prepend a corpus token to every window")
    group.add_argument("--exclude", action="append", help="corpus id left out of training (repeatable)")
    _bool_flag(group, "with-singletons", "with_singletons", "score singleton entities on dev data")
    group.add_argument("--full-mentions", dest="reduce_to_heads", action="store_false", default=None,
                       help="keep full predicted spans instead of reducing them to heads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m app.main", description="Multilingual coreference toolkit for CorefUD data.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--log-format", choices=["text", "json"], default=settings.log_format)
    parser.add_argument("--jobs", type=int, default=settings.jobs, help="documents processed in parallel")
    parser.add_argument("--marker", help=f"empty node marker character (default {settings.empty_node_marker})")
    commands = parser.add_subparsers(dest="command", required=True)

    convert = commands.add_parser("convert", help="normalize a CorefUD file")
    convert.add_argument("input")
    convert.add_argument("-o", "--output")
    convert.add_argument("--corpus-id")
    direction = convert.add_mutually_exclusive_group()
    direction.add_argument("--surface", action="store_true", help="write empty nodes as marker-prefixed forms")
    direction.add_argument("--restore", action="store_true", help="strip the marker from surfaced empty nodes")
    convert.set_defaults(handler=cmd_convert)

    tags = commands.add_parser("tags", help="stack-instruction tag dumps")
    tag_commands = tags.add_subparsers(dest="tags_command", required=True)
    encode = tag_commands.add_parser("encode", help="CorefUD -> tag dump")
    encode.add_argument("input", nargs="?", default="-")
    encode.add_argument("-o", "--output")
    encode.set_defaults(handler=cmd_tags_encode)
    decode = tag_commands.add_parser("decode", help="tag dump -> CorefUD (one entity per mention)")
    decode.add_argument("input", nargs="?", default="-")
    decode.add_argument("-o", "--output")
    decode.set_defaults(handler=cmd_tags_decode)

    train = commands.add_parser("train", help="train the joint model")
    train.add_argument("--train", nargs="+", required=True, help="training CorefUD files")
    train.add_argument("--dev", nargs="+", help="development CorefUD files")
    train.add_argument("--config", help="YAML file of training settings")
    train.add_argument("--preset", action="append", choices=sorted(PRESETS), help="applied left to right")
    train.add_argument("--output-dir")
    _add_train_arguments(train)
    train.set_defaults(handler=cmd_train)

    predict = commands.add_parser("predict", help="predict entities with a checkpoint")
    predict.add_argument("--model", required=True)
    predict.add_argument("--input", required=True)
    predict.add_argument("--output", required=True)
    predict.add_argument("--corpus-id")
    predict.add_argument("--full-mentions", action="store_true")
    predict.set_defaults(handler=cmd_predict)

    score = commands.add_parser("score", help="MUC, B3, CEAF-e and CoNLL scores")
    score.add_argument("--key", action="append", required=True)
    score.add_argument("--response", action="append", required=True)
    score.add_argument("--with-singletons", action="store_true")
    score.add_argument("--json", help="write the scores as JSON")
    score.set_defaults(handler=cmd_score)

    mix = commands.add_parser("mix", help="show sampling ratios of a dataset mix")
    mix.add_argument("--config", required=True, help="YAML mix configuration")
    mix.add_argument("--strategy", choices=["logarithmic", "uniform", "linear", "half_focus"])
    mix.add_argument("--target")
    mix.add_argument("--exclude", action="append")
    mix.add_argument("--seed", type=int)
    _bool_flag(mix, "use-corpus-id", "use_corpus_id", "tag samples with their corpus token")
    mix.add_argument("--samples", type=int, default=0, help="draw this many samples and count them")
    mix.set_defaults(handler=cmd_mix)

    synth = commands.add_parser("synth", help="generate a synthetic CorefUD corpus")
    synth.add_argument("--output", required=True)
    synth.add_argument("--config", help="YAML file of generator settings")
    synth.add_argument("--documents", type=int)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--corpus-id")
    synth.add_argument("--crossing-prob", type=float)
    synth.add_argument("--empty-node-prob", type=float)
    synth.add_argument("--max-depth", type=int)
    synth.set_defaults(handler=cmd_synth)

    selftest = commands.add_parser("selftest", help="run the brute-force oracle suites")
    selftest.add_argument("--suite", action="append", choices=sorted(SUITES))
    selftest.set_defaults(handler=cmd_selftest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    setup_logging(args.log_level, args.log_format)
    try:
        return args.handler(args)
    except CorefError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e.detail}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

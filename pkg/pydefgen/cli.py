"""Command line interface of ``pydefgen``.

Subcommands: ``prepare``, ``train``, ``generate``, ``evaluate``, ``ablate`` and
``gradcheck``.
"""
import argparse
from dataclasses import asdict, replace
import json
import logging
from pathlib import Path
import sys
from typing import Callable, Optional, Sequence

from .ablation import ABLATION_ARMS, run_ablation
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    PRESET_SCHEDULES,
    DataConfig,
    RunConfig,
    load_run_config,
    preset,
    run_root,
)
from .const import LOGGER, SPLIT_NAMES
from .data import (
    Dataset,
    Entry,
    Vocab,
    build_vocab,
    dataset_statistics,
    load_dataset,
    load_splits,
    parse_records,
)
from .decoding import DecodeConfig, generate_all
from .demo import write_demo_corpus
from .evaluation import evaluate_split, write_generations
from .exceptions import (
    PydefgenConfigMismatch,
    PydefgenError,
    PydefgenInputError,
    PydefgenStageOrderError,
)
from .gradcheck import op_names, run_gradcheck
from .manifest import RunManifest, file_hash
from .model import Seq2SeqModel
from .models.common import DatasetFormat, TargetOccurrence
from .training import train_one_stage, train_stage

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2

PREPARED_VOCAB = "vocab.json"
PREPARED_SPLITS = "splits"
CHECKPOINT_NAME = "best.ckpt"

_NO_DATA = "No data: pass --data or set data.data_dir in the config"
_LENIENT_HELP = "Skip malformed records instead of failing"

Handler = Callable[[argparse.Namespace], int]


def exit_code(exception: BaseException) -> int:
    """Map an exception to the process exit code.

    Args:
        exception (BaseException): Error raised by a command.

    Returns:
        int: 2 for input errors, 1 for numeric, tape and other failures.
    """
    if isinstance(exception, (PydefgenInputError, OSError)):
        return EXIT_INPUT_ERROR
    return EXIT_CHECK_FAILED


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "config", None):
        config = load_run_config(args.config)
    elif getattr(args, "preset", None):
        config = preset(args.preset)
    else:
        config = RunConfig()
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "literal_sum", False):
        config = replace(config, training=replace(config.training, reduction="sum"))
    return config


def _run_dir(out: Optional[str], manifest: RunManifest) -> Path:
    return Path(out) if out else run_root() / manifest.run_name


def _raw_splits(path: Path, format: DatasetFormat, strict: bool) -> dict[str, Dataset]:
    """Splits of a corpus directory, or a single file read as the training split."""
    if path.is_file():
        return {
            "train": load_dataset(path, format, strict),
            "valid": Dataset([]),
            "test": Dataset([]),
        }
    if not path.is_dir():
        raise PydefgenInputError(f"Data path not found: {path}")
    return load_splits(path, format, strict)


def _read_corpus(path: Path, data: DataConfig) -> tuple[Vocab, dict[str, list[Entry]]]:
    """Vocabulary and splits of a prepared directory or of a raw corpus."""
    if (path / PREPARED_VOCAB).is_file():
        vocab = Vocab.load(path / PREPARED_VOCAB)
        datasets = load_splits(path / PREPARED_SPLITS, "jsonl", data.strict)
    else:
        datasets = _raw_splits(path, data.format, data.strict)
        vocab = build_vocab(datasets["train"].entries, data.min_freq, data.max_vocab)
    return vocab, {name: list(datasets[name].entries) for name in SPLIT_NAMES}


def _read_entries(
    data: str, format: Optional[DatasetFormat], strict: bool, split: str = "test"
) -> list[Entry]:
    """Entries from stdin (``-``), a file, or one split of a corpus directory."""
    if data == "-":
        stdin = parse_records(sys.stdin, format or "tsv", strict, "<stdin>")
        return list(stdin.entries)
    path = Path(data)
    if path.is_dir():
        if (path / PREPARED_SPLITS).is_dir():
            splits = load_splits(path / PREPARED_SPLITS, "jsonl", strict, (split,))
        else:
            splits = load_splits(path, format or "tsv", strict, (split,))
        return list(splits[split].entries)
    return list(load_dataset(path, format, strict).entries)


def _entry_record(entry: Entry) -> str:
    return json.dumps(
        {
            "word": entry.word,
            "context": entry.context,
            "definition": entry.definition,
            "span": list(entry.target_span),
        },
        ensure_ascii=False,
    )


def cmd_prepare(args: argparse.Namespace) -> int:
    """Tokenize a corpus, build the vocabulary and print split statistics."""
    if not args.data and not args.demo_data:
        raise PydefgenInputError("Pass --data or --demo-data")
    data_config = DataConfig(
        data_dir=None if args.demo_data else args.data,
        format="tsv" if args.demo_data else args.format,
        min_freq=args.min_freq,
        max_vocab=args.max_vocab,
        strict=not args.lenient,
    )
    manifest = RunManifest(
        "prepare", {"data": asdict(data_config), "demo_data": args.demo_data}, args.seed
    )
    run_dir = _run_dir(args.out, manifest)
    if args.demo_data:
        source = run_dir / "raw"
        write_demo_corpus(source, args.seed)
    else:
        source = Path(args.data)
        manifest.inputs["data"] = str(source)

    datasets = _raw_splits(source, data_config.format, data_config.strict)
    vocab = build_vocab(
        datasets["train"].entries, data_config.min_freq, data_config.max_vocab
    )
    manifest.outputs["vocab"] = str(vocab.save(run_dir / PREPARED_VOCAB))
    (run_dir / PREPARED_SPLITS).mkdir(parents=True, exist_ok=True)

    print(
        f"{'split':<8}{'phrases':>9}{'entries':>9}"
        f"{'ctx len':>9}{'def len':>9}{'rejected':>10}"
    )
    for name in SPLIT_NAMES:
        dataset = datasets[name]
        target = run_dir / PREPARED_SPLITS / f"{name}.jsonl"
        records = "".join(_entry_record(entry) + "\n" for entry in dataset)
        target.write_text(records, encoding="utf-8")
        manifest.outputs[name] = str(target)
        stats = dataset_statistics(dataset.entries)
        print(
            f"{name:<8}{stats.phrases:>9}{stats.entries:>9}"
            f"{stats.mean_context_length:>9.2f}{stats.mean_definition_length:>9.2f}"
            f"{len(dataset.rejections):>10}"
        )
    print(f"vocab size {len(vocab)}, written to {run_dir}")
    manifest.finish()
    manifest.write(run_dir)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Run one training stage and save its best checkpoint."""
    config = _resolve_config(args)
    data_path = args.data or config.data.data_dir
    if data_path is None:
        raise PydefgenInputError(_NO_DATA)
    if args.stage == "2" and not args.init_from:
        raise PydefgenStageOrderError("Stage 2 needs --init-from a stage 1 checkpoint")
    vocab, splits = _read_corpus(Path(data_path), config.data)
    settings = config.training
    model_config = config.model.resolve(len(vocab))

    snapshot = {
        **config.to_dict(),
        "stage": args.stage,
        "init_from": file_hash(args.init_from) if args.stage == "2" else None,
    }
    manifest = RunManifest(
        "train", snapshot, settings.seed, inputs={"data": str(data_path)}
    )
    run_dir = _run_dir(args.out, manifest)
    for name in ("epochs.jsonl", "steps.jsonl"):
        (run_dir / name).unlink(missing_ok=True)

    progress = _progress(args)
    if args.stage == "2":
        manifest.inputs["init_from"] = str(args.init_from)
        initial = load_checkpoint(args.init_from, expected_model=model_config)
        if initial.vocab.tokens != vocab.tokens:
            raise PydefgenConfigMismatch(
                f"Checkpoint {args.init_from} was trained with a different vocabulary"
            )
        model = initial.build_model(settings.seed)
        stage = config.stage_two
        result = train_stage(
            model,
            vocab,
            splits["train"],
            splits["valid"],
            stage,
            settings,
            state=initial.state,
            log_dir=run_dir,
            progress=progress,
        )
    else:
        if args.init_from:
            LOGGER.warning("--init-from is ignored by stage %s", args.stage)
        model = Seq2SeqModel(model_config, seed=settings.seed)
        if args.stage == "1":
            stage = config.stage_one
            result = train_stage(
                model,
                vocab,
                splits["train"],
                splits["valid"],
                stage,
                settings,
                log_dir=run_dir,
                progress=progress,
            )
        else:
            stage = config.stage_two
            result = train_one_stage(
                model,
                vocab,
                splits["train"],
                splits["valid"],
                stage,
                settings,
                log_dir=run_dir,
                progress=progress,
            )

    checkpoint = Checkpoint(
        model_config,
        result.params,
        result.state,
        vocab,
        stage,
        extra={
            "config_hash": manifest.config_hash,
            "target_occurrence": settings.target_occurrence,
            "decode": settings.decode.to_dict(),
        },
    )
    saved = save_checkpoint(run_dir / CHECKPOINT_NAME, checkpoint)
    manifest.outputs["checkpoint"] = str(saved)
    manifest.outputs["epochs"] = str(run_dir / "epochs.jsonl")
    manifest.finish()
    manifest.write(run_dir)
    print(
        f"stage {args.stage}: best epoch {result.state.best_epoch} "
        f"(score {result.state.best_score:.4f}), checkpoint {saved}"
    )
    return EXIT_OK


def _decode_settings(
    args: argparse.Namespace, checkpoint: Checkpoint
) -> tuple[DecodeConfig, TargetOccurrence]:
    extra = checkpoint.extra or {}
    decode = DecodeConfig(**extra["decode"]) if "decode" in extra else DecodeConfig()
    values = decode.to_dict()
    if args.beam is not None:
        strategy = "beam" if args.beam > 1 else "greedy"
        values.update(strategy=strategy, beam_size=args.beam)
    if args.max_decode_len is not None:
        values["max_decode_len"] = args.max_decode_len
    return DecodeConfig(**values), extra.get("target_occurrence", "context")


def cmd_generate(args: argparse.Namespace) -> int:
    """Write one generated definition per input entry."""
    checkpoint = load_checkpoint(args.checkpoint)
    decode, target_occurrence = _decode_settings(args, checkpoint)
    entries = _read_entries(args.data, args.format, not args.lenient, args.split)
    model = checkpoint.build_model()
    generations = generate_all(
        model,
        checkpoint.vocab,
        entries,
        decode,
        target_occurrence,
        args.workers,
        _progress(args),
    )
    if args.out:
        write_generations(args.out, entries, generations)
        LOGGER.info("Wrote %d generations to %s", len(generations), args.out)
    else:
        for generation in generations:
            print(" ".join(generation.tokens))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Decode a split, score it and write ``metrics.json`` and ``generations.tsv``."""
    checkpoint = load_checkpoint(args.checkpoint)
    decode, target_occurrence = _decode_settings(args, checkpoint)
    data_path = Path(args.data)
    snapshot = {
        "checkpoint": file_hash(args.checkpoint),
        "data": file_hash(data_path) if data_path.is_file() else args.data,
        "split": args.split,
        "decode": decode.to_dict(),
    }
    manifest = RunManifest(
        "evaluate",
        snapshot,
        checkpoint.state.seed,
        inputs={"checkpoint": str(args.checkpoint), "data": str(args.data)},
    )
    run_dir = _run_dir(args.out, manifest)
    entries = _read_entries(args.data, args.format, not args.lenient, args.split)
    report = evaluate_split(
        checkpoint.build_model(),
        checkpoint.vocab,
        entries,
        decode,
        run_dir / "generations.tsv",
        target_occurrence,
        args.workers,
        _progress(args),
    )
    metrics = run_dir / "metrics.json"
    metrics.write_text(report.to_json(), encoding="utf-8")
    manifest.outputs.update(
        metrics=str(metrics), generations=str(run_dir / "generations.tsv")
    )
    manifest.finish()
    manifest.write(run_dir)
    print(report.summary())
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    """Sweep one ablation axis and write a Markdown and a JSON comparison table."""
    config = _resolve_config(args)
    data_path = args.data or config.data.data_dir
    if data_path is None:
        raise PydefgenInputError(_NO_DATA)
    vocab, splits = _read_corpus(Path(data_path), config.data)
    if not splits["test"]:
        raise PydefgenInputError(
            f"Ablation needs a non-empty test split in {data_path}"
        )
    seeds = args.seeds or [config.training.seed]
    manifest = RunManifest(
        "ablate",
        {**config.to_dict(), "axis": args.axis, "seeds": seeds},
        seeds[0],
        inputs={"data": str(data_path)},
    )
    run_dir = _run_dir(args.out, manifest)
    table = run_ablation(args.axis, config, vocab, splits, seeds, _progress(args))
    written = table.write(run_dir)
    manifest.outputs.update({kind: str(path) for kind, path in written.items()})
    manifest.finish()
    manifest.write(run_dir)
    print(table.to_markdown(), end="")
    failed = [arm for arm in table.arms if arm.failed]
    if failed:
        LOGGER.error("%d of %d arms failed", len(failed), len(table.arms))
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Compare analytic and finite-difference gradients; fail above tolerance."""
    seed = args.seed
    if seed is None:
        seed = load_run_config(args.config).training.seed if args.config else 0
    results = run_gradcheck(args.tolerance, args.corrupt_gradient, seed, args.samples)
    for result in results:
        verdict = "ok" if result.passed else "FAIL"
        print(f"{result.name:<18}{result.error:>12.3e}  {verdict}")
    failed = [result.name for result in results if not result.passed]
    if failed:
        LOGGER.error("%d check(s) above tolerance: %s", len(failed), ", ".join(failed))
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _add_decode_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--checkpoint", required=True, help="Checkpoint written by 'train'"
    )
    parser.add_argument("--beam", type=int, help="Beam width; 1 decodes greedily")
    parser.add_argument(
        "--max-decode-len", type=int, help="Most generated tokens per entry"
    )
    parser.add_argument(
        "--format",
        choices=["tsv", "jsonl"],
        help="Input format, defaults to the file suffix",
    )
    parser.add_argument(
        "--split",
        default="test",
        choices=list(SPLIT_NAMES),
        help="Split of a corpus directory",
    )
    parser.add_argument("--workers", type=int, default=1, help="Decoding threads")
    parser.add_argument("--lenient", action="store_true", help=_LENIENT_HELP)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Run config JSON")
    parser.add_argument(
        "--preset", choices=sorted(PRESET_SCHEDULES), help="Named run preset"
    )
    parser.add_argument(
        "--data", help="Raw corpus directory or file, or a prepared directory"
    )
    parser.add_argument("--seed", type=int, help="Override the config seed")
    parser.add_argument(
        "--literal-sum",
        action="store_true",
        help="Sum the contrastive loss over the batch instead of averaging",
    )
    parser.add_argument(
        "--out", help="Run directory, defaults to $PYDEFGEN_RUN_ROOT/<command>-<hash>"
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the ``pydefgen`` command."""
    parser = argparse.ArgumentParser(
        prog="pydefgen", description="Contrastive definition generation"
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity",
    )
    parser.add_argument(
        "--quiet", action="store_true", help="Only log warnings and hide progress bars"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    prepare = commands.add_parser(
        "prepare", help="Build the vocabulary and tokenized split caches"
    )
    prepare.add_argument(
        "--data", help="Corpus directory with train/valid/test files, or one file"
    )
    prepare.add_argument(
        "--demo-data",
        action="store_true",
        help="Generate the synthetic 50-entry corpus",
    )
    prepare.add_argument(
        "--format", default="tsv", choices=["tsv", "jsonl"], help="Corpus format"
    )
    prepare.add_argument(
        "--min-freq",
        type=int,
        default=1,
        help="Drop rarer tokens from the vocabulary",
    )
    prepare.add_argument(
        "--max-vocab", type=int, help="Most non-special vocabulary tokens"
    )
    prepare.add_argument("--lenient", action="store_true", help=_LENIENT_HELP)
    prepare.add_argument("--seed", type=int, default=0, help="Seed of the demo corpus")
    prepare.add_argument("--out", help="Output directory")
    prepare.set_defaults(handler=cmd_prepare)

    train = commands.add_parser("train", help="Train one stage")
    _add_config_flags(train)
    train.add_argument(
        "--stage",
        default="1",
        choices=["1", "2", "one-shot"],
        help=(
            "1: generation only; 2: mixed loss from --init-from; "
            "one-shot: mixed loss from scratch"
        ),
    )
    train.add_argument("--init-from", help="Stage 1 checkpoint to continue from")
    train.set_defaults(handler=cmd_train)

    generate = commands.add_parser("generate", help="Generate definitions")
    _add_decode_flags(generate)
    generate.add_argument(
        "--data",
        required=True,
        help="Entries file, corpus directory, or '-' for stdin",
    )
    generate.add_argument(
        "--out", help="TSV output, defaults to one definition per line on stdout"
    )
    generate.set_defaults(handler=cmd_generate)

    evaluate = commands.add_parser("evaluate", help="Score a split with BLEU and NIST")
    _add_decode_flags(evaluate)
    evaluate.add_argument(
        "--data", required=True, help="Entries file or corpus directory"
    )
    evaluate.add_argument("--out", help="Run directory")
    evaluate.set_defaults(handler=cmd_evaluate)

    ablate = commands.add_parser("ablate", help="Sweep one ablation axis")
    _add_config_flags(ablate)
    ablate.add_argument(
        "--axis", required=True, choices=list(ABLATION_ARMS), help="Sweep axis"
    )
    ablate.add_argument(
        "--seeds", type=int, nargs="+", help="Seeds to average each arm over"
    )
    ablate.set_defaults(handler=cmd_ablate)

    gradcheck = commands.add_parser(
        "gradcheck",
        help="Finite-difference gradient checks",
        description=(
            "Check every differentiable op, then the full mixed loss of a fixed "
            "one-layer model (d_model 8, 2 heads). Model settings of --config are "
            "ignored."
        ),
    )
    gradcheck.add_argument(
        "--config", help="Run config JSON; only its training seed is used"
    )
    gradcheck.add_argument(
        "--tolerance",
        type=float,
        help=(
            "Largest accepted error, defaults to 1e-6 per op "
            "and 1e-4 for the full loss"
        ),
    )
    gradcheck.add_argument(
        "--corrupt-gradient",
        choices=op_names(),
        help="Scale one op's gradient on purpose",
    )
    gradcheck.add_argument(
        "--samples",
        type=int,
        default=200,
        help="Sampled coordinates of the full-loss check",
    )
    gradcheck.add_argument("--seed", type=int, help="Input seed")
    gradcheck.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line; returns the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level="WARNING" if args.quiet else args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: Handler = args.handler
    try:
        return handler(args)
    except (PydefgenError, OSError) as exception:
        print(f"error: {exception}", file=sys.stderr)
        return exit_code(exception)

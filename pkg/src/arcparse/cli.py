"""Command line entry point: train, parse, evaluate, validate, stats.

Exit codes: 0 ok, 1 usage, 2 data, 3 numeric, 4 model, 5 validation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from arcparse.conllx import ConllError, parse_conllx, reannotate, treebank_stats, validate
from arcparse.evaluator import AlignmentError, attachment_scores
from arcparse.numerics import NumericsError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_MODEL, EXIT_VALIDATION = range(6)

log = logging.getLogger("arcparse")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, message)


@dataclass
class CliConfig:
    subcommand: str
    paths: dict[str, str | None] = field(default_factory=dict)
    overrides: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    exclude_mt_punct: bool = False
    threads: int = 1


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(EXIT_USAGE, f"cannot read config {path}: {e.strerror}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise CliError(EXIT_USAGE, f"{path}:{lineno}: expected key=value")
        values[key.strip()] = value.strip()
    return values


def _read_text(path: str, code: int = EXIT_DATA) -> str:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise CliError(code, f"cannot read {path}: {e}") from None


def _read_corpus(path: str, allow_placeholders: bool = False, check: bool = False):
    text = _read_text(path)
    try:
        sentences = parse_conllx(text, allow_placeholders=allow_placeholders)
    except ConllError as e:
        raise CliError(EXIT_DATA, f"{path}:{e}") from None
    if check:
        for i, s in enumerate(sentences, 1):
            report = validate(s, i)
            if not report.ok:
                raise CliError(EXIT_DATA, f"{path}: sentence {i}: {report.violations[0]}")
    return text, sentences


def _load_model(path: str):
    from arcparse.trainer import CheckpointError, load

    try:
        return load(Path(path).read_bytes())
    except OSError as e:
        raise CliError(EXIT_MODEL, f"cannot read model {path}: {e.strerror}") from None
    except CheckpointError as e:
        raise CliError(EXIT_MODEL, f"{path}: {e}") from None


# -- subcommands --------------------------------------------------------------

def cmd_train(cfg: CliConfig) -> int:
    from arcparse.parsing import parse_sentences
    from arcparse.trainer import TrainConfig, TrainingError, load, train

    try:
        config = TrainConfig.from_mapping(cfg.overrides)
    except KeyError as e:
        raise CliError(EXIT_USAGE, e.args[0]) from None
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"bad config value: {e}") from None
    if cfg.seed is not None:
        config.seed = cfg.seed
    config.checkpoint = cfg.paths["model"]

    _, train_set = _read_corpus(cfg.paths["train"], check=True)
    dev_set = _read_corpus(cfg.paths["dev"], check=True)[1] if cfg.paths.get("dev") else []
    if not train_set:
        raise CliError(EXIT_DATA, f"{cfg.paths['train']}: no sentences")

    def report(record):
        line = f"epoch {record.epoch} loss={record.loss:.6f}"
        if record.dev_uas is not None:
            line += f" dev_uas={record.dev_uas:.4f} dev_las={record.dev_las:.4f}"
        print(line, flush=True)

    try:
        result = train(config, train_set, dev_set, on_epoch=report)
    except (TrainingError, NumericsError) as e:
        raise CliError(EXIT_NUMERIC, f"training failed: {e}") from None
    except OSError as e:
        raise CliError(EXIT_MODEL, f"cannot write model: {e}") from None

    # score the checkpoint as written, i.e. after f32 storage
    stored = load(result.checkpoint)
    scores = attachment_scores(train_set, parse_sentences(stored, train_set))
    print(f"best_epoch={result.best_epoch}")
    print(f"train_uas={scores.uas:.6f}")
    print(f"train_las={scores.las:.6f}")
    return EXIT_OK


def cmd_parse(cfg: CliConfig) -> int:
    from arcparse.parsing import parse_sentences

    model = _load_model(cfg.paths["model"])
    text, sentences = _read_corpus(cfg.paths["input"], allow_placeholders=True)
    if model.hp.input_mode == "pos":
        for i, s in enumerate(sentences, 1):
            if any(t.pos is None for t in s.tokens):
                raise CliError(EXIT_DATA, f"sentence {i}: the model needs POSTAG on every token")
    try:
        parsed = parse_sentences(model, sentences, threads=cfg.threads)
    except NumericsError as e:
        raise CliError(EXIT_NUMERIC, str(e)) from None
    try:
        with open(cfg.paths["output"], "w", encoding="utf-8", newline="") as f:
            f.write(reannotate(text, parsed))
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot write {cfg.paths['output']}: {e.strerror}") from None
    log.info("parsed %d sentences", len(parsed))
    return EXIT_OK


def cmd_evaluate(cfg: CliConfig) -> int:
    _, gold = _read_corpus(cfg.paths["gold"])
    _, pred = _read_corpus(cfg.paths["pred"])
    try:
        result = attachment_scores(gold, pred, exclude_mt_punct=cfg.exclude_mt_punct)
    except AlignmentError as e:
        raise CliError(EXIT_DATA, str(e)) from None
    sys.stdout.write(result.report())
    sys.stdout.write("\n" + result.key_values())
    return EXIT_OK


def cmd_validate(cfg: CliConfig) -> int:
    _, sentences = _read_corpus(cfg.paths["input"], allow_placeholders=True)
    bad = 0
    for i, s in enumerate(sentences, 1):
        report = validate(s, i)
        for v in report.violations:
            print(f"sentence {i}: {v}")
        bad += not report.ok
    print(f"sentences={len(sentences)} invalid={bad}")
    return EXIT_VALIDATION if bad else EXIT_OK


def cmd_stats(cfg: CliConfig) -> int:
    _, sentences = _read_corpus(cfg.paths["input"])
    sys.stdout.write(treebank_stats(sentences).format())
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "parse": cmd_parse,
    "evaluate": cmd_evaluate,
    "validate": cmd_validate,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="arcparse", description="Biaffine dependency parser.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write its best checkpoint")
    p.add_argument("--train", required=True, metavar="F", help="training treebank (CoNLL-X)")
    p.add_argument("--dev", metavar="F", help="development treebank used for model selection")
    p.add_argument("--model", required=True, metavar="OUT", help="checkpoint to write")
    p.add_argument("--config", metavar="F", help="key=value hyperparameter file")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("parse", help="annotate HEAD/DEPREL with a trained model")
    p.add_argument("--model", required=True, metavar="F")
    p.add_argument("--input", required=True, metavar="F")
    p.add_argument("--output", required=True, metavar="F")
    p.add_argument("--threads", type=int, default=1, metavar="N")

    p = sub.add_parser("evaluate", help="UAS/LAS of predictions against gold")
    p.add_argument("--gold", required=True, metavar="F")
    p.add_argument("--pred", required=True, metavar="F")
    p.add_argument("--exclude-punct", action="store_true",
                   help="skip MT tokens made only of punctuation")

    for name, text in (("validate", "check tree and label rules"), ("stats", "corpus statistics")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--input", required=True, metavar="F")
    return ap


def parse_args(argv) -> CliConfig:
    args = build_parser().parse_args(argv)
    cfg = CliConfig(args.subcommand)
    for key in ("train", "dev", "model", "input", "output", "gold", "pred"):
        if hasattr(args, key):
            cfg.paths[key] = getattr(args, key)
    if getattr(args, "config", None):
        cfg.overrides = read_config_file(args.config)
    cfg.seed = getattr(args, "seed", None)
    cfg.exclude_mt_punct = getattr(args, "exclude_punct", False)
    cfg.threads = getattr(args, "threads", 1)
    if cfg.threads < 1:
        raise CliError(EXIT_USAGE, "--threads must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return cfg


def main(argv=None) -> int:
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
        return COMMANDS[cfg.subcommand](cfg)
    except CliError as e:
        print(f"arcparse: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: gen-data, graph, train, eval, predict.

Every verb that takes ``--config FILE`` also accepts ``--key=value`` flags
overriding keys of that file (dotted keys such as ``--data.n=500`` reach
nested sections).  Exit codes: 0 success, 1 usage, 2 data, 3 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .corpus import ConfigError as CorpusConfigError
from .corpus import generate_synthetic_corpus
from .frontend import LexError, ParseError, parse_functions, tokenize
from .graph_io import DatasetError, encode_graph, write_jsonl
from .graphs import GraphTooLarge, build_program_graph
from .model import ShapeMismatch
from .objectives import EmptyInput
from .train import (ConfigError, NonFiniteLoss, TrainConfig, apply_overrides, evaluate_checkpoint,
                    predict_source, train)
from . import autodiff as ad

log = logging.getLogger("vulngnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _split_overrides(argv: list[str]) -> tuple[list[str], list[str]]:
    """Separate ``--key=value`` config overrides from the verbs' own options."""
    known = {"--config", "--out", "--checkpoint", "--split", "--ablate", "--threshold", "--indent",
             "--verbose", "--max-nodes"}
    plain, overrides = [], []
    for arg in argv:
        if arg.startswith("--") and "=" in arg and arg.split("=", 1)[0] not in known:
            overrides.append(arg[2:])
        else:
            plain.append(arg)
    return plain, overrides


def _load_config(path: str | None, overrides: list[str]) -> TrainConfig:
    if path is None:
        return TrainConfig.from_dict(apply_overrides({}, overrides))
    return TrainConfig.from_file(path, overrides)


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc


def cmd_gen_data(args, overrides) -> int:
    cfg = _load_config(args.config, overrides)
    samples = generate_synthetic_corpus(cfg.data.n, cfg.data.vuln_ratio, cfg.data_seed, mode=cfg.mode)
    out = args.out or cfg.data.path
    if out is None:
        raise UsageError("gen-data needs --out or data.path")
    write_jsonl(out, samples)
    counts = {s: sum(x.split == s for x in samples) for s in ("train", "valid", "test")}
    print(json.dumps({"path": out, "n": len(samples), "splits": counts}))
    return EXIT_OK


def cmd_graph(args, overrides) -> int:
    if overrides:
        raise UsageError(f"graph takes no config overrides: {overrides}")
    source = _read(args.source)
    for fn in parse_functions(tokenize(source)):
        g = build_program_graph(fn, args.max_nodes)
        print(encode_graph(g, indent=args.indent))
    return EXIT_OK


def cmd_train(args, overrides) -> int:
    cfg = _load_config(args.config, overrides)
    if args.checkpoint:
        cfg.checkpoint = args.checkpoint
    ckpt, history = train(cfg)
    print(json.dumps({"checkpoint": str(ckpt), "best_epoch": history.best_epoch,
                      "epochs_run": len(history.records), "stopped_early": history.stopped_early}))
    return EXIT_OK


def cmd_eval(args, overrides) -> int:
    cfg = _load_config(args.config, overrides)
    metrics = evaluate_checkpoint(args.checkpoint or cfg.checkpoint, cfg, args.split, args.ablate)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_predict(args, overrides) -> int:
    if overrides:
        raise UsageError(f"predict takes no config overrides: {overrides}")
    for rec in predict_source(args.checkpoint, _read(args.source), args.threshold):
        print(json.dumps(rec))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vulngnn", description=__doc__.splitlines()[0])
    ap.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic JSONL corpus")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("graph", help="print the program graph of every function as JSON")
    p.add_argument("source")
    p.add_argument("--max-nodes", type=int, default=500)
    p.add_argument("--indent", type=int, default=None)
    p.set_defaults(fn=cmd_graph)

    p = sub.add_parser("train", help="train and keep the best-validation checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics JSON for one split")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--ablate", action="store_true", help="add AST-only, CFG-only and DFG-only blocks")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="per-function probabilities for a MiniC file")
    p.add_argument("checkpoint")
    p.add_argument("source")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_predict)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    plain, overrides = _split_overrides(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(plain)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args, overrides)
    except (UsageError, ConfigError, CorpusConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LexError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DatasetError, EmptyInput, ShapeMismatch, GraphTooLarge, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, ad.NonFiniteError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

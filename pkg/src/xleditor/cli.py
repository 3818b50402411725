"""``xledit`` command line.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files, unknown config keys, incompatible checkpoints).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import numerics as nx
from .config import ConfigError, RunConfig, keys_help
from .editor import Editor
from .encoding import CorpusError, build_vocab, read_corpus, read_style_corpus
from .evalkit import KINDS, MODES, load_tasks, run_eval, save_tasks, gen_tasks
from .model import CheckpointError, load_model_bundle
from .objectives import train
from .positional import SpanLayout, build_offset_matrix
from .styler import transfer
from . import synth

log = logging.getLogger("xleditor")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of 'section.key = value' lines")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="overrides the 'seed' key")


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys and defaults:\n" + keys_help() + "\n\nenvironment: XLEDIT_LOG=error|info|debug"
    ap = _Parser(prog="xledit", description="Insertion-aware text editing models.",
                 epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a corpus")
    _common(p)
    p.add_argument("--corpus", help="one document per line (or style<TAB>text with --styled)")
    p.add_argument("--styled", action="store_true", help="corpus is style-labelled TSV")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--metrics", help="JSON-lines loss report path")

    p = sub.add_parser("gen-tasks", help="generate synthetic evaluation tasks")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--styled", action="store_true")
    p.add_argument("--references", help="lines paired with --corpus in the other style (transfer)")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--n", type=int)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task file")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--tasks")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--classifier", help="checkpoint judging transfer outputs")
    p.add_argument("--out", help="also write the metrics JSON here")

    p = sub.add_parser("edit", help="apply one editing operation to each stdin line")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--op", choices=("locate", "infill", "delete", "replace"), required=True)
    p.add_argument("--i", type=int, help="span start (1-based) or gap for infill")
    p.add_argument("--j", type=int, help="span end (1-based, inclusive)")
    p.add_argument("--y", default="", help="replacement text for replace")
    p.add_argument("--style", type=int)

    p = sub.add_parser("transfer", help="style-transfer each line of an input file")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--src-style", type=int, required=True)
    p.add_argument("--tgt-style", type=int, required=True)
    p.add_argument("--v-thres", type=float, help="overrides transfer.v_thres")
    p.add_argument("--input", help="input file (default stdin)")
    p.add_argument("--output", help="output file (default stdout)")
    p.add_argument("--trace", help="JSON-lines edit trace path")

    p = sub.add_parser("inspect-offsets", help="print the offset matrix for one span layout")
    p.add_argument("--len", type=int, required=True, dest="total_len")
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--l2r", action="store_true")

    p = sub.add_parser("gen-corpus", help="write a synthetic corpus")
    p.add_argument("--kind", choices=("cycle", "lexicon"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-sents", type=int, default=3)
    p.add_argument("--max-sents", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--references", help="lexicon: also write each line's other-style counterpart here")
    return ap


# ---------------------------------------------------------------- helpers


def _settings(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    return cfg


def _path(args, cfg: RunConfig, flag: str, key: str, required: bool = True) -> str:
    v = getattr(args, flag, None) or cfg[f"paths.{key}"]
    if required and not v:
        raise UsageError(f"--{flag.replace('_', '-')} (or paths.{key}) is required")
    return v


def _load(path: str):
    if not Path(path).exists():
        raise DataError(f"no such checkpoint: {path}")
    return load_model_bundle(path)


def _read_lines(path: str | None) -> list[str]:
    if path is None:
        return sys.stdin.read().splitlines()
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _settings(args)
    corpus = _path(args, cfg, "corpus", "corpus")
    ckpt = _path(args, cfg, "checkpoint", "checkpoint")
    metrics = _path(args, cfg, "metrics", "metrics", required=False) or None
    tcfg = cfg.train_config()
    if args.styled:
        rows = read_style_corpus(corpus)
        n_styles = max(s for s, _ in rows) + 1
        if min(s for s, _ in rows) < 0:
            raise CorpusError(f"{corpus}: negative style id")
        texts = [t for _, t in rows]
        styles = [s for s, _ in rows]
    else:
        texts, styles, n_styles = read_corpus(corpus), None, 0
    vocab = build_vocab(texts, n_styles=n_styles)
    docs = [vocab.tokenize(t) for t in texts]
    mcfg = cfg.model_config(len(vocab), n_styles=n_styles, l2r=tcfg.l2r_mode)
    train(docs, vocab, tcfg, mcfg, styles=styles, checkpoint_path=ckpt, metrics_path=metrics)
    return 0


def cmd_gen_tasks(args) -> int:
    cfg = _settings(args)
    corpus = _path(args, cfg, "corpus", "corpus")
    out = _path(args, cfg, "out", "tasks")
    kind = args.kind or cfg["eval.kind"]
    n = args.n if args.n is not None else cfg["eval.n"]
    styles = refs = None
    if args.styled:
        rows = read_style_corpus(corpus)
        texts, styles = [t for _, t in rows], [s for s, _ in rows]
    else:
        texts = read_corpus(corpus)
    if args.references:
        refs = read_corpus(args.references)
        if len(refs) != len(texts):
            raise DataError("--references must have one line per corpus line")
    rng = nx.spawn_rng(cfg["seed"], 3)
    save_tasks(gen_tasks(texts, kind, n, rng, max_span=cfg["eval.max_span"], styles=styles, references=refs), out)
    return 0


def cmd_eval(args) -> int:
    cfg = _settings(args)
    tasks = load_tasks(_path(args, cfg, "tasks", "tasks"))
    mode = args.mode or cfg["eval.mode"]
    editor = vocab = None
    ckpt = _path(args, cfg, "checkpoint", "checkpoint", required=mode != "copy")
    if ckpt:
        model, vocab = _load(ckpt)
        editor = Editor(model, vocab, batch_size=cfg["eval.batch_size"])
    classifier = None
    cpath = _path(args, cfg, "classifier", "classifier", required=False)
    if cpath:
        classifier, cvocab = _load(cpath)
        if vocab is not None and cvocab != vocab:
            raise DataError("classifier vocabulary differs from the model vocabulary")
        vocab = vocab or cvocab
    if vocab is None:
        raise UsageError("eval needs --checkpoint or --classifier for the vocabulary")
    report = run_eval(editor, tasks, mode, style_classifier=classifier,
                      transfer_cfg=cfg.transfer_config(0, 1), vocab=vocab)
    text = report.to_json()
    print(text)
    out = _path(args, cfg, "out", "out", required=False)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_edit(args) -> int:
    cfg = _settings(args)
    model, vocab = _load(_path(args, cfg, "checkpoint", "checkpoint"))
    ed = Editor(model, vocab, batch_size=cfg["eval.batch_size"])
    for line in _read_lines(None):
        x = vocab.tokenize(line)
        if args.op == "locate":
            print(ed.locate(x))
            continue
        if args.op == "infill":
            g = len(x) if args.i is None else args.i
            res = ed.infill(x, g, strategy="l2r" if ed.l2r else "xledit")
            out = x[:g] + list(res.y) + x[g:]
            print(vocab.detokenize(out) + ("\t[capped]" if res.capped else ""))
            continue
        if args.i is None or args.j is None:
            raise UsageError(f"--op {args.op} needs --i and --j")
        if args.op == "delete":
            print(vocab.detokenize(x[: args.i - 1] + x[args.j:]))
        else:
            try:
                y = vocab.encode_strict(args.y.split())
            except KeyError as e:
                raise DataError(str(e)) from e
            odds = ed.replace_odds(x, args.i, args.j, y, style=args.style)
            print(f"{vocab.detokenize(x[: args.i - 1] + y + x[args.j:])}\t{odds:.6g}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _settings(args)
    if args.v_thres is not None:
        cfg.set("transfer.v_thres", args.v_thres)
    model, vocab = _load(_path(args, cfg, "checkpoint", "checkpoint"))
    for s in (args.src_style, args.tgt_style):
        if not 0 <= s < vocab.n_styles:
            raise DataError(f"style {s} outside the model's {vocab.n_styles} styles")
    tcfg = cfg.transfer_config(args.src_style, args.tgt_style)
    ed = Editor(model, vocab, batch_size=cfg["eval.batch_size"])
    outs, traces = [], []
    for line in _read_lines(args.input):
        x = vocab.tokenize(line)
        if not x:
            outs.append(line)
            continue
        y, trace = transfer(ed, x, tcfg)
        outs.append(vocab.detokenize(y))
        traces.append(trace.to_jsonl(vocab))
    text = "".join(o + "\n" for o in outs)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    trace_path = args.trace or cfg["paths.trace"]
    if trace_path:
        Path(trace_path).write_text("".join(traces), encoding="utf-8")
    return 0


def cmd_inspect_offsets(args) -> int:
    try:
        layout = SpanLayout(args.total_len, args.a, args.b)
    except ValueError as e:
        raise UsageError(str(e)) from e
    om = build_offset_matrix(layout, l2r=args.l2r)
    print(om.render())
    return 0


def cmd_gen_corpus(args) -> int:
    rng = nx.make_rng(args.seed)
    if args.kind == "cycle":
        if not 1 <= args.min_sents <= args.max_sents:
            raise UsageError("need 1 <= --min-sents <= --max-sents")
        lines = synth.cycle_corpus(args.n, rng, synth.CycleSpec(min_sents=args.min_sents, max_sents=args.max_sents))
        Path(args.out).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    else:
        rows, refs = [], []
        for k in range(args.n):
            pair = synth.lexicon_pair(rng)
            s = k % 2
            rows.append(f"{s}\t{' '.join(pair[s])}\n")
            refs.append(" ".join(pair[1 - s]) + "\n")
        Path(args.out).write_text("".join(rows), encoding="utf-8")
        if args.references:
            Path(args.references).write_text("".join(refs), encoding="utf-8")
    return 0


COMMANDS = {"train": cmd_train, "gen-tasks": cmd_gen_tasks, "eval": cmd_eval, "edit": cmd_edit,
            "transfer": cmd_transfer, "inspect-offsets": cmd_inspect_offsets, "gen-corpus": cmd_gen_corpus}


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("XLEDIT_LOG", "error").lower()
    if level not in LOG_LEVELS:
        print(f"xledit: XLEDIT_LOG must be one of {', '.join(LOG_LEVELS)}", file=sys.stderr)
        return 1
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"xledit: {e}", file=sys.stderr)
        return 1
    except (DataError, ConfigError, CorpusError, CheckpointError, OSError) as e:
        print(f"xledit: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"xledit: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

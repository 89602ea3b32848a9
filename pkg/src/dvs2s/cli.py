"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
Configuration precedence: built-in defaults < the configuration stored in
the input checkpoint < config file (``--config`` or the ``DVS2S_CONFIG``
environment variable) < ``--set KEY=VALUE`` < dedicated flags.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from dvs2s import benchmark, checkpoint, inference, kernels, metrics, model, synthetic, training
from dvs2s.config import ConfigError, TrainConfig, coerce, read_config_file
from dvs2s.corpus import EOS, CorpusError, Vocabulary, build_vocabulary, load_corpus

log = logging.getLogger("dvs2s")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag name -> TrainConfig field
_CONFIG_FLAGS = {
    "emb": ("emb", int, "word embedding size p"),
    "hidden": ("hidden", int, "hidden size m"),
    "samples": ("samples", int, "Monte-Carlo samples per example"),
    "batch": ("batch_size", int, "mini-batch size"),
    "lr": ("lr", float, "initial learning-rate scale"),
    "epochs": ("max_epochs", int, "maximum joint-training epochs"),
    "pretrain_epochs": ("pretrain_epochs", int, "S2S pretraining epochs"),
    "predictor_epochs": ("predictor_epochs", int, "word-predictor pretraining epochs"),
    "topk": ("topk_content", int, "content words kept in the dynamic vocabulary"),
    "beam": ("beam", int, "beam size"),
    "max_len": ("max_len", int, "maximum response length"),
    "seed": ("seed", int, "random seed"),
}


def _add_config_flags(parser, names):
    parser.add_argument("--config", help="key=value configuration file (default: $DVS2S_CONFIG)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")
    for name in names:
        field, kind, text = _CONFIG_FLAGS[name]
        parser.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None, help=text)


def _run_config(args, base=None):
    values = {}
    path = getattr(args, "config", None) or os.environ.get("DVS2S_CONFIG")
    if path:
        values.update(read_config_file(path))
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for name, (field, _, _) in _CONFIG_FLAGS.items():
        v = getattr(args, name, None)
        if v is not None:
            values[field] = v
    start = base or TrainConfig()
    return start.replace(**coerce(values))


def _sink(path):
    if path is None:
        return None, None
    fh = open(path, "a", encoding="utf-8")

    def write(line):
        fh.write(line + "\n")
        fh.flush()

    return write, fh


def _load_checkpoint(path, vocab):
    ck = checkpoint.load(path)
    if ck["vocab_digest"] and ck["vocab_digest"] != vocab.digest():
        raise CorpusError(f"{path} was trained with a different vocabulary")
    return ck


def _save(path, params, cfg, vocab, stage, state=None, optimizer=None):
    scalars = {"stage": stage}
    if state is not None:
        scalars.update(state)
    checkpoint.save(path, params, config=cfg.to_dict(), vocab_digest=vocab.digest(),
                    state=scalars, optimizer=optimizer)


def _read_messages(path):
    fh = sys.stdin if path in (None, "-") else open(path, encoding="utf-8")
    try:
        return [line.rstrip("\n").split("\t", 1)[0].split() for line in fh]
    finally:
        if fh is not sys.stdin:
            fh.close()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    paths = synthetic.write_corpus(args.out, n_pairs=args.pairs, n_topics=args.topics,
                                   words_per_topic=args.words, seed=args.seed)
    for name, path in paths.items():
        print(f"{name}={path}")
    return 0


def cmd_build_vocab(args):
    cfg = _run_config(args)
    vocab = build_vocabulary(args.corpus, max_size=cfg.max_vocab,
                             function_min_count=cfg.function_min_count, content_lexicon=args.lexicon)
    vocab.save(args.out)
    print(f"words={len(vocab)} function={vocab.n_function} content={vocab.n_content}")
    return 0


def cmd_pretrain(args):
    cfg = _run_config(args, _config_from(args.init))
    vocab = Vocabulary.load(args.vocab)
    pairs = load_corpus(args.corpus, vocab)
    if args.init:
        params = _load_checkpoint(args.init, vocab)["params"]
    else:
        dims = model.ModelDims(len(vocab), vocab.n_content, emb=cfg.emb, hidden=cfg.hidden, attn=cfg.attn or None)
        params = model.new_params(dims, cfg.seed)
    sink, fh = _sink(args.log)
    try:
        params, losses = training.pretrain_s2s(pairs, cfg, params, sink)
    finally:
        if fh:
            fh.close()
    _save(args.out, params, cfg, vocab, "pretrain")
    if losses:
        print(f"batches={len(losses)} first_loss={losses[0]:.4f} last_loss={losses[-1]:.4f}")
    return 0


def cmd_pretrain_predictor(args):
    cfg = _run_config(args, _config_from(args.init))
    vocab = Vocabulary.load(args.vocab)
    pairs = load_corpus(args.corpus, vocab)
    params = _load_checkpoint(args.init, vocab)["params"]
    sink, fh = _sink(args.log)
    try:
        params = training.pretrain_predictor(pairs, params, vocab, cfg, sink)
    finally:
        if fh:
            fh.close()
    _save(args.out, params, cfg, vocab, "predictor")
    return 0


def cmd_train(args):
    cfg = _run_config(args, _config_from(args.init))
    vocab = Vocabulary.load(args.vocab)
    train_pairs = load_corpus(args.corpus, vocab)
    valid_pairs = load_corpus(args.valid, vocab)
    ck = _load_checkpoint(args.init, vocab)
    state = training.TrainState.fresh(ck["params"], cfg)
    saved = ck["state"]
    if saved.get("stage") == "train" and ck["optimizer"] is not None:
        # resume an interrupted joint run
        state.optimizer = ck["optimizer"]
        state.baseline = float(saved["baseline"])
        state.lr_scale = float(saved["lr_scale"])
        state.epoch = int(saved["epoch"])
    sink, fh = _sink(args.log)
    try:
        state = training.train_joint(train_pairs, valid_pairs, state, vocab, cfg, sink)
    finally:
        if fh:
            fh.close()
    _save(args.out, state.params, cfg, vocab, "train", state.scalars(), state.optimizer)
    print("validation=" + " ".join(f"{v:.6f}" for v in state.history))
    return 0


def _config_from(path):
    if not path:
        return None
    return TrainConfig.from_dict(checkpoint.load(path)["config"])


def _generation_setup(args):
    vocab = Vocabulary.load(args.vocab)
    ck = _load_checkpoint(args.checkpoint, vocab)
    cfg = _run_config(args, TrainConfig.from_dict(ck["config"]) if ck["config"] else None)
    K = min(cfg.topk_content, vocab.n_content)
    return vocab, ck["params"], cfg, K


def cmd_generate(args):
    vocab, params, cfg, K = _generation_setup(args)
    out = sys.stdout if args.output in (None, "-") else open(args.output, "w", encoding="utf-8")
    try:
        for tokens in _read_messages(args.input):
            if not tokens:
                out.write("\n")
                continue
            out.write(" ".join(inference.generate(tokens, params, vocab, K, cfg.beam, cfg.max_len)) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_eval(args):
    vocab, params, cfg, K = _generation_setup(args)
    pairs = load_corpus(args.corpus, vocab)
    if args.limit:
        pairs = pairs[: args.limit]
    hyps, refs, vocabs = [], [], []
    for pair in pairs:
        enc = model.encode(pair.message, params)
        dyn, _ = inference.dynamic_vocab(enc, params, vocab, K)
        best = inference.beam_search(enc, dyn, params, cfg.beam, cfg.max_len)[0]
        ids = [t for t in best.tokens if t != EOS]
        hyps.append([vocab.words[i] for i in ids])
        ref = [t for t in pair.response if t != EOS]
        refs.append([vocab.words[i] for i in ref])
        vocabs.append({vocab.words[i] for i in dyn.selected})
    table = metrics.EmbeddingTable.load(args.embeddings) if args.embeddings else None
    report = metrics.evaluate(hyps, refs, table, vocabs)
    if args.hyp_out:
        Path(args.hyp_out).write_text("".join(" ".join(h) + "\n" for h in hyps), encoding="utf-8")
    print(report.to_text() if args.format == "kv" else report.pretty(), end="")
    return 0


def _parse_dims(text):
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"--dims expects p=..,m=.., got {text!r}")
        k, v = part.split("=", 1)
        k = k.strip()
        if k not in ("p", "m"):
            raise UsageError(f"--dims: unknown dimension {k!r}")
        try:
            out[k] = int(v)
        except ValueError as exc:
            raise UsageError(f"--dims: {k} must be an integer") from exc
    return out


def cmd_bench(args):
    dims = _parse_dims(args.dims)
    try:
        cfg = benchmark.BenchConfig(
            p=dims.get("p", 620), m=dims.get("m", 1024), vocab_size=args.vocab_size,
            n_function=args.function_words, topk=args.topk, beam=args.beam, len_r=args.len,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.repeat < 5:
        raise UsageError("--repeat must be >= 5")
    if args.backend == "both":
        reports = benchmark.compare_backends(cfg, args.seed, args.repeat)
    else:
        reports = {args.backend: benchmark.run_decode_benchmark(
            cfg, args.seed, args.repeat, backend=None if args.backend == "auto" else args.backend)}
    for rep in reports.values():
        print(rep.to_text() if args.format == "kv" else rep.pretty(), end="")
    if args.format != "kv":
        s, d, r = benchmark.projection_flops(cfg.p, cfg.m, cfg.vocab_size, cfg.dyn_size, cfg.len_r,
                                             width=cfg.p + 2 * cfg.m, construction_rows=cfg.n_content)
        print(f"closed form: static {s:,}  dynamic {d:,}  ratio {r:.4f}")
    return 0


def cmd_chat(args):
    vocab, params, cfg, K = _generation_setup(args)
    stream = sys.stdin
    while True:
        if stream.isatty():
            print("> ", end="", flush=True)
        line = stream.readline()
        if not line:
            return 0
        tokens = line.split()
        if not tokens:
            continue
        print(" ".join(inference.generate(tokens, params, vocab, K, cfg.beam, cfg.max_len)), flush=True)
        if args.keywords:
            words = inference.top_content_words(tokens, params, vocab, 10)
            print("  keywords: " + " ".join(f"{w}:{b:.3f}" for w, b in words), flush=True)


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="dvs2s", description="Dynamic-vocabulary sequence-to-sequence response generation.")
    parser.add_argument("--debug", action="store_true", help="log training lines to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write the bundled synthetic topical corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=5000)
    p.add_argument("--topics", type=int, default=10)
    p.add_argument("--words", type=int, default=40, help="content words per topic")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-vocab", help="build the response-side vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", help="content-word lexicon, one word per line")
    _add_config_flags(p, [])
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="static-vocabulary S2S pretraining")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="continue from this checkpoint")
    p.add_argument("--log", help="append per-batch training lines here")
    _add_config_flags(p, ["emb", "hidden", "batch", "lr", "pretrain_epochs", "seed"])
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("pretrain-predictor", help="fit the word predictor with the encoder frozen")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    _add_config_flags(p, ["batch", "lr", "predictor_epochs", "seed"])
    p.set_defaults(func=cmd_pretrain_predictor)

    p = sub.add_parser("train", help="joint Monte-Carlo training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    _add_config_flags(p, ["samples", "batch", "lr", "epochs", "topk", "seed"])
    p.set_defaults(func=cmd_train)

    for name, func, text in (("generate", cmd_generate, "generate one response per input line"),
                             ("eval", cmd_eval, "generate for a test corpus and score it"),
                             ("chat", cmd_chat, "interactive session")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--vocab", required=True)
        _add_config_flags(p, ["topk", "beam", "max_len"])
        p.set_defaults(func=func)
        if name == "generate":
            p.add_argument("--input", help="tokenised messages, one per line (default stdin)")
            p.add_argument("--output", help="default stdout")
        elif name == "eval":
            p.add_argument("--corpus", required=True, help="message<TAB>response test file")
            p.add_argument("--embeddings", help="word vectors for the embedding metrics")
            p.add_argument("--limit", type=int, default=0, help="evaluate only the first N pairs")
            p.add_argument("--hyp-out", help="also write the generated responses here")
            p.add_argument("--format", choices=("text", "kv"), default="text")
        else:
            p.add_argument("--verbose", dest="keywords", action="store_true",
                           help="print the top-10 predicted content words")

    p = sub.add_parser("bench", help="time static vs dynamic decoding")
    p.add_argument("--dims", default="p=620,m=1024")
    p.add_argument("--vocab-size", type=int, default=30000)
    p.add_argument("--function-words", type=int, default=701, help="function words, specials included")
    p.add_argument("--topk", type=int, default=1000)
    p.add_argument("--beam", type=int, default=20)
    p.add_argument("--len", type=int, default=15, help="response length len_r")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("auto", "compiled", "python", "both"), default="auto")
    p.add_argument("--format", choices=("text", "kv"), default="text")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip() + "\ndvs2s: a subcommand is required")
        logging.basicConfig(level=logging.DEBUG if args.debug else logging.WARNING,
                            format="%(name)s: %(message)s")
        if getattr(args, "backend", None) == "compiled" and "compiled" not in kernels.available_backends():
            raise UsageError("compiled backend is not built; use --backend python")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorpusError, checkpoint.CheckpointError, training.TrainingError, benchmark.BenchmarkError,
            OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else 0
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())

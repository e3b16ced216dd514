"""Command-line surface.

Option precedence is CLI flag > config file (flat key=value lines) > default.
Failures print a single machine-parsable line ``error:<class>: <message>`` and
exit with a class-specific code.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

from . import corpus as corpus_mod
from . import evaluation, synth
from .encoder import ToyEncoder
from .errors import BiphaseError, ConfigError
from .index import BiPhaseIndex, IndexConfig, build
from .quantizer import load_codebook, save_codebook
from .retrieval import SearchParams, search, write_run_file
from .training import Teacher, TrainConfig, train, write_training_log

EXIT_CODES = {
    "io": 3,
    "config": 4,
    "data": 5,
    "format": 6,
    "version": 7,
    "corrupt": 8,
    "internal": 1,
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in str(text).split(",") if part != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _as_list(value) -> list[str]:
    return value if isinstance(value, list) else [value]


class Command:
    """One subcommand: its options, converters, defaults, and runner."""

    def __init__(self, name: str, help_text: str, runner: Callable):
        self.name = name
        self.help = help_text
        self.runner = runner
        self.options: dict[str, tuple[Callable, object]] = {}

    def add(self, parser: argparse.ArgumentParser, flag: str, conv: Callable, default, help: str, **kwargs):
        dest = flag.lstrip("-").replace("-", "_")
        self.options[dest] = (conv, default)
        if conv is _parse_bool:
            parser.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=None, help=help)
        else:
            parser.add_argument(flag, dest=dest, type=str, default=None, help=help, **kwargs)

    def resolve(self, args: argparse.Namespace) -> dict:
        file_values: dict[str, str] = {}
        if args.config is not None:
            file_values = _load_config_file(args.config, set(self.options))
        out = {}
        for dest, (conv, default) in self.options.items():
            cli_value = getattr(args, dest)
            if cli_value is not None:
                out[dest] = cli_value if conv is _parse_bool else conv(cli_value)
            elif dest in file_values:
                raw = file_values[dest]
                out[dest] = conv(raw)
            else:
                out[dest] = default
        return out


def _load_config_file(path: str, known: set[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = stripped.partition("=")
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value.strip()
    return values


def _require(opts: dict, *names: str) -> None:
    missing = [n for n in names if opts[n] is None]
    if missing:
        raise ConfigError(f"missing required options: {', '.join('--' + n.replace('_', '-') for n in missing)}")


def _load_vocab_and_tokenize(opts, docs=None, queries=None):
    vocab = corpus_mod.Vocabulary.load(opts["vocab"])
    if docs is not None:
        corpus_mod.tokenize_documents(docs, vocab, opts["max_doc_tokens"])
    if queries is not None:
        corpus_mod.tokenize_queries(queries, vocab, opts["max_query_tokens"])
    return vocab


# --- commands -----------------------------------------------------------


def cmd_synth(opts: dict) -> int:
    _require(opts, "out")
    task = synth.gen_bimodal(
        opts["docs"],
        opts["queries"],
        opts["rho"],
        opts["seed"],
        n_clusters=opts["clusters"],
        teacher_dim=opts["teacher_dim"],
    )
    task.write(opts["out"])
    print(json.dumps({"out": opts["out"], "docs": opts["docs"], "queries": opts["queries"], "rho": opts["rho"]}))
    return 0


def cmd_vocab(opts: dict) -> int:
    _require(opts, "input", "out")
    texts = []
    for path in opts["input"]:
        texts.extend(corpus_mod.load_tsv_corpus(path))
    stopwords = (
        corpus_mod.load_stopwords(opts["stopwords"])
        if opts["stopwords"]
        else corpus_mod.default_stopwords()
    )
    vocab = corpus_mod.build_vocab(texts, opts["min_freq"], stopwords)
    vocab.save(opts["out"])
    print(json.dumps({"out": opts["out"], "size": vocab.size}))
    return 0


def cmd_train(opts: dict) -> int:
    _require(opts, "corpus", "queries", "qrels", "teacher", "vocab", "out_encoder", "out_codebook")
    docs = corpus_mod.load_tsv_corpus(opts["corpus"])
    queries = corpus_mod.load_tsv_queries(opts["queries"])
    qrels = corpus_mod.load_qrels(opts["qrels"])
    teacher = Teacher.load(opts["teacher"])
    vocab = _load_vocab_and_tokenize(opts, docs, queries)
    cfg = TrainConfig(
        dim=opts["dim"],
        n_topics=opts["topics"],
        learning_rate=opts["lr"],
        batch_size=opts["batch_size"],
        epochs=opts["epochs"],
        hard_negatives=opts["hard_negatives"],
        k_topic=opts["k_topic"],
        seed=opts["seed"],
        patience=opts["patience"],
        val_fraction=opts["val_fraction"],
        warmup_epochs=opts["warmup_epochs"],
        pq_subspaces=opts["pq_m"],
        pq_centroids=opts["pq_k"],
        use_template=opts["template"],
        objective=opts["objective"],
    )
    result = train(docs, queries, qrels, teacher, cfg, vocab)
    result.encoder.save(opts["out_encoder"])
    save_codebook(result.codebook, opts["out_codebook"])
    if opts["log"]:
        write_training_log(opts["log"], result.history)
    last = dict(result.history[-1]) if result.history else {}
    if "val_loss" in last and last["val_loss"] != last["val_loss"]:  # no val split
        last["val_loss"] = None
    print(json.dumps({"epochs_run": len(result.history), "final": last}))
    return 0


def cmd_build(opts: dict) -> int:
    _require(opts, "corpus", "vocab", "encoder", "codebook", "out")
    docs = corpus_mod.load_tsv_corpus(opts["corpus"])
    enc = ToyEncoder.load(opts["encoder"])
    codebook = load_codebook(opts["codebook"])
    vocab = _load_vocab_and_tokenize(opts, docs=docs)
    cfg = IndexConfig(
        n_topics=enc.n_topics,
        vocab_size=vocab.size,
        dim=enc.dim,
        m=codebook.m,
        k=codebook.k,
        k_topic=opts["k_topic"],
        k_term=opts["k_term"],
        max_doc_tokens=opts["max_doc_tokens"],
        max_query_tokens=opts["max_query_tokens"],
    )
    idx = build(docs, enc, codebook, cfg, vocab)
    idx.save(opts["out"])
    print(json.dumps({"out": opts["out"], "stats": idx.stats()}))
    return 0


def _search_params(opts: dict) -> SearchParams:
    return SearchParams(
        k_topic_query=opts["nprobe"],
        use_all_query_terms=opts["all_query_terms"],
        k_term_query=opts["k_term_query"],
        prune_to=opts["prune_to"],
        final_k=opts["final_k"],
        use_pq=opts["pq"],
    )


def cmd_search(opts: dict) -> int:
    _require(opts, "index", "encoder", "queries", "out")
    idx = BiPhaseIndex.load(opts["index"])
    enc = ToyEncoder.load(opts["encoder"])
    queries = corpus_mod.load_tsv_queries(opts["queries"])
    params = _search_params(opts)
    if opts["threads"] > 1:
        with ThreadPoolExecutor(max_workers=opts["threads"]) as pool:
            results = list(pool.map(lambda q: search(idx, enc, q, params), queries))
    else:
        results = [search(idx, enc, q, params) for q in queries]
    run = {q.query_id: r.ranked for q, r in zip(queries, results)}
    write_run_file(opts["out"], run)
    print(json.dumps({"out": opts["out"], "queries": len(queries)}))
    return 0


def _file_digest(path: str) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_eval(opts: dict) -> int:
    _require(opts, "run", "qrels")
    run = evaluation.read_run_file(opts["run"])
    qrels = corpus_mod.load_qrels(opts["qrels"])
    flops_report = None
    digests = {"run": _file_digest(opts["run"]), "qrels": _file_digest(opts["qrels"])}
    if opts["index"] and opts["encoder"] and opts["queries"]:
        idx = BiPhaseIndex.load(opts["index"])
        enc = ToyEncoder.load(opts["encoder"])
        queries = corpus_mod.load_tsv_queries(opts["queries"])
        flops_report = evaluation.flops(idx, enc, queries, _search_params(opts))
        digests["index"] = idx.digest()
        digests["queries"] = _file_digest(opts["queries"])
    report = evaluation.evaluate_run(run, qrels, opts["mrr_k"], opts["recall_k"], flops_report)
    payload = json.dumps({**report.to_dict(), "digests": digests}, sort_keys=True, indent=2)
    if opts["out"]:
        with open(opts["out"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_sweep(opts: dict) -> int:
    _require(opts, "corpus", "queries", "qrels", "vocab", "encoder", "out", "vary")
    docs = corpus_mod.load_tsv_corpus(opts["corpus"])
    queries = corpus_mod.load_tsv_queries(opts["queries"])
    qrels = corpus_mod.load_qrels(opts["qrels"])
    enc = ToyEncoder.load(opts["encoder"])
    vocab = _load_vocab_and_tokenize(opts, docs, queries)
    grid = {}
    for spec in opts["vary"]:
        if "=" not in spec:
            raise ConfigError(f"--vary wants key=v1,v2,...; got {spec!r}")
        key, _, values = spec.partition("=")
        grid[key.strip()] = _parse_int_list(values)
    base_config = IndexConfig(
        n_topics=enc.n_topics,
        vocab_size=vocab.size,
        dim=enc.dim,
        m=opts["pq_m"],
        k=opts["pq_k"],
        k_topic=opts["k_topic"],
        k_term=opts["k_term"],
        max_doc_tokens=opts["max_doc_tokens"],
        max_query_tokens=opts["max_query_tokens"],
    )
    rows = evaluation.sweep(
        docs, queries, qrels, enc, vocab, base_config, _search_params(opts), grid, opts["seed"]
    )
    evaluation.write_sweep_csv(rows, opts["out"])
    print(json.dumps({"out": opts["out"], "rows": len(rows)}))
    return 0


def cmd_ablate(opts: dict) -> int:
    _require(opts, "mode", "corpus", "queries", "qrels", "teacher", "vocab")
    docs = corpus_mod.load_tsv_corpus(opts["corpus"])
    queries = corpus_mod.load_tsv_queries(opts["queries"])
    qrels = corpus_mod.load_qrels(opts["qrels"])
    teacher = Teacher.load(opts["teacher"])
    vocab = _load_vocab_and_tokenize(opts, docs, queries)
    cfg = TrainConfig(
        dim=opts["dim"],
        n_topics=opts["topics"],
        learning_rate=opts["lr"],
        batch_size=opts["batch_size"],
        epochs=opts["epochs"],
        hard_negatives=opts["hard_negatives"],
        k_topic=opts["k_topic"],
        seed=opts["seed"],
        patience=opts["patience"],
        val_fraction=opts["val_fraction"],
        warmup_epochs=opts["warmup_epochs"],
        pq_subspaces=opts["pq_m"],
        pq_centroids=opts["pq_k"],
    )
    report = evaluation.ablate(
        opts["mode"],
        docs,
        queries,
        qrels,
        teacher,
        vocab,
        cfg,
        k_topic=opts["k_topic"],
        k_term=opts["k_term"],
        params=_search_params(opts),
        max_doc_tokens=opts["max_doc_tokens"],
        max_query_tokens=opts["max_query_tokens"],
    )
    payload = json.dumps({"mode": opts["mode"], **report.to_dict()}, sort_keys=True, indent=2)
    if opts["out"]:
        with open(opts["out"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_analyze_overlap(opts: dict) -> int:
    _require(opts, "corpus", "queries", "qrels")
    docs = corpus_mod.load_tsv_corpus(opts["corpus"])
    queries = corpus_mod.load_tsv_queries(opts["queries"])
    qrels = corpus_mod.load_qrels(opts["qrels"])
    if opts["vocab"]:
        vocab = corpus_mod.Vocabulary.load(opts["vocab"])
    else:
        stopwords = (
            corpus_mod.load_stopwords(opts["stopwords"])
            if opts["stopwords"]
            else corpus_mod.default_stopwords()
        )
        vocab = corpus_mod.build_vocab(list(docs) + list(queries), opts["min_freq"], stopwords)
    corpus_mod.tokenize_documents(docs, vocab, opts["max_doc_tokens"])
    corpus_mod.tokenize_queries(queries, vocab, opts["max_query_tokens"])
    fraction = corpus_mod.overlap_analysis(queries, qrels, docs, vocab)
    print(json.dumps({"overlap": fraction, "queries_judged": len(qrels)}))
    return 0


# --- wiring --------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, Command]]:
    parser = argparse.ArgumentParser(prog="biphase", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, Command] = {}

    def new_command(name: str, help_text: str, runner: Callable) -> tuple[Command, argparse.ArgumentParser]:
        cmd = Command(name, help_text, runner)
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat key=value config file")
        commands[name] = cmd
        return cmd, p

    def add_common(cmd: Command, p: argparse.ArgumentParser) -> None:
        cmd.add(p, "--seed", int, 0, "global random seed")
        cmd.add(p, "--threads", int, 1, "worker threads for query batches")

    def add_token_limits(cmd: Command, p: argparse.ArgumentParser) -> None:
        cmd.add(p, "--max-doc-tokens", int, 128, "document token cap")
        cmd.add(p, "--max-query-tokens", int, 32, "query token cap")

    def add_search_opts(cmd: Command, p: argparse.ArgumentParser) -> None:
        cmd.add(p, "--nprobe", int, 8, "topic posting lists to visit")
        cmd.add(p, "--all-query-terms", _parse_bool, True, "route to every positive query term")
        cmd.add(p, "--k-term-query", int, None, "term lists to visit when not using all terms")
        cmd.add(p, "--prune-to", int, 5000, "candidates kept for post-verification")
        cmd.add(p, "--final-k", int, 1000, "results returned per query")
        cmd.add(p, "--pq", _parse_bool, True, "re-rank candidates with ADC")

    def add_train_opts(cmd: Command, p: argparse.ArgumentParser) -> None:
        cmd.add(p, "--dim", int, 16, "encoder hidden dimension")
        cmd.add(p, "--topics", int, 64, "latent topic count")
        cmd.add(p, "--lr", float, 1e-3, "Adam learning rate")
        cmd.add(p, "--batch-size", int, 8, "queries per batch")
        cmd.add(p, "--epochs", int, 30, "training epochs")
        cmd.add(p, "--hard-negatives", int, 3, "hard negatives per query")
        cmd.add(p, "--k-topic", int, 8, "top topics kept per item")
        cmd.add(p, "--patience", int, 5, "early-stop patience")
        cmd.add(p, "--val-fraction", float, 0.1, "validation split")
        cmd.add(p, "--warmup-epochs", int, None, "encoder-only epochs before the codebook joins")
        cmd.add(p, "--pq-m", int, 4, "PQ sub-spaces")
        cmd.add(p, "--pq-k", int, 16, "PQ centroids per sub-space")

    cmd, p = new_command("synth", "generate a planted corpus", cmd_synth)
    cmd.add(p, "--out", str, None, "output directory")
    cmd.add(p, "--docs", int, 1000, "number of documents")
    cmd.add(p, "--queries", int, 100, "number of queries")
    cmd.add(p, "--rho", float, 0.5, "lexical-channel fraction")
    cmd.add(p, "--clusters", int, 32, "semantic cluster count")
    cmd.add(p, "--teacher-dim", int, 32, "teacher embedding dimension")
    add_common(cmd, p)

    cmd, p = new_command("vocab", "build a vocabulary from TSV inputs", cmd_vocab)
    cmd.add(p, "--input", _as_list, None, "id<TAB>text file (repeatable)", action="append")
    cmd.add(p, "--out", str, None, "vocabulary output path")
    cmd.add(p, "--min-freq", int, 1, "minimum corpus frequency")
    cmd.add(p, "--stopwords", str, None, "stopword file (default: bundled list)")
    add_common(cmd, p)

    cmd, p = new_command("train", "distill the encoder and codebook", cmd_train)
    for flag in ("--corpus", "--queries", "--qrels", "--teacher", "--vocab", "--out-encoder", "--out-codebook", "--log"):
        cmd.add(p, flag, str, None, flag.lstrip("-").replace("-", " "))
    cmd.add(p, "--objective", str, "distill", "distill or contrastive")
    cmd.add(p, "--template", _parse_bool, True, "apply the top-k topic template in the loss")
    add_train_opts(cmd, p)
    add_token_limits(cmd, p)
    add_common(cmd, p)

    cmd, p = new_command("build", "build an index from a trained model", cmd_build)
    for flag in ("--corpus", "--vocab", "--encoder", "--codebook", "--out"):
        cmd.add(p, flag, str, None, flag.lstrip("-").replace("-", " "))
    cmd.add(p, "--k-topic", int, 8, "topic entries per document")
    cmd.add(p, "--k-term", int, 16, "term entries per document")
    add_token_limits(cmd, p)
    add_common(cmd, p)

    cmd, p = new_command("search", "run queries against an index", cmd_search)
    for flag in ("--index", "--encoder", "--queries", "--out"):
        cmd.add(p, flag, str, None, flag.lstrip("-").replace("-", " "))
    add_search_opts(cmd, p)
    add_common(cmd, p)

    cmd, p = new_command("eval", "score a run file against qrels", cmd_eval)
    for flag in ("--run", "--qrels", "--out", "--index", "--encoder", "--queries"):
        cmd.add(p, flag, str, None, flag.lstrip("-").replace("-", " "))
    cmd.add(p, "--mrr-k", _parse_int_list, [10], "MRR cutoffs, comma separated")
    cmd.add(p, "--recall-k", _parse_int_list, [10, 100, 1000], "recall cutoffs, comma separated")
    add_search_opts(cmd, p)
    add_common(cmd, p)

    cmd, p = new_command("sweep", "grid runs over index/search knobs", cmd_sweep)
    for flag in ("--corpus", "--queries", "--qrels", "--vocab", "--encoder", "--out"):
        cmd.add(p, flag, str, None, flag.lstrip("-").replace("-", " "))
    cmd.add(p, "--vary", _as_list, None, "axis=v1,v2 (repeatable)", action="append")
    cmd.add(p, "--k-topic", int, 8, "topic entries per document")
    cmd.add(p, "--k-term", int, 16, "term entries per document")
    cmd.add(p, "--pq-m", int, 4, "PQ sub-spaces")
    cmd.add(p, "--pq-k", int, 16, "PQ centroids per sub-space")
    add_search_opts(cmd, p)
    add_token_limits(cmd, p)
    add_common(cmd, p)

    cmd, p = new_command("ablate", "disable one mechanism and measure", cmd_ablate)
    cmd.add(p, "--mode", str, None, f"one of {', '.join(evaluation.ABLATION_MODES)}")
    for flag in ("--corpus", "--queries", "--qrels", "--teacher", "--vocab", "--out"):
        cmd.add(p, flag, str, None, flag.lstrip("-").replace("-", " "))
    cmd.add(p, "--k-term", int, 16, "term entries per document")
    add_train_opts(cmd, p)
    add_search_opts(cmd, p)
    add_token_limits(cmd, p)
    add_common(cmd, p)

    cmd, p = new_command("analyze-overlap", "token overlap between queries and their relevant docs", cmd_analyze_overlap)
    for flag in ("--corpus", "--queries", "--qrels", "--vocab", "--stopwords"):
        cmd.add(p, flag, str, None, flag.lstrip("-").replace("-", " "))
    cmd.add(p, "--min-freq", int, 1, "minimum corpus frequency when building a vocab")
    add_token_limits(cmd, p)
    add_common(cmd, p)

    return parser, commands


def main(argv: list[str] | None = None) -> int:
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    command = commands[args.command]
    try:
        opts = command.resolve(args)
        return command.runner(opts)
    except BiphaseError as exc:
        print(f"error:{exc.error_class}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.error_class, 1)
    except FileNotFoundError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())

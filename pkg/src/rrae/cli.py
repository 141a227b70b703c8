"""Command-line entry point: ``rrae <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``RRAE_THREADS`` caps the BLAS thread pool.
"""
from __future__ import annotations

import os

if os.environ.get("RRAE_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = os.environ["RRAE_THREADS"]

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import compressor as comp
from . import report
from .checkpoint import CheckpointError
from .embeddings import EmbeddingError, load_embeddings, save_embeddings
from .model import ModelConfig, decode_until_eos, encode, init_model, load_checkpoint, save_checkpoint
from .numerics import AdamConfig
from .preprocess import (DIGIT_MODES, TOKEN_MAGIC, PipelineConfig, build_dataset, decode_ids,
                         encode_tokens, process_sentence, read_token_file, write_token_file)
from .toy import random_corpus
from .trainer import DEFAULT_SPACE, TrainConfig, TrainLog, evaluate, random_search, train
from .vectors import VectorFileError, read_vectors, write_vectors

log = logging.getLogger("rrae")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config files

MODEL_KEYS = {"word_dim": int, "hidden": int, "max_len": int, "dtype": str}
ADAM_KEYS = {"lr0": float, "decay": float, "l2": float, "p1": float, "p2": float, "epsilon": float}
TRAIN_KEYS = {"minibatch": int, "eval_every": int, "patience": int, "max_iterations": int,
              "seed": int, "min_improvement": float, "loss": str}
CONFIG_KEYS = {**MODEL_KEYS, **ADAM_KEYS, **TRAIN_KEYS, "init_seed": int}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown config field {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"{source}:{lineno}: invalid value {value!r} for field {key!r}") from None
    return out


def build_configs(values: dict) -> tuple[ModelConfig, TrainConfig, int]:
    def make(cls, kwargs, what):
        try:
            return cls(**kwargs)
        except (ValueError, TypeError) as e:
            raise UsageError(f"invalid {what} config ({', '.join(kwargs) or 'defaults'}): {e}") from None

    mcfg = make(ModelConfig, {k: values[k] for k in MODEL_KEYS if k in values}, "model")
    akw = {("decay_per_iteration" if k == "decay" else k): values[k] for k in ADAM_KEYS if k in values}
    adam = make(AdamConfig, akw, "adam")
    tkw = {k: values[k] for k in TRAIN_KEYS if k in values}
    tcfg = make(TrainConfig, {**tkw, "adam": adam}, "training")
    return mcfg, tcfg, values.get("init_seed", tcfg.seed)


def load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


# ---------------------------------------------------------------- helpers


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _table(path):
    return load_embeddings(_require(path, "embeddings file"))


def _model(path, table=None):
    params, cfg, state = load_checkpoint(_require(path, "checkpoint"))
    if table is not None and table.dim != cfg.word_dim:
        raise UsageError(f"embeddings have dim {table.dim}, checkpoint expects {cfg.word_dim}")
    return params, cfg, state


def _sentences(path, table, digit_mode):
    """Token-id file, or raw text with one sentence per line."""
    p = _require(path, "input file")
    with p.open(encoding="utf-8") as f:
        first = f.readline()
    if first.startswith(TOKEN_MAGIC):
        return read_token_file(p, table)
    lines = p.read_text(encoding="utf-8").splitlines()
    return [encode_tokens(process_sentence(line, table, digit_mode), table) for line in lines]


def _vectors(path, dim):
    v = read_vectors(_require(path, "vector file"))
    if v.shape[1] != dim:
        raise UsageError(f"vector file {path} has dim {v.shape[1]}, expected {dim}")
    return v


def _log_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".log.csv")


# ---------------------------------------------------------------- subcommands


def cmd_preprocess(a):
    table = _table(a.embeddings)
    try:
        fracs = tuple(float(x) for x in a.splits.split(","))
    except ValueError:
        raise UsageError(f"--splits must be three comma-separated fractions, got {a.splits!r}") from None
    try:
        cfg = PipelineConfig(max_words=a.max_words, split_fractions=fracs, rng_seed=a.seed,
                             digit_mode=a.digit_mode)
    except ValueError as e:
        raise UsageError(str(e)) from None
    for p in a.input:
        _require(p, "input file")
    _, stats = build_dataset(a.input, cfg, table, a.out_dir)
    print(f"sentences={stats.sentence_count} duplicates={stats.duplicates_removed} "
          f"too_long={stats.too_long} oov_rate={stats.oov_rate:.4f}")


def cmd_make_toy(a):
    from .embeddings import synthetic_table
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = synthetic_table(a.vocab - 2, a.dim, a.seed)
    save_embeddings(table, out / "embeddings.txt")
    train_ = random_corpus(table, a.n_train, a.min_len, a.max_len, a.seed + 1)
    tune = random_corpus(table, a.n_tune, a.min_len, a.max_len, a.seed + 2, exclude=train_)
    test = random_corpus(table, a.n_test, a.min_len, a.max_len, a.seed + 3, exclude=train_ + tune)
    for name, seqs in (("train", train_), ("tune", tune), ("test", test)):
        write_token_file(out / f"{name}.tok", seqs, table)
        (out / f"{name}.txt").write_text(
            "".join(" ".join(decode_ids(s, table, strip_eos=True)) + "\n" for s in seqs))
    print(f"wrote toy data to {out}")


def _data_dir(a):
    d = _require(a.data_dir, "data directory")
    table = _table(a.embeddings or d / "embeddings.txt")
    train_ = read_token_file(_require(d / "train.tok", "training split"), table)
    tune = read_token_file(_require(d / "tune.tok", "tune split"), table)
    return table, train_, tune


def cmd_train(a):
    values = load_config_file(a.config)
    if a.seed is not None:
        values["seed"] = a.seed
    mcfg, tcfg, init_seed = build_configs(values)
    table, train_, tune = _data_dir(a)
    out = Path(a.checkpoint_out)
    if a.resume:
        params, mcfg_ck, state = _model(a.resume, table)
        if state is None:
            raise UsageError(f"{a.resume} holds no training state to resume from")
        mcfg = mcfg_ck
        train_log = TrainLog.read_csv(_require(_log_path(Path(a.resume)), "training log"))
    else:
        if mcfg.word_dim != table.dim:
            if "word_dim" in values:
                raise UsageError(f"word_dim={mcfg.word_dim} but embeddings have dim {table.dim}")
            mcfg = replace(mcfg, word_dim=table.dim)
        params, state, train_log = init_model(mcfg, init_seed), None, None
    meta = {"vocab_hash": table.vocab_hash()}

    def save(params_, state_, log_):
        save_checkpoint(params_, mcfg, state_, out, meta)
        log_.write_csv(_log_path(out))

    params, state, train_log = train(params, mcfg, table, train_, tune, tcfg, state, train_log,
                                     stop_at=a.stop_at, on_eval=save)
    save(params, state, train_log)
    last = train_log[-1]
    print(f"iteration={state.iteration} tune_matched={last.tune_matched:.4f} "
          f"tune_exact={last.tune_exact:.4f}")


def cmd_encode(a):
    table = _table(a.embeddings)
    params, cfg, _ = _model(a.checkpoint, table)
    seqs = _sentences(a.input, table, a.digit_mode)
    svs = []
    for seq in seqs:
        sv, _, _ = encode(params, cfg, table.vectors[seq])
        svs.append(sv)
    write_vectors(a.out, np.array(svs).reshape(len(svs), cfg.hidden), binary=a.binary)


def cmd_decode(a):
    table = _table(a.embeddings)
    params, cfg, _ = _model(a.checkpoint, table)
    svs = _vectors(a.vectors, cfg.hidden)
    with open(a.out, "w", encoding="utf-8", newline="\n") as f:
        for sv in svs:
            ids = decode_until_eos(params, cfg, table, sv)
            f.write(" ".join(decode_ids(ids, table, strip_eos=True)) + "\n")


def cmd_train_compressor(a):
    table = _table(a.embeddings)
    params, cfg, _ = _model(a.checkpoint, table)
    seqs = _sentences(a.data, table, "split01")
    svs = np.array([encode(params, cfg, table.vectors[s])[0] for s in seqs])
    cdim = a.compressed_dim or comp.compressed_size(cfg.hidden, a.ratio)
    cp = comp.init_compressor(cfg.hidden, cdim, a.seed)
    adam = AdamConfig(lr0=a.lr, decay_per_iteration=1.0, l2=0.0)
    cp, hist = comp.train_compressor(cp, svs, adam, epochs=a.epochs, seed=a.seed)
    comp.save_compressor(cp, a.out)
    print(f"compressed_dim={cdim} loss={hist[-1]:.6g}")


def cmd_compress(a):
    cp = comp.load_compressor(_require(a.compressor, "compressor checkpoint"))
    write_vectors(a.out, comp.compress(cp, _vectors(a.vectors, cp.hidden)), binary=a.binary)


def cmd_decompress(a):
    cp = comp.load_compressor(_require(a.compressor, "compressor checkpoint"))
    write_vectors(a.out, comp.decompress(cp, _vectors(a.vectors, cp.compressed_dim)), binary=a.binary)


def cmd_evaluate(a):
    table = _table(a.embeddings)
    params, cfg, _ = _model(a.checkpoint, table)
    data = _sentences(a.data, table, "split01")
    transform = None
    if a.compressor:
        cp = comp.load_compressor(_require(a.compressor, "compressor checkpoint"))
        transform = lambda sv: comp.round_trip(cp, sv)
    res = evaluate(params, cfg, data, table, transform)
    out = Path(a.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_curves_csv(report.curves_from_eval(res), out / "length_curves.csv")
    n = min(a.n_table, len(data))
    report.write_sentence_tsv(report.sentence_table(params, cfg, data, table, n, a.seed, transform),
                              out / "sentences.tsv")
    print(f"matched={res.matched_word_rate:.6f} exact={res.exact_sentence_rate:.6f}")


def cmd_search(a):
    values = load_config_file(a.config)
    mcfg, tcfg, _ = build_configs(values)
    table, train_, tune = _data_dir(a)
    if mcfg.word_dim != table.dim:
        mcfg = replace(mcfg, word_dim=table.dim)
    space = dict(DEFAULT_SPACE)
    if a.space:
        try:
            space.update(json.loads(_require(a.space, "search space").read_text()))
        except json.JSONDecodeError as e:
            raise UsageError(f"{a.space}: invalid JSON ({e})") from None
    ranked = random_search(space, a.trials, a.budget, mcfg, table, train_, tune, tcfg, a.seed)
    text = json.dumps(ranked, indent=2) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rrae", description="Residual recurrent sentence autoencoder.",
        epilog="Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build train/tune/test token files from raw text")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-words", type=int, default=60)
    p.add_argument("--splits", default="0.98,0.01,0.01")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--digit-mode", choices=DIGIT_MODES, default="split01")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("make-toy", help="write a synthetic dictionary and random corpora")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-tune", type=int, default=50)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--min-len", type=int, default=2)
    p.add_argument("--max-len", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("train", help="train the autoencoder")
    p.add_argument("--config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--embeddings", help="default: <data-dir>/embeddings.txt")
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--stop-at", type=int, help="interrupt after this many iterations (resumable)")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("encode", cmd_encode, "sentences to sentence vectors"),
                                 ("decode", cmd_decode, "sentence vectors to sentences")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--embeddings", required=True)
        p.add_argument("--out", required=True)
        if name == "encode":
            p.add_argument("--input", required=True, help="token-id file or raw text")
            p.add_argument("--digit-mode", choices=DIGIT_MODES, default="split01")
            p.add_argument("--binary", action="store_true")
        else:
            p.add_argument("--vectors", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("train-compressor", help="fit the sentence-vector compressor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=0.3)
    p.add_argument("--compressed-dim", type=int)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_compressor)

    for name, func in (("compress", cmd_compress), ("decompress", cmd_decompress)):
        p = sub.add_parser(name, help=f"{name} sentence vectors")
        p.add_argument("--compressor", required=True)
        p.add_argument("--vectors", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--binary", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="metrics, length curves and a sentence table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report-dir", required=True)
    p.add_argument("--compressor")
    p.add_argument("--n-table", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--space", help="JSON overriding the default search space")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--budget", type=int, required=True, help="iterations per trial")
    p.add_argument("--config")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_search)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, EmbeddingError, VectorFileError) as e:
        print(f"rrae: error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, OSError, ValueError, RuntimeError) as e:
        print(f"rrae: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Corpus pipeline: ASCII folding, tokenisation, punctuation standardisation,
phrase merging, digit spelling, deduplication, length filter and splits.

The tokenizer is a small rule-based stand-in for a full NLP toolkit; see
:func:`tokenize` for the exact rules.
"""
from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EOS, PUNCTUATION, UNK, EmbeddingTable

TOKEN_MAGIC = "RRAE-TOK1"

# Applied before accent stripping; anything still non-ASCII afterwards is dropped.
ASCII_MAP = {
    "‘": "'", "’": "'", "‚": "'", "‛": "'", "′": "'",
    "“": '"', "”": '"', "„": '"', "‟": '"', "″": '"',
    "«": '"', "»": '"', "‹": "'", "›": "'",
    "‐": "-", "‑": "-", "‒": "-", "–": "-", "—": "-",
    "―": "-", "−": "-",
    "…": "...", " ": " ", " ": " ", "​": "",
    "ß": "ss", "æ": "ae", "Æ": "AE", "œ": "oe", "Œ": "OE",
    "ø": "o", "Ø": "O", "ł": "l", "Ł": "L", "đ": "d",
    "Đ": "D", "ð": "d", "Þ": "Th", "þ": "th",
}

# Punctuation variants (after ASCII folding, or raw) mapped onto the limited set.
PUNCT_MAP = {
    "--": "-", "---": "-", "–": "-", "—": "-", "―": "-", "−": "-",
    "``": '"', "''": '"', "“": '"', "”": '"', "«": '"', "»": '"',
    "„": '"', "`": "'", "‘": "'", "’": "'",
    "...": ".", "…": ".", "[": "(", "]": ")", "{": "(", "}": ")",
}

DIGIT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
DIGIT_MODES = ("split01", "words", "literal")

_NUMBER = re.compile(r"\d+(?:[.,]\d+)*")
_EDGE = re.compile(r"^([^\w]*)(.*?)([^\w]*)$", re.S)


def _is_punct(tok: str) -> bool:
    return bool(tok) and not any(c.isalnum() or c == "_" for c in tok)


def _runs(s: str) -> list[str]:
    """Split a punctuation string into runs of a repeated character."""
    return [m.group(0) for m in re.finditer(r"(.)\1*", s, re.S)]


def normalize_ascii(text: str) -> str:
    text = "".join(ASCII_MAP.get(c, c) for c in text)
    text = unicodedata.normalize("NFKD", text)
    return "".join(c for c in text if ord(c) < 128)


def tokenize(text: str) -> list[str]:
    """Whitespace split, then per chunk:

    * leading and trailing punctuation is detached, one token per run of a
      repeated character (so ``...`` stays together);
    * hyphens inside a word become separate tokens (``female-owned``);
    * apostrophes inside a word are kept (``wasn't``, ``You'd``), as are
      other inner characters (``Health.com``).
    """
    out = []
    for chunk in text.split():
        lead, core, trail = _EDGE.match(chunk).groups()
        out += _runs(lead)
        if core:
            out += [p for p in re.split(r"(-+)", core) if p]
        out += _runs(trail)
    return out


def standardize_punctuation(tokens, allowed=PUNCTUATION) -> list[str]:
    allowed = set(allowed)
    out = []
    for tok in tokens:
        if not _is_punct(tok):
            out.append(tok)
            continue
        tok = PUNCT_MAP.get(tok, tok)
        if tok not in allowed and len(set(tok)) == 1:
            tok = tok[0]
        if tok in allowed:
            out.append(tok)
    return out


def merge_phrases(tokens, table: EmbeddingTable, max_phrase: int = 8) -> list[str]:
    """Greedy left-to-right longest match of underscore-joined runs in the vocabulary."""
    tokens = list(tokens)
    out = []
    i = 0
    while i < len(tokens):
        for n in range(min(max_phrase, len(tokens) - i), 1, -1):
            cand = "_".join(tokens[i:i + n])
            if cand in table:
                out.append(cand)
                i += n
                break
        else:
            out.append(tokens[i])
            i += 1
    return out


def digits_to_words(tokens, mode: str = "split01") -> list[str]:
    """Split numbers into single digits and spell them out.

    ``split01`` spells 2-9 and keeps 0 and 1 as digits; ``words`` spells
    every digit; ``literal`` keeps digits. Separators inside a number
    (``3,000``) become their own tokens.
    """
    if mode not in DIGIT_MODES:
        raise ValueError(f"digit mode must be one of {DIGIT_MODES}")
    out = []
    for tok in tokens:
        if not _NUMBER.fullmatch(tok):
            out.append(tok)
            continue
        for c in tok:
            if not c.isdigit() or mode == "literal":
                out.append(c)
            elif mode == "words" or c not in "01":
                out.append(DIGIT_WORDS[int(c)])
            else:
                out.append(c)
    return out


def process_sentence(text: str, table: EmbeddingTable, digit_mode: str = "split01",
                     allowed=PUNCTUATION) -> list[str]:
    tokens = tokenize(normalize_ascii(text))
    tokens = standardize_punctuation(tokens, allowed)
    tokens = merge_phrases(tokens, table)
    return digits_to_words(tokens, digit_mode)


def encode_tokens(tokens, table: EmbeddingTable) -> list[int]:
    unk = table.unk_id
    return [table.index.get(t, unk) for t in tokens] + [table.eos_id]


def decode_ids(ids, table: EmbeddingTable, strip_eos: bool = False) -> list[str]:
    words = [table.words[i] for i in ids]
    if strip_eos and words and words[-1] == EOS:
        words = words[:-1]
    return words


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class PipelineConfig:
    max_words: int = 60
    split_fractions: tuple[float, float, float] = (0.98, 0.01, 0.01)
    punctuation_set: tuple[str, ...] = PUNCTUATION
    rng_seed: int = 0
    digit_mode: str = "split01"

    def __post_init__(self):
        if self.max_words < 1:
            raise ValueError("max_words must be >= 1")
        if len(self.split_fractions) != 3 or any(f <= 0 for f in self.split_fractions) \
                or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be three positive numbers summing to 1")
        if self.digit_mode not in DIGIT_MODES:
            raise ValueError(f"digit mode must be one of {DIGIT_MODES}")


@dataclass
class CorpusStats:
    input_lines: int = 0
    sentence_count: int = 0
    duplicates_removed: int = 0
    too_long: int = 0
    empty: int = 0
    token_count: int = 0
    oov_count: int = 0
    split_sizes: dict = field(default_factory=dict)
    length_histogram: dict = field(default_factory=dict)
    token_histogram: dict = field(default_factory=dict)

    @property
    def oov_rate(self) -> float:
        return self.oov_count / self.token_count if self.token_count else 0.0

    def to_json(self) -> str:
        d = asdict(self)
        d["oov_rate"] = self.oov_rate
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    n_train = round(fractions[0] * n)
    n_tune = min(round(fractions[1] * n), n - n_train)
    return n_train, n_tune, n - n_train - n_tune


def write_token_file(path, sequences, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{TOKEN_MAGIC} {table.vocab_hash()}\n")
        for seq in sequences:
            f.write(" ".join(map(str, seq)) + "\n")


def read_token_file(path, table: EmbeddingTable | None = None) -> list[list[int]]:
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != TOKEN_MAGIC:
            raise ValueError(f"{path}:1: not a {TOKEN_MAGIC} token file")
        if table is not None and header[1] != table.vocab_hash():
            raise ValueError(f"{path}: vocabulary hash {header[1]} does not match the embeddings")
        out = []
        for lineno, line in enumerate(f, start=2):
            try:
                seq = [int(x) for x in line.split()]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer token id") from None
            if table is not None and (not seq or seq[-1] != table.eos_id
                                      or any(not 0 <= i < len(table) for i in seq)):
                raise ValueError(f"{path}:{lineno}: invalid token sequence")
            out.append(seq)
    return out


def build_dataset(inputs, cfg: PipelineConfig, table: EmbeddingTable, out_dir=None):
    """Run the pipeline over UTF-8 files with one sentence per line.

    Returns ``({"train": seqs, "tune": seqs, "test": seqs}, stats)``. With
    ``out_dir`` it also writes ``<split>.tok`` id files, ``<split>.txt``
    mirrors of the processed tokens (out-of-vocabulary words kept as written)
    and ``stats.json``.
    """
    stats = CorpusStats()
    seen = set()
    sentences = []
    lengths, tokens_seen = Counter(), Counter()
    for path in inputs:
        path = Path(path)
        try:
            f = path.open("rb")
        except OSError as e:
            raise OSError(f"{path}: {e.strerror}") from e
        with f:
            for lineno, raw in enumerate(f, start=1):
                try:
                    line = raw.decode("utf-8")
                except UnicodeDecodeError as e:
                    raise ValueError(f"{path}:{lineno}: invalid UTF-8 ({e.reason})") from None
                stats.input_lines += 1
                toks = process_sentence(line, table, cfg.digit_mode, cfg.punctuation_set)
                if not toks:
                    stats.empty += 1
                    continue
                if len(toks) > cfg.max_words:
                    stats.too_long += 1
                    continue
                key = tuple(toks)
                if key in seen:
                    stats.duplicates_removed += 1
                    continue
                seen.add(key)
                sentences.append(toks)

    rng = np.random.default_rng(cfg.rng_seed)
    order = rng.permutation(len(sentences))
    n_train, n_tune, _ = split_sizes(len(sentences), cfg.split_fractions)
    parts = {"train": order[:n_train], "tune": order[n_train:n_train + n_tune],
             "test": order[n_train + n_tune:]}
    splits, texts = {}, {}
    for name, idx in parts.items():
        seqs = []
        texts[name] = [" ".join(sentences[i]) for i in idx]
        for i in idx:
            toks = sentences[i]
            ids = encode_tokens(toks, table)
            stats.token_count += len(toks)
            stats.oov_count += sum(1 for t in toks if t not in table)
            lengths[len(toks)] += 1
            tokens_seen.update(toks)
            seqs.append(ids)
        splits[name] = seqs
        stats.split_sizes[name] = len(seqs)
    stats.sentence_count = len(sentences)
    stats.length_histogram = {str(k): v for k, v in sorted(lengths.items())}
    stats.token_histogram = dict(sorted(tokens_seen.items(), key=lambda kv: (-kv[1], kv[0])))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, seqs in splits.items():
            write_token_file(out_dir / f"{name}.tok", seqs, table)
            with open(out_dir / f"{name}.txt", "w", encoding="utf-8", newline="\n") as f:
                f.writelines(line + "\n" for line in texts[name])
        (out_dir / "stats.json").write_text(stats.to_json(), encoding="utf-8")
    return splits, stats


__all__ = [
    "EOS", "UNK", "PipelineConfig", "CorpusStats", "normalize_ascii", "tokenize",
    "standardize_punctuation", "merge_phrases", "digits_to_words", "process_sentence",
    "encode_tokens", "decode_ids", "build_dataset", "read_token_file", "write_token_file",
]

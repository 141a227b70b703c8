"""Word-vector dictionary: file formats, special vectors, cosine matching."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EOS = "<EOS>"
UNK = "<UNK>"
# Tokens recognised as special when a table is read back from disk.
PUNCTUATION = ('.', ',', '!', '?', '"', "'", '-', ':', ';', '(', ')')
SPECIAL_NAMES = frozenset((EOS, UNK) + PUNCTUATION)

BINARY_MAGIC = b"RRAE-EMB1"


class EmbeddingError(ValueError):
    """Malformed or inconsistent embedding data."""


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    word_id: int
    similarity: float


@dataclass
class EmbeddingTable:
    words: list[str]
    vectors: np.ndarray
    extra_special: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        self.vectors = np.array(self.vectors, dtype=np.float64)
        self.vectors.flags.writeable = False
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise EmbeddingError(
                f"{len(self.words)} words but vector block of shape {self.vectors.shape}")
        self.index: dict[str, int] = {}
        for i, w in enumerate(self.words):
            if w in self.index:
                raise EmbeddingError(f"duplicate token {w!r}")
            if not w or any(c.isspace() for c in w):
                raise EmbeddingError(f"invalid token {w!r}")
            self.index[w] = i
        self.norms = np.linalg.norm(self.vectors, axis=1)
        bad = np.flatnonzero(~(self.norms > 0))
        if bad.size:
            raise EmbeddingError(f"zero-norm vector for token {self.words[bad[0]]!r}")
        self.unit = self.vectors / self.norms[:, None]
        self.unit.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def special_ids(self) -> dict[str, int]:
        names = SPECIAL_NAMES | self.extra_special
        return {w: i for w, i in self.index.items() if w in names}

    @property
    def eos_id(self) -> int:
        try:
            return self.index[EOS]
        except KeyError:
            raise EmbeddingError("table has no end-of-sentence vector") from None

    @property
    def unk_id(self) -> int:
        try:
            return self.index[UNK]
        except KeyError:
            raise EmbeddingError("table has no unknown-word vector") from None

    def vocab_hash(self) -> str:
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------- file formats


def save_embeddings(table: EmbeddingTable, path, format: str = "text") -> None:
    path = Path(path)
    if format == "text":
        with path.open("w", encoding="utf-8", newline="\n") as f:
            f.write(f"{len(table)} {table.dim}\n")
            for w, v in zip(table.words, table.vectors):
                f.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")
    elif format == "binary":
        with path.open("wb") as f:
            f.write(BINARY_MAGIC)
            f.write(struct.pack("<II", len(table), table.dim))
            for w in table.words:
                b = w.encode("utf-8")
                f.write(struct.pack("<I", len(b)))
                f.write(b)
            f.write(table.vectors.astype("<f4").tobytes())
    else:
        raise ValueError(f"unknown embedding format {format!r}")


def load_embeddings(path, format: str | None = None) -> EmbeddingTable:
    """Read a table; ``format`` is inferred from the file's leading bytes if omitted."""
    path = Path(path)
    if format is None:
        with path.open("rb") as f:
            format = "binary" if f.read(len(BINARY_MAGIC)) == BINARY_MAGIC else "text"
    if format == "binary":
        return _load_binary(path)
    if format != "text":
        raise ValueError(f"unknown embedding format {format!r}")

    with path.open("r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingError(f"{path}:1: expected header 'V dim'")
        n, dim = int(header[0]), int(header[1])
        words, rows = [], []
        seen = set()
        for lineno, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as e:
                raise EmbeddingError(f"{path}:{lineno}: {e}") from None
            if parts[0] in seen:
                raise EmbeddingError(f"{path}:{lineno}: duplicate token {parts[0]!r}")
            seen.add(parts[0])
            words.append(parts[0])
    if len(words) != n:
        raise EmbeddingError(f"{path}: header declares {n} words, found {len(words)}")
    vectors = np.array(rows, dtype=np.float64).reshape(n, dim)
    if not np.all(np.isfinite(vectors)):
        raise EmbeddingError(f"{path}: non-finite vector component")
    return EmbeddingTable(words, vectors)


def _load_binary(path: Path) -> EmbeddingTable:
    data = path.read_bytes()
    if not data.startswith(BINARY_MAGIC):
        raise EmbeddingError(f"{path}: bad magic")
    off = len(BINARY_MAGIC)
    try:
        n, dim = struct.unpack_from("<II", data, off)
        off += 8
        words = []
        for _ in range(n):
            (k,) = struct.unpack_from("<I", data, off)
            off += 4
            words.append(data[off:off + k].decode("utf-8"))
            off += k
    except struct.error:
        raise EmbeddingError(f"{path}: truncated header") from None
    need = n * dim * 4
    if len(data) - off != need:
        raise EmbeddingError(f"{path}: expected {need} bytes of vectors, found {len(data) - off}")
    vectors = np.frombuffer(data, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
    return EmbeddingTable(words, vectors.astype(np.float64))


# ---------------------------------------------------------------- construction


def make_special_vectors(table: EmbeddingTable, tokens, rng_seed: int) -> EmbeddingTable:
    """Append random vectors whose components follow the table's per-component
    mean and standard deviation."""
    tokens = list(tokens)
    clash = [t for t in tokens if t in table]
    if clash or len(set(tokens)) != len(tokens):
        raise EmbeddingError(f"special tokens already present or repeated: {clash or tokens}")
    if not tokens:
        return table
    rng = np.random.default_rng(rng_seed)
    mean = table.vectors.mean(axis=0)
    std = table.vectors.std(axis=0) if len(table) > 1 else np.ones(table.dim)
    new = rng.normal(mean, std, size=(len(tokens), table.dim))
    return EmbeddingTable(table.words + tokens, np.vstack([table.vectors, new]),
                          table.extra_special | frozenset(tokens))


def synthetic_table(n_words: int, dim: int, seed: int, max_cos: float = 0.6,
                    specials=(EOS, UNK), prefix: str = "w") -> EmbeddingTable:
    """Gaussian toy dictionary whose rows pairwise have cosine <= ``max_cos``.

    Rows are drawn sequentially and a candidate is rejected while it is too
    close to an accepted row. ``specials`` are generated the same way and
    placed after the ``n_words`` ordinary words.
    """
    rng = np.random.default_rng(seed)
    total = n_words + len(specials)
    accepted = np.empty((0, dim))
    unit = np.empty((0, dim))
    tries = 0
    while len(accepted) < total:
        tries += 1
        if tries > 10000 * total:
            raise EmbeddingError(f"cannot place {total} vectors in dim {dim} with cos <= {max_cos}")
        v = rng.normal(size=dim)
        u = v / np.linalg.norm(v)
        if unit.size and np.max(unit @ u) > max_cos:
            continue
        accepted = np.vstack([accepted, v])
        unit = np.vstack([unit, u])
    width = len(str(n_words - 1))
    words = [f"{prefix}{i:0{width}d}" for i in range(n_words)] + list(specials)
    extra = frozenset(specials) - SPECIAL_NAMES
    return EmbeddingTable(words, accepted, extra)


# ---------------------------------------------------------------- matching


def cosine_scores(outputs: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """(N, V) cosine similarities via one product with the unit-row dictionary."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    if outputs.shape[-1] != table.dim:
        raise MatchError(f"output dim {outputs.shape[-1]} != table dim {table.dim}")
    norms = np.linalg.norm(outputs, axis=1)
    zero = np.flatnonzero(~(norms > 0))
    if zero.size:
        raise MatchError(f"output row {zero[0]} has zero norm")
    return (outputs @ table.unit.T) / norms[:, None]


def match_ids(outputs: np.ndarray, table: EmbeddingTable) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised core of :func:`match_batch`: ``(word_ids, similarities)``.

    ``outputs`` may carry any leading axes; results have those axes.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    lead = outputs.shape[:-1]
    scores = cosine_scores(outputs.reshape(-1, outputs.shape[-1]), table)
    ids = np.argmax(scores, axis=1)  # first maximum wins ties
    sims = np.clip(scores[np.arange(len(ids)), ids], -1.0, 1.0)
    return ids.reshape(lead), sims.reshape(lead)


def match_batch(outputs: np.ndarray, table: EmbeddingTable) -> list[MatchResult]:
    ids, sims = match_ids(np.atleast_2d(outputs), table)
    return [MatchResult(int(i), float(s)) for i, s in zip(ids, sims)]


def is_match(output: np.ndarray, target_id: int, table: EmbeddingTable) -> bool:
    return match_batch(np.asarray(output)[None, :], table)[0].word_id == target_id

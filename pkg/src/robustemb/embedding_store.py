"""Word-vector tables: parsing, snapshots, and distance statistics.

Matrices are plain ``float64`` numpy arrays of shape ``(V, D)``; row ``i``
belongs to ``vocab.words[i]``. Row 0 is always the reserved ``<unk>`` token.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

UNK = "<unk>"

SNAPSHOT_MAGIC = b"RBEMSNAP"
SNAPSHOT_VERSION = 1

# (V, V-1)/2 above this switches the auto pair mode to sampling
EXACT_PAIR_LIMIT = 10_000_000
DEFAULT_SAMPLE_PAIRS = 1_000_000


class EmbeddingParseError(ValueError):
    pass


class SnapshotError(ValueError):
    pass


class Vocabulary:
    """Bijection between word strings and dense row indices.

    ``words[0]`` is always ``"<unk>"``; use :meth:`from_tokens` to build one
    from a list of in-vocabulary words.
    """

    unk_index = 0

    def __init__(self, words: Iterable[str]):
        self.words = list(words)
        if not self.words or self.words[0] != UNK:
            raise ValueError(f"vocabulary must start with {UNK!r}")
        self.index_of: dict[str, int] = {}
        for i, w in enumerate(self.words):
            if w in self.index_of:
                raise ValueError(f"duplicate word {w!r}")
            self.index_of[w] = i

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls([UNK, *tokens])

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index_of

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    def get(self, word: str) -> int:
        """Index of ``word``, or the unknown index when it is absent."""
        return self.index_of.get(word, self.unk_index)

    def digest(self) -> str:
        h = hashlib.sha256()
        for w in self.words:
            h.update(w.encode("utf-8") + b"\n")
        return h.hexdigest()


@dataclass
class EmbeddingSnapshot:
    vocabulary: Vocabulary
    matrix: np.ndarray
    meta: dict = field(default_factory=dict)


def normalize_p(p) -> float:
    """Map a norm order given as int, float or string onto 1.0, 2.0 or inf."""
    if isinstance(p, str):
        p = p.strip().lower()
        p = math.inf if p in ("inf", "infinity", "max") else float(p)
    p = float(p)
    if p not in (1.0, 2.0, math.inf):
        raise ValueError(f"unsupported norm order {p!r}; use 1, 2 or inf")
    return p


def lp_norm(x: np.ndarray, p: float, axis: int = -1) -> np.ndarray:
    if p == 1.0:
        return np.abs(x).sum(axis=axis)
    if p == 2.0:
        return np.sqrt((x * x).sum(axis=axis))
    return np.abs(x).max(axis=axis)


def check_finite(matrix: np.ndarray, what: str = "embedding") -> None:
    if not np.all(np.isfinite(matrix)):
        bad = int(np.argwhere(~np.isfinite(matrix))[0][0])
        raise ValueError(f"{what} row {bad} contains a non-finite value")


def parse_embedding_file(stream: IO[str]) -> tuple[Vocabulary, np.ndarray]:
    """Parse ``word v1 ... vD`` lines into a vocabulary and a ``(V, D)`` matrix.

    ``<unk>`` is prepended at index 0 with the mean of all parsed vectors.
    Blank lines are ignored.
    """
    words: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    dim = None
    for lineno, line in enumerate(stream, start=1):
        parts = line.split()
        if not parts:
            continue
        word, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise EmbeddingParseError(f"line {lineno}: no vector components")
        elif len(values) != dim:
            raise EmbeddingParseError(
                f"line {lineno}: expected {dim} components, found {len(values)}"
            )
        try:
            vec = [float(v) for v in values]
        except ValueError as exc:
            raise EmbeddingParseError(f"line {lineno}: non-numeric field ({exc})") from None
        if not all(math.isfinite(v) for v in vec):
            raise EmbeddingParseError(f"line {lineno}: non-finite component")
        if word in seen or word == UNK:
            raise EmbeddingParseError(f"line {lineno}: duplicate word {word!r}")
        seen.add(word)
        words.append(word)
        rows.append(vec)
    if not rows:
        raise EmbeddingParseError("empty embedding stream")
    body = np.array(rows, dtype=np.float64)
    matrix = np.vstack([body.mean(axis=0, keepdims=True), body])
    return Vocabulary.from_tokens(words), matrix


def read_embedding_file(path) -> tuple[Vocabulary, np.ndarray]:
    with open(path, encoding="utf-8") as f:
        return parse_embedding_file(f)


def write_embedding_file(stream: IO[str], words: Iterable[str], matrix: np.ndarray) -> None:
    """Write one ``word v1 ... vD`` line per row using round-trip float repr."""
    for w, row in zip(words, matrix):
        stream.write(w + " " + " ".join(repr(float(x)) for x in row) + "\n")


def digest_embedding(vocab: Vocabulary, matrix: np.ndarray) -> str:
    h = hashlib.sha256(vocab.digest().encode("ascii"))
    h.update(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
    return h.hexdigest()


def _pair_from_linear(t: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Invert the row-major enumeration of pairs i < j over ``n`` items."""
    t = np.asarray(t, dtype=np.int64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * t)) / 2).astype(np.int64)
    start = i * (b - i) // 2
    # float rounding can leave i off by one in either direction
    over = start > t
    i[over] -= 1
    start = i * (b - i) // 2
    under = t - start >= n - 1 - i
    i[under] += 1
    start = i * (b - i) // 2
    j = t - start + i + 1
    return i, j


def mean_pairwise_distance(matrix: np.ndarray, p=2, sample_pairs="auto", seed: int = 0) -> float:
    """Mean l_p distance over unordered pairs of distinct rows.

    ``sample_pairs`` is ``"exact"`` (all pairs), a positive count of pairs
    drawn uniformly without replacement, or ``"auto"`` (exact up to 1e7 pairs,
    otherwise one million sampled pairs).
    """
    p = normalize_p(p)
    x = np.asarray(matrix, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows for a pairwise distance")
    total = n * (n - 1) // 2
    if sample_pairs == "auto":
        sample_pairs = "exact" if total <= EXACT_PAIR_LIMIT else DEFAULT_SAMPLE_PAIRS
    if sample_pairs == "exact":
        acc = 0.0
        for i in range(n - 1):
            acc += float(lp_norm(x[i + 1 :] - x[i], p).sum())
        return acc / total
    m = int(sample_pairs)
    if m < 1:
        raise ValueError("sample_pairs must be >= 1")
    m = min(m, total)
    rng = np.random.default_rng(seed)
    t = rng.choice(total, size=m, replace=False)
    i, j = _pair_from_linear(t, n)
    return float(lp_norm(x[i] - x[j], p).mean())


def save_snapshot(snapshot: EmbeddingSnapshot, path) -> None:
    """Write magic, version, V, D, metadata JSON, vocabulary, then little-endian f8 rows."""
    matrix = np.ascontiguousarray(snapshot.matrix, dtype="<f8")
    v, d = matrix.shape
    if v != len(snapshot.vocabulary):
        raise ValueError("matrix rows do not match vocabulary size")
    meta = json.dumps(snapshot.meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<IQQQ", SNAPSHOT_VERSION, v, d, len(meta)))
        f.write(meta)
        for w in snapshot.vocabulary.words:
            b = w.encode("utf-8")
            f.write(struct.pack("<I", len(b)))
            f.write(b)
        f.write(matrix.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError(f"truncated file at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_snapshot(path) -> EmbeddingSnapshot:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
        raise SnapshotError("not an embedding snapshot (bad magic)")
    version, v, d, meta_len = r.unpack("<IQQQ")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"snapshot version {version}, expected {SNAPSHOT_VERSION}")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        words = []
        for _ in range(v):
            (n,) = r.unpack("<I")
            words.append(r.take(n).decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise SnapshotError(f"corrupt snapshot: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"corrupt snapshot metadata: {exc}") from None
    matrix = np.frombuffer(r.take(8 * v * d), dtype="<f8").reshape(v, d).astype(np.float64)
    if r.pos != len(r.data):
        raise SnapshotError("trailing bytes after matrix block")
    return EmbeddingSnapshot(Vocabulary(words), matrix, meta)

"""Labeled text datasets and the synthetic synonym-cluster benchmark.

The synthetic benchmark partitions the vocabulary into synonym clusters.
Some clusters indicate a class, the rest are filler. A sentence's label is
the class with the most indicative tokens, so swapping any word for a
member of its own cluster never changes the label.
"""

from __future__ import annotations

import hashlib
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from .embedding_store import Vocabulary, write_embedding_file
from .seeding import derive_rng

log = logging.getLogger(__name__)

_PUNCT = string.punctuation


class DatasetError(ValueError):
    pass


class InfeasibleSpecError(ValueError):
    pass


@dataclass
class Example:
    label: int
    tokens: np.ndarray
    raw_text: str


@dataclass
class Dataset:
    examples: list[Example]
    num_classes: int
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        if not self.splits:
            self.splits = {"all": np.arange(len(self.examples))}
        for ex in self.examples:
            if not 0 <= ex.label < self.num_classes:
                raise DatasetError(f"label {ex.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.examples)

    def split(self, name: str) -> list[Example]:
        return [self.examples[i] for i in self.splits[name]]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip ASCII punctuation from token ends."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def load_tsv(stream: IO[str], vocab: Vocabulary) -> Dataset:
    """Read ``label<TAB>text`` lines. Lines with no usable tokens are skipped and counted."""
    examples = []
    skipped = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n").rstrip("\r")
        label_s, tab, text = line.partition("\t")
        if not tab:
            raise DatasetError(f"line {lineno}: expected label<TAB>text")
        try:
            label = int(label_s)
        except ValueError:
            raise DatasetError(f"line {lineno}: label {label_s!r} is not an integer") from None
        if label < 0:
            raise DatasetError(f"line {lineno}: negative label {label}")
        words = tokenize(text)
        if not words:
            skipped += 1
            continue
        tokens = np.array([vocab.get(w) for w in words], dtype=np.int64)
        examples.append(Example(label, tokens, text))
    if skipped:
        log.warning("skipped %d lines with no usable tokens", skipped)
    num_classes = max((ex.label for ex in examples), default=-1) + 1
    return Dataset(examples, num_classes, skipped=skipped)


def read_tsv(path, vocab: Vocabulary) -> Dataset:
    with open(path, encoding="utf-8") as f:
        return load_tsv(f, vocab)


def write_tsv(stream: IO[str], examples, vocab: Vocabulary) -> None:
    for ex in examples:
        stream.write(f"{ex.label}\t{' '.join(vocab.words[t] for t in ex.tokens)}\n")


def load_dataset_dir(data_dir, vocab: Vocabulary, dev_fraction: float = 0.1, seed: int = 0) -> Dataset:
    """Combine ``train.tsv`` and ``test.tsv``; a seeded ``dev`` split is carved out of train."""
    data_dir = Path(data_dir)
    train = read_tsv(data_dir / "train.tsv", vocab)
    test = read_tsv(data_dir / "test.tsv", vocab)
    n_train = len(train)
    perm = derive_rng(seed, "dev-split").permutation(n_train)
    n_dev = int(round(dev_fraction * n_train))
    dev_idx = np.sort(perm[:n_dev])
    train_idx = np.sort(perm[n_dev:])
    test_idx = np.arange(n_train, n_train + len(test))
    return Dataset(
        train.examples + test.examples,
        max(train.num_classes, test.num_classes),
        {"train": train_idx, "dev": dev_idx, "test": test_idx},
        skipped=train.skipped + test.skipped,
    )


@dataclass
class GeneratorSpec:
    """Synthetic benchmark settings; every key has a default."""

    vocab_size: int = 2000
    cluster_size_min: int = 1
    cluster_size_max: int = 9
    num_classes: int = 2
    indicative_cluster_fraction: float = 0.3
    indicative_token_fraction: float = 0.4
    min_len: int = 10
    max_len: int = 20
    head_word_prob: float = 0.97
    emb_dim: int = 32
    emb_scale: float = 0.3
    cf_dim: int = 16
    cf_spread: float = 10.0
    delta: float = 0.5
    n_train: int = 2000
    n_test: int = 500

    def validate(self) -> None:
        if self.vocab_size < 2 or self.num_classes < 2:
            raise InfeasibleSpecError("need vocab_size >= 2 and num_classes >= 2")
        if not 1 <= self.cluster_size_min <= self.cluster_size_max:
            raise InfeasibleSpecError("need 1 <= cluster_size_min <= cluster_size_max")
        if not 1 <= self.min_len <= self.max_len:
            raise InfeasibleSpecError("need 1 <= min_len <= max_len")
        if not (0 < self.indicative_cluster_fraction < 1 and 0 < self.indicative_token_fraction <= 1):
            raise InfeasibleSpecError("indicative fractions must lie in (0, 1)")
        if not 0 <= self.head_word_prob <= 1:
            raise InfeasibleSpecError("head_word_prob must lie in [0, 1]")
        if self.delta <= 0 or self.cf_spread <= 0 or self.emb_dim < 1 or self.cf_dim < 1:
            raise InfeasibleSpecError("delta, cf_spread, emb_dim and cf_dim must be positive")
        if self.n_train < 1 or self.n_test < 1:
            raise InfeasibleSpecError("n_train and n_test must be >= 1")


@dataclass
class SyntheticBenchmark:
    words: list[str]
    cluster_of: np.ndarray  # word position (0-based, no unk) -> cluster id
    cluster_class: np.ndarray  # cluster id -> class, or -1 for filler
    cf_matrix: np.ndarray
    emb_matrix: np.ndarray
    train: list[tuple[int, list[str]]]
    test: list[tuple[int, list[str]]]
    num_classes: int

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.cluster_of == c) for c in range(len(self.cluster_class))]

    def label_of(self, words) -> int:
        """Ground-truth labeling function: class with the most indicative tokens."""
        pos = {w: i for i, w in enumerate(self.words)}
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for w in words:
            c = self.cluster_class[self.cluster_of[pos[w]]]
            if c >= 0:
                counts[c] += 1
        return int(np.argmax(counts))


def _cluster_sizes(spec: GeneratorSpec, rng) -> np.ndarray:
    sizes = []
    left = spec.vocab_size
    while left > 0:
        s = int(rng.integers(spec.cluster_size_min, spec.cluster_size_max + 1))
        s = min(s, left)
        sizes.append(s)
        left -= s
    return np.array(sizes, dtype=np.int64)


def _cluster_centers(n: int, spec: GeneratorSpec, rng, max_tries: int = 1000) -> np.ndarray:
    # members sit within 0.45*delta of their centre: intra <= 0.9*delta, inter >= sep - 0.9*delta
    sep = 4.9 * spec.delta
    centers = np.zeros((n, spec.cf_dim))
    for i in range(n):
        for _ in range(max_tries):
            c = rng.uniform(0.0, spec.cf_spread, size=spec.cf_dim)
            if i == 0 or np.sqrt(((centers[:i] - c) ** 2).sum(axis=1)).min() >= sep:
                centers[i] = c
                break
        else:
            raise InfeasibleSpecError(
                f"cannot place {n} clusters {sep:.3g} apart in a cube of side {spec.cf_spread} "
                f"in {spec.cf_dim} dimensions"
            )
    return centers


def _pick_word(members: np.ndarray, head_prob: float, rng) -> int:
    if len(members) == 1 or rng.random() < head_prob:
        return int(members[0])
    return int(members[1 + rng.integers(0, len(members) - 1)])


def _make_sentences(n, spec, class_clusters, filler, clusters, words, rng):
    out = []
    for _ in range(n):
        y = int(rng.integers(0, spec.num_classes))
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        m = max(1, int(round(spec.indicative_token_fraction * length)))
        counts = np.zeros(spec.num_classes, dtype=np.int64)
        counts[y] = m // 2 + 1
        others = [c for c in range(spec.num_classes) if c != y]
        for _ in range(m - counts[y]):
            counts[others[rng.integers(0, len(others))]] += 1
        picks = []
        for c in range(spec.num_classes):
            for _ in range(counts[c]):
                cl = class_clusters[c][rng.integers(0, len(class_clusters[c]))]
                picks.append(_pick_word(clusters[cl], spec.head_word_prob, rng))
        for _ in range(length - len(picks)):
            cl = filler[rng.integers(0, len(filler))]
            picks.append(_pick_word(clusters[cl], spec.head_word_prob, rng))
        order = rng.permutation(len(picks))
        out.append((y, [words[picks[i]] for i in order]))
    return out


def generate_synthetic(spec: GeneratorSpec, seed: int) -> SyntheticBenchmark:
    """Build the benchmark in memory; see :func:`write_synthetic` for files.

    Synonym clusters live in the counter-fitted space with every
    intra-cluster distance <= delta and every inter-cluster distance
    >= 4 * delta. The training embedding is independent Gaussian noise.
    Within a cluster the first member is the common "head" word, drawn with
    probability ``head_word_prob``; other members are rare.
    """
    spec.validate()
    rng = derive_rng(seed, "gen-clusters")
    sizes = _cluster_sizes(spec, rng)
    n_clusters = len(sizes)
    n_ind = int(round(spec.indicative_cluster_fraction * n_clusters))
    if n_ind < spec.num_classes or n_clusters - n_ind < 1:
        raise InfeasibleSpecError("too few clusters for the requested classes and filler")
    cluster_class = np.full(n_clusters, -1, dtype=np.int64)
    chosen = rng.permutation(n_clusters)[:n_ind]
    cluster_class[chosen] = np.arange(n_ind) % spec.num_classes
    cluster_of = rng.permutation(np.repeat(np.arange(n_clusters), sizes))
    width = len(str(spec.vocab_size - 1))
    words = [f"w{i:0{width}d}" for i in range(spec.vocab_size)]
    clusters = [np.flatnonzero(cluster_of == c) for c in range(n_clusters)]

    cf_rng = derive_rng(seed, "gen-cf")
    centers = _cluster_centers(n_clusters, spec, cf_rng)
    direction = cf_rng.normal(size=(spec.vocab_size, spec.cf_dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = 0.45 * spec.delta * cf_rng.uniform(0.0, 1.0, size=spec.vocab_size) ** (1.0 / spec.cf_dim)
    cf_matrix = centers[cluster_of] + direction * radius[:, None]

    emb_matrix = derive_rng(seed, "gen-emb").normal(0.0, spec.emb_scale, size=(spec.vocab_size, spec.emb_dim))

    class_clusters = [np.flatnonzero(cluster_class == c) for c in range(spec.num_classes)]
    filler = np.flatnonzero(cluster_class < 0)
    train = _make_sentences(spec.n_train, spec, class_clusters, filler, clusters, words, derive_rng(seed, "gen-train"))
    test = _make_sentences(spec.n_test, spec, class_clusters, filler, clusters, words, derive_rng(seed, "gen-test"))
    return SyntheticBenchmark(words, cluster_of, cluster_class, cf_matrix, emb_matrix, train, test, spec.num_classes)


SYNTHETIC_FILES = ("embeddings.txt", "counterfitted.txt", "train.tsv", "test.tsv")


def write_synthetic(bench: SyntheticBenchmark, out_dir) -> dict[str, str]:
    """Write the four benchmark files; returns ``{filename: sha256}``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "embeddings.txt", "w", encoding="utf-8", newline="\n") as f:
        write_embedding_file(f, bench.words, bench.emb_matrix)
    with open(out_dir / "counterfitted.txt", "w", encoding="utf-8", newline="\n") as f:
        write_embedding_file(f, bench.words, bench.cf_matrix)
    for name, rows in (("train.tsv", bench.train), ("test.tsv", bench.test)):
        with open(out_dir / name, "w", encoding="utf-8", newline="\n") as f:
            for y, ws in rows:
                f.write(f"{y}\t{' '.join(ws)}\n")
    return {name: file_digest(out_dir / name) for name in SYNTHETIC_FILES}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

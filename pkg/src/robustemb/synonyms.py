"""Synonym sets from a counter-fitted space, and negative sampling.

A word's synonym set holds at most ``k`` nearest words within distance
``delta`` in the counter-fitted space, restricted to the training
vocabulary. Search is exact brute force.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .embedding_store import Vocabulary, digest_embedding, lp_norm, normalize_p

DICT_HEADER = "# synonym-dict v1"


class SynonymDictError(ValueError):
    pass


class StaleDictionaryWarning(UserWarning):
    """The dictionary was built from a different counter-fitted file."""


@dataclass(frozen=True)
class SynonymConfig:
    k: int = 8
    delta: float = 0.5
    p: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "p", normalize_p(self.p))
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        # delta=0 is accepted so the "threshold excludes everything" case is expressible
        if not self.delta >= 0 or not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta!r}")


@dataclass
class SynonymDict:
    words: list[str]
    sets: list[np.ndarray]
    config: SynonymConfig
    source_digest: str

    def __post_init__(self):
        self.sets = [np.asarray(s, dtype=np.int64) for s in self.sets]
        if len(self.sets) != len(self.words):
            raise SynonymDictError("one synonym set per vocabulary word required")
        for w, s in enumerate(self.sets):
            if len(s) > self.config.k:
                raise SynonymDictError(
                    f"word {self.words[w]!r} has {len(s)} synonyms but k={self.config.k}"
                )
            if w in s:
                raise SynonymDictError(f"word {self.words[w]!r} lists itself as a synonym")
            if len(set(s.tolist())) != len(s):
                raise SynonymDictError(f"word {self.words[w]!r} has duplicate synonyms")

    def __len__(self) -> int:
        return len(self.sets)

    def __getitem__(self, w: int) -> np.ndarray:
        return self.sets[w]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, SynonymDict)
            and self.words == other.words
            and self.config == other.config
            and self.source_digest == other.source_digest
            and all(np.array_equal(a, b) for a, b in zip(self.sets, other.sets))
        )

    @property
    def k(self) -> int:
        return self.config.k

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.sets], dtype=np.int64)

    @cached_property
    def table(self) -> np.ndarray:
        """``(V, k)`` synonym indices padded with -1."""
        tab = np.full((len(self.sets), self.k), -1, dtype=np.int64)
        for w, s in enumerate(self.sets):
            tab[w, : len(s)] = s
        return tab

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All (anchor, synonym) index pairs in dictionary order."""
        anchors = np.repeat(np.arange(len(self.sets)), self.sizes)
        syns = np.concatenate(self.sets) if len(anchors) else np.zeros(0, dtype=np.int64)
        return anchors, syns.astype(np.int64)


def build_synonym_dict(
    cf_vocab: Vocabulary,
    cf_matrix: np.ndarray,
    target_vocab: Vocabulary,
    config: SynonymConfig,
    source_digest: str | None = None,
) -> SynonymDict:
    """Brute-force ``k``-nearest neighbours within ``delta`` for every target word.

    Neighbours are restricted to target words that also appear in the
    counter-fitted vocabulary. Ties at equal distance go to the lower
    target index. ``<unk>`` never has or is a synonym.
    """
    shared_t, shared_cf = [], []
    for t, w in enumerate(target_vocab.words):
        if t == target_vocab.unk_index:
            continue
        c = cf_vocab.index_of.get(w)
        if c is not None and c != cf_vocab.unk_index:
            shared_t.append(t)
            shared_cf.append(c)
    if not shared_t:
        raise SynonymDictError("counter-fitted and target vocabularies share no words")
    if source_digest is None:
        source_digest = digest_embedding(cf_vocab, cf_matrix)

    tidx = np.array(shared_t, dtype=np.int64)
    x = np.asarray(cf_matrix, dtype=np.float64)[np.array(shared_cf)]
    n, dim = x.shape
    sets = [np.zeros(0, dtype=np.int64) for _ in range(len(target_vocab))]
    block = max(1, (1 << 22) // max(1, n * dim))
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        dist = lp_norm(x[lo:hi, None, :] - x[None, :, :], config.p)
        for r in range(hi - lo):
            a = lo + r
            cand = np.flatnonzero(dist[r] <= config.delta)
            cand = cand[cand != a]
            if cand.size == 0:
                continue
            # tidx is ascending, so sorting on local position breaks ties by word index
            order = np.lexsort((cand, dist[r, cand]))
            sets[tidx[a]] = tidx[cand[order[: config.k]]]
    return SynonymDict(list(target_vocab.words), sets, config, source_digest)


def _eligible_counts(syn: SynonymDict, anchors: np.ndarray, pool: np.ndarray | None) -> np.ndarray:
    if pool is None:
        # everything except unk, the anchor and its synonyms
        return (len(syn) - 2 - syn.sizes[anchors]).astype(np.int64)
    in_pool = np.zeros(len(syn), dtype=bool)
    in_pool[pool] = True
    tab = syn.table[anchors]
    syn_in_pool = ((tab >= 0) & in_pool[np.maximum(tab, 0)]).sum(axis=1)
    return len(pool) - in_pool[anchors].astype(np.int64) - syn_in_pool


def sample_negative_table(
    syn: SynonymDict,
    anchors,
    rng: np.random.Generator,
    pool: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``k`` distinct negatives for each anchor; returns a ``(T, k)`` array.

    Negatives are uniform over ``pool`` (default: every non-unk word) with the
    anchor, its synonyms and ``<unk>`` excluded. Invalid draws are redrawn
    until none remain, which yields a uniform ``k``-subset of the eligible
    words.
    """
    anchors = np.asarray(anchors, dtype=np.int64).reshape(-1)
    k = syn.k
    if pool is None:
        pool = np.arange(1, len(syn), dtype=np.int64)
    else:
        pool = np.unique(np.asarray(pool, dtype=np.int64))
        pool = pool[pool != 0]
    if anchors.size == 0:
        return np.zeros((0, k), dtype=np.int64)
    short = _eligible_counts(syn, anchors, pool) < k
    if short.any():
        a = int(anchors[np.argmax(short)])
        raise SynonymDictError(
            f"too few eligible negatives for word {syn.words[a]!r} (need {k})"
        )
    tab = syn.table[anchors]
    draws = pool[rng.integers(0, len(pool), size=(anchors.size, k))]
    earlier = np.tril(np.ones((k, k), dtype=bool), -1)
    while True:
        bad = draws == anchors[:, None]
        bad |= (draws[:, :, None] == tab[:, None, :]).any(axis=2)
        bad |= ((draws[:, :, None] == draws[:, None, :]) & earlier).any(axis=2)
        nbad = int(bad.sum())
        if nbad == 0:
            return draws
        draws[bad] = pool[rng.integers(0, len(pool), size=nbad)]


def sample_negatives(syn: SynonymDict, anchor: int, rng: np.random.Generator, pool=None) -> np.ndarray:
    return sample_negative_table(syn, [anchor], rng, pool)[0]


def _escape(word: str) -> str:
    return word.replace("\\", "\\\\").replace(",", "\\,")


def _split_escaped(field: str) -> list[str]:
    out, cur, i = [], [], 0
    while i < len(field):
        ch = field[i]
        if ch == "\\" and i + 1 < len(field):
            cur.append(field[i + 1])
            i += 2
            continue
        if ch == ",":
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    out.append("".join(cur))
    return out


def _format_p(p: float) -> str:
    return "inf" if p == math.inf else str(int(p))


def save_dict(syn: SynonymDict, path) -> None:
    """One ``word<TAB>syn1,syn2,...`` line per vocabulary word after a header."""
    lines = [
        DICT_HEADER,
        f"# k={syn.config.k}",
        f"# delta={syn.config.delta!r}",
        f"# p={_format_p(syn.config.p)}",
        f"# digest={syn.source_digest}",
    ]
    for w, s in zip(syn.words, syn.sets):
        lines.append(w + "\t" + ",".join(_escape(syn.words[j]) for j in s))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_dict(path, cf_digest: str | None = None) -> SynonymDict:
    """Read a dictionary file, validating it against its own header.

    When ``cf_digest`` is given and differs from the recorded digest a
    :class:`StaleDictionaryWarning` is issued.
    """
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != DICT_HEADER:
        raise SynonymDictError("missing synonym-dict header")
    header = {}
    body_start = 1
    while body_start < len(lines) and lines[body_start].startswith("# "):
        key, _, value = lines[body_start][2:].partition("=")
        header[key] = value
        body_start += 1
    try:
        config = SynonymConfig(k=int(header["k"]), delta=float(header["delta"]), p=header["p"])
        digest = header["digest"]
    except (KeyError, ValueError) as exc:
        raise SynonymDictError(f"bad dictionary header: {exc}") from None

    words, raw = [], []
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        word, tab, rest = line.partition("\t")
        if not tab:
            raise SynonymDictError(f"line {lineno}: expected word<TAB>synonyms")
        words.append(word)
        raw.append(_split_escaped(rest) if rest else [])
    index_of = {w: i for i, w in enumerate(words)}
    if len(index_of) != len(words):
        raise SynonymDictError("duplicate word in dictionary file")
    sets = []
    for w, names in zip(words, raw):
        try:
            sets.append([index_of[n] for n in names])
        except KeyError as exc:
            raise SynonymDictError(f"synonym {exc} of {w!r} is not a dictionary word") from None
    syn = SynonymDict(words, sets, config, digest)
    if cf_digest is not None and cf_digest != digest:
        warnings.warn(
            f"synonym dictionary {path} was built from a different counter-fitted file",
            StaleDictionaryWarning,
            stacklevel=2,
        )
    return syn

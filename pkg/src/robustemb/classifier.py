"""Mean-pool MLP text classifier with hand-written forward and backward passes.

    probs = softmax(W2 @ relu(W1 @ mean(E[tokens]) + b1) + b2)

Inputs longer than ``max_len`` tokens are truncated; there is no padding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

CHECKPOINT_MAGIC = b"RBEMCKPT"
CHECKPOINT_VERSION = 1
DEFAULT_MAX_LEN = 200


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    embedding: np.ndarray  # (V, D)
    W1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (C, H)
    b2: np.ndarray  # (C,)
    max_len: int = DEFAULT_MAX_LEN

    GROUPS = ("embedding", "W1", "b1", "W2", "b2")

    def __post_init__(self):
        v, d = self.embedding.shape
        h = self.W1.shape[0]
        c = self.W2.shape[0]
        if self.W1.shape != (h, d) or self.b1.shape != (h,):
            raise ValueError("W1/b1 shapes inconsistent with embedding dimension")
        if self.W2.shape != (c, h) or self.b2.shape != (c,):
            raise ValueError("W2/b2 shapes inconsistent with hidden size")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.embedding.copy(), self.W1.copy(), self.b1.copy(),
            self.W2.copy(), self.b2.copy(), self.max_len,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, g))) for g in self.GROUPS)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def init_params(
    embedding: np.ndarray | None,
    num_classes: int,
    rng: np.random.Generator,
    hidden_dim: int = 64,
    vocab_size: int | None = None,
    dim: int | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> ModelParams:
    """Glorot-uniform affine layers, zero biases.

    Without a pretrained ``embedding`` the table is drawn from U(-0.1, 0.1)
    with shape ``(vocab_size, dim)``.
    """
    if embedding is None:
        embedding = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
    embedding = np.array(embedding, dtype=np.float64)
    d = embedding.shape[1]
    W1 = glorot_uniform(rng, hidden_dim, d)
    W2 = glorot_uniform(rng, num_classes, hidden_dim)
    return ModelParams(embedding, W1, np.zeros(hidden_dim), W2, np.zeros(num_classes), max_len)


@dataclass
class ForwardCache:
    tokens: np.ndarray
    pooled: np.ndarray
    h_pre: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class BatchCache:
    """Forward intermediates for a batch; ``tokens`` is the concatenation of all sentences."""

    tokens: np.ndarray
    segments: np.ndarray  # sentence id of each flat token
    lengths: np.ndarray
    pooled: np.ndarray
    h_pre: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    emb_rows: np.ndarray | None = None
    emb_grads: np.ndarray | None = None

    def embedding_dict(self) -> dict[int, np.ndarray]:
        if self.emb_rows is None:
            return {}
        return {int(r): g for r, g in zip(self.emb_rows, self.emb_grads)}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_tokens(params: ModelParams, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)[: params.max_len]
    if tokens.size == 0:
        raise ValueError("empty token list")
    if tokens.min() < 0 or tokens.max() >= params.vocab_size:
        raise IndexError(f"token index out of range for vocabulary of {params.vocab_size}")
    return tokens


def forward(params: ModelParams, tokens) -> tuple[np.ndarray, ForwardCache]:
    tokens = _check_tokens(params, tokens)
    pooled = params.embedding[tokens].mean(axis=0)
    h_pre = params.W1 @ pooled + params.b1
    h = np.maximum(h_pre, 0.0)
    logits = params.W2 @ h + params.b2
    probs = softmax(logits)
    return probs, ForwardCache(tokens, pooled, h_pre, h, logits, probs)


def forward_batch(params: ModelParams, sentences) -> BatchCache:
    seqs = [_check_tokens(params, s) for s in sentences]
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    flat = np.concatenate(seqs)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    pooled = np.add.reduceat(params.embedding[flat], offsets, axis=0) / lengths[:, None]
    h_pre = pooled @ params.W1.T + params.b1
    h = np.maximum(h_pre, 0.0)
    logits = h @ params.W2.T + params.b2
    segments = np.repeat(np.arange(len(seqs)), lengths)
    return BatchCache(flat, segments, lengths, pooled, h_pre, h, logits, softmax(logits))


def cross_entropy(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` via log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    return float(logsumexp(logits) - logits[label])


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return logsumexp(logits, axis=1) - logits[np.arange(len(labels)), labels]


def backward(params: ModelParams, cache: ForwardCache, label: int, frozen_embedding: bool = False) -> Gradients:
    """Exact gradients of ``cross_entropy(cache.logits, label)``."""
    if cache.pooled.shape[0] != params.embedding.shape[1] or cache.logits.shape[0] != params.num_classes:
        raise ValueError("forward cache does not match parameter shapes")
    if not 0 <= label < params.num_classes:
        raise ValueError(f"label {label} out of range")
    dlogits = cache.probs.copy()
    dlogits[label] -= 1.0
    dW2 = np.outer(dlogits, cache.h)
    dh = params.W2.T @ dlogits
    dh_pre = dh * (cache.h_pre > 0)
    dW1 = np.outer(dh_pre, cache.pooled)
    grads = Gradients(dW1, dh_pre, dW2, dlogits)
    if not frozen_embedding:
        dpooled = params.W1.T @ dh_pre
        rows, counts = np.unique(cache.tokens, return_counts=True)
        grads.emb_rows = rows
        grads.emb_grads = np.outer(counts / len(cache.tokens), dpooled)
    return grads


def backward_batch(
    params: ModelParams,
    cache: BatchCache,
    labels,
    weights=None,
    frozen_embedding: bool = False,
) -> Gradients:
    """Gradients of ``sum_b weights[b] * CE_b`` (default weights ``1/B``)."""
    labels = np.asarray(labels, dtype=np.int64)
    b = len(labels)
    w = np.full(b, 1.0 / b) if weights is None else np.asarray(weights, dtype=np.float64)
    dlogits = cache.probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits *= w[:, None]
    dW2 = dlogits.T @ cache.h
    dh_pre = (dlogits @ params.W2) * (cache.h_pre > 0)
    dW1 = dh_pre.T @ cache.pooled
    grads = Gradients(dW1, dh_pre.sum(axis=0), dW2, dlogits.sum(axis=0))
    if not frozen_embedding:
        dpooled = dh_pre @ params.W1
        per_token = dpooled[cache.segments] / cache.lengths[cache.segments, None]
        rows, inverse = np.unique(cache.tokens, return_inverse=True)
        emb = np.zeros((rows.size, per_token.shape[1]))
        np.add.at(emb, inverse, per_token)
        grads.emb_rows, grads.emb_grads = rows, emb
    return grads


def predict(params: ModelParams, tokens) -> int:
    probs, _ = forward(params, tokens)
    return int(np.argmax(probs))


def predict_batch(params: ModelParams, sentences) -> np.ndarray:
    return np.argmax(forward_batch(params, sentences).logits, axis=1)


def save_checkpoint(params: ModelParams, path, vocab_digest: str, meta: dict | None = None) -> None:
    """Header (magic, version, V, D, H, C, max_len, vocab digest, JSON meta) then f8 arrays."""
    meta_b = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    digest_b = vocab_digest.encode("ascii")
    v, d = params.embedding.shape
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQQQQQ", CHECKPOINT_VERSION, v, d, params.hidden_dim, params.num_classes, params.max_len))
        f.write(struct.pack("<I", len(digest_b)))
        f.write(digest_b)
        f.write(struct.pack("<Q", len(meta_b)))
        f.write(meta_b)
        for g in ModelParams.GROUPS:
            f.write(np.ascontiguousarray(getattr(params, g), dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, str, dict]:
    """Return ``(params, vocab_digest, meta)``."""
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    version, v, d, h, c, max_len = struct.unpack("<IQQQQQ", take(44))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (dlen,) = struct.unpack("<I", take(4))
    digest = take(dlen).decode("ascii")
    (mlen,) = struct.unpack("<Q", take(8))
    meta = json.loads(take(mlen).decode("utf-8"))
    shapes = {"embedding": (v, d), "W1": (h, d), "b1": (h,), "W2": (c, h), "b2": (c,)}
    arrays = {}
    for g in ModelParams.GROUPS:
        n = int(np.prod(shapes[g]))
        arrays[g] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shapes[g]).astype(np.float64)
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint arrays")
    return ModelParams(max_len=int(max_len), **arrays), digest, meta

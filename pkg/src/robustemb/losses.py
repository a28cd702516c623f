"""Word distance, the capped triplet loss, its contrastive variant, and gradients.

All losses are evaluated on a batch of anchor words at once. Positives and
negatives come as padded ``(T, k, D)`` arrays with boolean masks, so the
single-word entry points are the ``T = 1`` case of the same code.

Triplet loss for one word ``w`` with synonyms ``S`` and negatives ``N``::

    mean_{s in S} d(w, s) - mean_{n in N} min(d(w, n), alpha) + alpha

Contrastive variant with temperature ``tau``::

    -log( sum_S exp(-d/tau) / sum_{S u N} exp(-min(d, alpha)/tau) )
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .embedding_store import lp_norm, normalize_p
from .synonyms import SynonymDict

VARIANTS = ("triplet", "contrastive")
AVG_MODES = ("nonempty", "all")


@dataclass(frozen=True)
class LossConfig:
    p: float = 2.0
    alpha: float = 1.0
    variant: str = "triplet"
    tau: float = 20.0
    epsilon_guard: float = 1e-12
    cap_numerator: bool = False
    avg_mode: str = "nonempty"

    def __post_init__(self):
        object.__setattr__(self, "p", normalize_p(self.p))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.avg_mode not in AVG_MODES:
            raise ValueError(f"avg_mode must be one of {AVG_MODES}, got {self.avg_mode!r}")
        # alpha = 0 is the pull-only end of the margin sweep
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if self.variant == "contrastive" and not self.tau > 0:
            raise ValueError("tau must be > 0 for the contrastive variant")
        if not self.epsilon_guard > 0:
            raise ValueError("epsilon_guard must be > 0")


@dataclass
class WordLoss:
    """Loss for one anchor word and its gradients with respect to each vector."""

    value: float
    anchor_grad: np.ndarray
    positive_grads: np.ndarray
    negative_grads: np.ndarray


@dataclass
class LossOutput:
    value: float
    grads: dict[int, np.ndarray]


def word_distance(u, v, p=2) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(lp_norm(u - v, normalize_p(p)))


def distance_and_grad(diff: np.ndarray, p: float, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """l_p norm of ``diff`` over the last axis and its gradient w.r.t. ``diff``.

    Subgradients: zero when the norm is below ``eps``; sign(0) = 0 for p=1;
    for p=inf only the first max-magnitude coordinate carries the gradient.
    """
    d = lp_norm(diff, p)
    if p == 1.0:
        g = np.sign(diff)
    elif p == 2.0:
        safe = np.where(d < eps, 1.0, d)
        g = diff / safe[..., None]
    else:
        j = np.argmax(np.abs(diff), axis=-1)
        g = np.zeros_like(diff)
        np.put_along_axis(g, j[..., None], np.sign(np.take_along_axis(diff, j[..., None], -1)), -1)
    g = np.where((d < eps)[..., None], 0.0, g)
    return d, g


def _triplet_batch(a, pos, pmask, neg, nmask, cfg: LossConfig):
    dp, gp = distance_and_grad(a[:, None, :] - pos, cfg.p, cfg.epsilon_guard)
    dn, gn = distance_and_grad(a[:, None, :] - neg, cfg.p, cfg.epsilon_guard)
    npos = pmask.sum(axis=1)
    nneg = nmask.sum(axis=1)
    wp = np.where(pmask, 1.0 / np.maximum(npos, 1)[:, None], 0.0)
    active = nmask & (dn < cfg.alpha)
    wn = np.where(active, 1.0 / np.maximum(nneg, 1)[:, None], 0.0)
    capped = np.where(nmask, np.minimum(dn, cfg.alpha), 0.0)
    values = (wp * dp).sum(axis=1) - capped.sum(axis=1) / np.maximum(nneg, 1) + cfg.alpha
    coef_p = wp[..., None] * gp
    coef_n = wn[..., None] * gn
    ga = coef_p.sum(axis=1) - coef_n.sum(axis=1)
    return values, ga, -coef_p, coef_n


def _contrastive_batch(a, pos, pmask, neg, nmask, cfg: LossConfig):
    dp, gp = distance_and_grad(a[:, None, :] - pos, cfg.p, cfg.epsilon_guard)
    dn, gn = distance_and_grad(a[:, None, :] - neg, cfg.p, cfg.epsilon_guard)
    tau, alpha = cfg.tau, cfg.alpha
    num_d = np.minimum(dp, alpha) if cfg.cap_numerator else dp
    num_logits = np.where(pmask, -num_d / tau, -np.inf)
    den_logits = np.concatenate(
        [
            np.where(pmask, -np.minimum(dp, alpha) / tau, -np.inf),
            np.where(nmask, -np.minimum(dn, alpha) / tau, -np.inf),
        ],
        axis=1,
    )
    lse_num = logsumexp(num_logits, axis=1)
    lse_den = logsumexp(den_logits, axis=1)
    values = lse_den - lse_num
    a_w = np.exp(num_logits - lse_num[:, None])
    b_w = np.exp(den_logits - lse_den[:, None])
    k = pos.shape[1]
    bp, bn = b_w[:, :k], b_w[:, k:]
    num_active = (dp < alpha) if cfg.cap_numerator else np.ones_like(dp, dtype=bool)
    # dL/dd for every positive and negative distance
    dldp = a_w * num_active / tau - bp * (dp < alpha) / tau
    dldn = -bn * (dn < alpha) / tau
    dldp = np.where(pmask, dldp, 0.0)
    dldn = np.where(nmask, dldn, 0.0)
    coef_p = dldp[..., None] * gp
    coef_n = dldn[..., None] * gn
    ga = coef_p.sum(axis=1) + coef_n.sum(axis=1)
    return values, ga, -coef_p, -coef_n


def word_losses_batch(anchors, positives, pos_mask, negatives, neg_mask, config: LossConfig):
    """Per-word losses for ``T`` anchors.

    Returns ``(values (T,), anchor_grads (T, D), positive_grads (T, k, D),
    negative_grads (T, m, D))``. Masked-out slots get zero gradient.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if config.variant == "triplet":
        return _triplet_batch(anchors, positives, pos_mask, negatives, neg_mask, config)
    return _contrastive_batch(anchors, positives, pos_mask, negatives, neg_mask, config)


def _single(anchor, positives, negatives, config: LossConfig) -> WordLoss:
    anchor = np.asarray(anchor, dtype=np.float64).reshape(-1)
    dim = anchor.shape[0]
    pos = np.asarray(positives, dtype=np.float64).reshape(-1, dim) if len(positives) else np.zeros((0, dim))
    neg = np.asarray(negatives, dtype=np.float64).reshape(-1, dim) if len(negatives) else np.zeros((0, dim))
    for name, arr, src in (("positive", pos, positives), ("negative", neg, negatives)):
        if len(src) and np.asarray(src).shape[-1] != dim:
            raise ValueError(f"{name} vectors do not match anchor dimension {dim}")
    values, ga, gp, gn = word_losses_batch(
        anchor[None],
        pos[None],
        np.ones((1, len(pos)), dtype=bool),
        neg[None],
        np.ones((1, len(neg)), dtype=bool),
        config,
    )
    return WordLoss(float(values[0]), ga[0], gp[0], gn[0])


def triplet_loss(anchor, positives, negatives, config: LossConfig) -> WordLoss:
    if config.variant != "triplet":
        raise ValueError("triplet_loss needs variant='triplet'")
    if len(positives) == 0 and len(negatives) == 0:
        raise ValueError("triplet loss needs at least one positive or negative")
    return _single(anchor, positives, negatives, config)


def contrastive_loss(anchor, positives, negatives, config: LossConfig) -> WordLoss:
    if config.variant != "contrastive":
        raise ValueError("contrastive_loss needs variant='contrastive'")
    if len(positives) == 0 or len(negatives) == 0:
        raise ValueError("contrastive loss needs positives and negatives")
    return _single(anchor, positives, negatives, config)


@dataclass
class MetricTerms:
    """Per-token metric losses for a flat list of anchor tokens."""

    anchors: np.ndarray
    positives: np.ndarray  # (T, k) padded with -1
    negatives: np.ndarray  # (T, k)
    values: np.ndarray
    anchor_grads: np.ndarray
    positive_grads: np.ndarray
    negative_grads: np.ndarray


def metric_terms(anchors, matrix, syn: SynonymDict, negatives, config: LossConfig) -> MetricTerms:
    """Evaluate the per-word loss for each anchor index (all must have synonyms)."""
    anchors = np.asarray(anchors, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(anchors.size, -1)
    pos = syn.table[anchors]
    pmask = pos >= 0
    values, ga, gp, gn = word_losses_batch(
        matrix[anchors],
        matrix[np.maximum(pos, 0)],
        pmask,
        matrix[negatives],
        np.ones(negatives.shape, dtype=bool),
        config,
    )
    return MetricTerms(anchors, pos, negatives, values, ga, gp, gn)


def scatter_grads(terms: MetricTerms, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate ``sum_t weights[t] * grad_t`` into compact ``(rows, grads)``."""
    w = np.asarray(weights, dtype=np.float64)
    pmask = terms.positives >= 0
    idx = np.concatenate([terms.anchors, terms.positives[pmask], terms.negatives.ravel()])
    dim = terms.anchor_grads.shape[1]
    contrib = np.concatenate(
        [
            w[:, None] * terms.anchor_grads,
            (w[:, None, None] * terms.positive_grads)[pmask],
            (w[:, None, None] * terms.negative_grads).reshape(-1, dim),
        ]
    )
    rows, inverse = np.unique(idx, return_inverse=True)
    grads = np.zeros((rows.size, dim))
    np.add.at(grads, inverse, contrib)
    return rows, grads


def sentence_metric_penalty(
    tokens,
    matrix: np.ndarray,
    syn: SynonymDict,
    neg_sampler: Callable[[np.ndarray], np.ndarray],
    config: LossConfig,
) -> LossOutput:
    """Average per-word loss over a sentence, gradients keyed by word index.

    Tokens without synonyms contribute nothing; with ``avg_mode="nonempty"``
    they are also left out of the averaging denominator. ``neg_sampler`` maps
    an array of anchor indices to a ``(T, k)`` array of negatives.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("empty token list")
    anchors = tokens[syn.sizes[tokens] > 0]
    if anchors.size == 0:
        return LossOutput(0.0, {})
    denom = anchors.size if config.avg_mode == "nonempty" else tokens.size
    terms = metric_terms(anchors, matrix, syn, neg_sampler(anchors), config)
    rows, grads = scatter_grads(terms, np.full(anchors.size, 1.0 / denom))
    value = float(terms.values.sum() / denom)
    return LossOutput(value, {int(r): g for r, g in zip(rows, grads)})

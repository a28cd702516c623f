"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way (python loops, no shared
helpers from the package) so it can catch vectorisation mistakes.
"""

from __future__ import annotations

import math

import numpy as np


def norm(x, p) -> float:
    x = [float(v) for v in np.ravel(x)]
    if p == 1:
        return sum(abs(v) for v in x)
    if p == 2:
        return math.sqrt(sum(v * v for v in x))
    return max(abs(v) for v in x)


def mean_pairwise_loop(matrix, p) -> float:
    n = len(matrix)
    total, count = 0.0, 0
    for i in range(n):
        for j in range(i + 1, n):
            total += norm(np.subtract(matrix[i], matrix[j]), p)
            count += 1
    return total / count


def synonyms_brute_force(cf_words, cf_matrix, target_words, k, delta, p=2):
    """Reference S(w): sort every other shared word by (distance, target index)."""
    cf_row = {w: i for i, w in enumerate(cf_words)}
    shared = [t for t, w in enumerate(target_words) if t != 0 and w in cf_row and w != "<unk>"]
    sets = [[] for _ in target_words]
    for t in shared:
        cands = []
        for u in shared:
            if u == t:
                continue
            d = norm(np.subtract(cf_matrix[cf_row[target_words[t]]], cf_matrix[cf_row[target_words[u]]]), p)
            if d <= delta:
                cands.append((d, u))
        cands.sort()
        sets[t] = [u for _, u in cands[:k]]
    return sets


def triplet_value(anchor, positives, negatives, alpha, p) -> float:
    pos = sum(norm(np.subtract(anchor, s), p) for s in positives) / len(positives) if len(positives) else 0.0
    neg = sum(min(norm(np.subtract(anchor, n), p), alpha) for n in negatives) / len(negatives) if len(negatives) else 0.0
    return pos - neg + alpha


def contrastive_value(anchor, positives, negatives, alpha, tau, p, cap_numerator=False) -> float:
    dp = [norm(np.subtract(anchor, s), p) for s in positives]
    dn = [norm(np.subtract(anchor, n), p) for n in negatives]
    num = sum(math.exp(-(min(d, alpha) if cap_numerator else d) / tau) for d in dp)
    den = sum(math.exp(-min(d, alpha) / tau) for d in dp + dn)
    return -math.log(num / den)


def forward_straight(E, W1, b1, W2, b2, tokens):
    """Classifier forward pass written out element by element."""
    dim = E.shape[1]
    pooled = [sum(E[t][j] for t in tokens) / len(tokens) for j in range(dim)]
    hidden = []
    for r in range(W1.shape[0]):
        z = sum(W1[r][j] * pooled[j] for j in range(dim)) + b1[r]
        hidden.append(z if z > 0 else 0.0)
    logits = [sum(W2[c][r] * hidden[r] for r in range(len(hidden))) + b2[c] for c in range(W2.shape[0])]
    top = max(logits)
    ex = [math.exp(v - top) for v in logits]
    s = sum(ex)
    return [v / s for v in ex]


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def pack(loss):
    return np.concatenate([loss.anchor_grad[None], loss.positive_grads, loss.negative_grads])


def fd_check(fn, anchor, pos, neg, config):
    """Relative error between analytic and central-difference gradients over all vectors."""
    out = fn(anchor, pos, neg, config)
    stacked = np.concatenate([anchor[None], pos, neg])
    n_pos = len(pos)

    def f(x):
        return fn(x[0], x[1 : 1 + n_pos], x[1 + n_pos :], config).value

    return rel_error(pack(out), central_diff(f, stacked))


def well_posed(anchor, others, p, alpha=None, margin=1e-3):
    """Reject configurations sitting on a kink of the norm or of the cap."""
    diffs = anchor[None] - others
    if p == 1 and np.abs(diffs).min() < margin:
        return False
    if p == math.inf:
        a = np.sort(np.abs(diffs), axis=1)
        if (a[:, -1] - a[:, -2]).min() < margin:
            return False
    d = np.array([norm(x, p) for x in diffs])
    if d.min() < margin:
        return False
    if alpha is not None and np.abs(d - alpha).min() < margin:
        return False
    return True


def random_config(r, p, dim=5, alpha=None, scale=1.0):
    while True:
        anchor = scale * r.normal(size=dim)
        pos = scale * r.normal(size=(int(r.integers(1, 5)), dim))
        neg = scale * r.normal(size=(int(r.integers(1, 9)), dim))
        a = alpha if alpha is not None else float(r.uniform(0.5, 4.0))
        if well_posed(anchor, np.concatenate([pos, neg]), p, a):
            return anchor, pos, neg, a

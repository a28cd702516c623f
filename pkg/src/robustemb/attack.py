"""Synonym-substitution attacks and robust-accuracy evaluation.

An adversarial example keeps the sentence length, only swaps words for
members of their synonym sets, changes at most ``floor(epsilon * n)``
positions, and changes the model's prediction away from the true label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .classifier import ModelParams, forward_batch
from .seeding import derive_rng
from .synonyms import SynonymDict

KINDS = ("greedy-saliency", "random")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "greedy-saliency"
    epsilon: float = 0.25
    max_queries: int = 5000
    trials: int = 20
    seed: int = 0
    sample_size: int = 1000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")
        if self.trials < 0 or self.sample_size < 1:
            raise ValueError("trials must be >= 0 and sample_size >= 1")


@dataclass
class AttackResult:
    success: bool
    adv_tokens: np.ndarray
    substitution_ratio: float
    queries: int
    flipped_from: int | None = None
    flipped_to: int | None = None


def substitution_ratio(x, x_prime) -> float:
    x = np.asarray(x)
    x_prime = np.asarray(x_prime)
    if x.shape != x_prime.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_prime.shape}")
    if x.size == 0:
        return 0.0
    return float(np.mean(x != x_prime))


def substitution_budget(n: int, epsilon: float) -> int:
    """Largest number of changed positions with ratio <= epsilon."""
    # the epsilon*n product can land a hair under an integer, e.g. 0.3*10
    return int(math.floor(epsilon * n + 1e-9))


def is_adversarial(params: ModelParams, syn: SynonymDict, x, x_prime, true_label: int, epsilon: float) -> bool:
    x = np.asarray(x, dtype=np.int64)
    x_prime = np.asarray(x_prime, dtype=np.int64)
    ratio = substitution_ratio(x, x_prime)
    if ratio > epsilon:
        return False
    for i in np.flatnonzero(x != x_prime):
        if x_prime[i] not in syn[x[i]]:
            return False
    pred = int(np.argmax(forward_batch(params, [x_prime]).logits[0]))
    return pred != true_label


class _Oracle:
    """Counts every sentence the model scores as one query."""

    def __init__(self, params: ModelParams, max_queries: int):
        self.params = params
        self.max_queries = max_queries
        self.queries = 0

    def can(self, n: int) -> bool:
        return self.queries + n <= self.max_queries

    def probs(self, sentences) -> np.ndarray:
        self.queries += len(sentences)
        return forward_batch(self.params, sentences).probs


def _result(x, adv, queries, success, y, pred) -> AttackResult:
    return AttackResult(
        success, adv, substitution_ratio(x, adv), queries,
        y if success else None, pred if success else None,
    )


def attack_greedy_saliency(params: ModelParams, syn: SynonymDict, x, true_label: int, config: AttackConfig) -> AttackResult:
    """Probability-weighted word saliency: rank positions, then substitute greedily.

    Saliency of position i is the drop in true-class probability when the
    word is replaced by ``<unk>``. Each position's best synonym is the one
    with the largest probability drop. Positions are taken in descending
    ``softmax(saliency) * drop`` order, one substitution at a time, until the
    prediction flips, the budget is spent, or positions run out.
    """
    x = np.asarray(x, dtype=np.int64)
    y = int(true_label)
    oracle = _Oracle(params, config.max_queries)
    n = x.size
    budget = substitution_budget(n, config.epsilon)
    positions = [i for i in range(n) if syn.sizes[x[i]] > 0]
    base = oracle.probs([x])[0]
    if int(np.argmax(base)) != y or budget == 0 or not positions:
        return _result(x, x.copy(), oracle.queries, False, y, None)

    probes = []
    for i in positions:
        s = x.copy()
        s[i] = 0
        probes.append(s)
    if not oracle.can(len(probes)):
        return _result(x, x.copy(), oracle.queries, False, y, None)
    saliency = base[y] - oracle.probs(probes)[:, y]

    best, drop = [], []
    for i in positions:
        cands = syn[x[i]]
        if not oracle.can(len(cands)):
            return _result(x, x.copy(), oracle.queries, False, y, None)
        trial = np.repeat(x[None], len(cands), axis=0)
        trial[:, i] = cands
        p = oracle.probs(list(trial))[:, y]
        j = int(np.argmin(p))
        best.append(int(cands[j]))
        drop.append(base[y] - p[j])
    weights = np.exp(saliency - saliency.max())
    score = weights / weights.sum() * np.array(drop)
    order = np.argsort(-score, kind="stable")

    adv = x.copy()
    changed = 0
    for o in order:
        if changed >= budget or not oracle.can(1):
            break
        adv[positions[o]] = best[o]
        changed += 1
        pred = int(np.argmax(oracle.probs([adv])[0]))
        if pred != y:
            return _result(x, adv, oracle.queries, True, y, pred)
    return _result(x, adv, oracle.queries, False, y, None)


def attack_random(params: ModelParams, syn: SynonymDict, x, true_label: int, config: AttackConfig, rng=None) -> AttackResult:
    """Up to ``trials`` random substitutions of a ``floor(epsilon * n)``-subset of positions."""
    x = np.asarray(x, dtype=np.int64)
    y = int(true_label)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    oracle = _Oracle(params, config.max_queries)
    eligible = np.array([i for i in range(x.size) if syn.sizes[x[i]] > 0], dtype=np.int64)
    m = min(substitution_budget(x.size, config.epsilon), eligible.size)
    if m == 0 or config.trials == 0:
        return _result(x, x.copy(), 0, False, y, None)
    adv = x.copy()
    for _ in range(config.trials):
        if not oracle.can(1):
            break
        adv = x.copy()
        for i in rng.choice(eligible, size=m, replace=False):
            cands = syn[x[i]]
            adv[i] = cands[rng.integers(0, len(cands))]
        pred = int(np.argmax(oracle.probs([adv])[0]))
        if pred != y:
            return _result(x, adv, oracle.queries, True, y, pred)
    return _result(x, adv, oracle.queries, False, y, None)


@dataclass
class RobustnessReport:
    summary: dict
    records: list[dict]


def evaluate_robust_accuracy(
    params: ModelParams,
    syn: SynonymDict,
    examples,
    config: AttackConfig,
    on_record: Callable[[dict], None] | None = None,
) -> RobustnessReport:
    """Clean accuracy on all ``examples``; robust accuracy on a seeded sample of them.

    An example counts as robust only if it is classified correctly and the
    attack fails. Each attack gets its own stream derived from
    ``(seed, example index)``.
    """
    if not examples:
        raise ValueError("empty evaluation split")
    labels = np.array([ex.label for ex in examples])
    preds = np.concatenate([
        np.argmax(forward_batch(params, [ex.tokens for ex in examples[lo : lo + 256]]).logits, axis=1)
        for lo in range(0, len(examples), 256)
    ])
    correct = preds == labels
    n_sample = min(config.sample_size, len(examples))
    sample = np.sort(derive_rng(config.seed, "attack-sample").choice(len(examples), n_sample, replace=False))

    records = []
    robust = 0
    for idx in sample:
        ex = examples[idx]
        tokens = ex.tokens[: params.max_len]
        rec = {"index": int(idx), "label": int(ex.label), "clean_correct": bool(correct[idx])}
        if correct[idx]:
            if config.kind == "greedy-saliency":
                res = attack_greedy_saliency(params, syn, tokens, ex.label, config)
            else:
                res = attack_random(params, syn, tokens, ex.label, config, derive_rng(config.seed, "attack", int(idx)))
            rec.update(
                attack_success=res.success,
                substitution_ratio=res.substitution_ratio,
                queries=res.queries,
            )
            if res.success:
                rec["adv_tokens"] = res.adv_tokens.tolist()
                rec["flipped_to"] = res.flipped_to
            else:
                robust += 1
        else:
            rec.update(attack_success=False, substitution_ratio=0.0, queries=0)
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    attacked = [r for r in records if r["clean_correct"]]
    wins = [r for r in attacked if r["attack_success"]]
    summary = {
        "kind": config.kind,
        "epsilon": config.epsilon,
        "num_examples": len(examples),
        "num_sampled": int(n_sample),
        "clean_accuracy": float(correct.mean()),
        "sample_clean_accuracy": float(np.mean([r["clean_correct"] for r in records])),
        "robust_accuracy": robust / n_sample,
        "attack_success_rate": len(wins) / len(attacked) if attacked else 0.0,
        "mean_ratio_on_success": float(np.mean([r["substitution_ratio"] for r in wins])) if wins else 0.0,
        "mean_queries": float(np.mean([r["queries"] for r in attacked])) if attacked else 0.0,
    }
    return RobustnessReport(summary, records)

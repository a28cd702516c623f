"""Joint cross-entropy + metric-penalty training.

Per minibatch the objective is ``mean CE + beta * mean sentence penalty``.
Only the embedding receives the penalty gradient. Embedding rows are
updated lazily: a row that no batch sentence, synonym or sampled negative
touches keeps its value (and its optimizer moments) for that step.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .classifier import (
    Gradients,
    ModelParams,
    backward_batch,
    cross_entropy_batch,
    forward_batch,
    predict_batch,
)
from .corpus import Dataset
from .embedding_store import lp_norm, mean_pairwise_distance
from .losses import LossConfig, metric_terms, scatter_grads
from .seeding import derive_rng
from .synonyms import SynonymDict, sample_negative_table

log = logging.getLogger(__name__)

MODES = ("standard", "ftml", "cml", "frozen-standard")
RESAMPLE = ("per-step", "per-epoch", "fixed")
GROUPS = ModelParams.GROUPS


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "ftml"
    beta: float = 1.0
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 20
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    negative_resample: str = "per-step"
    negative_pool: str = "full"
    alpha_mode: str = "relative"
    alpha_ratio: float = 0.7
    alpha_value: Optional[float] = None
    alpha_vocab: str = "full"
    batch_metric_mode: str = "per-sentence"
    hidden_dim: int = 64
    max_len: int = 200
    eval_anchors: int = 2000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("standard", "frozen-standard"):
            self.beta = 0.0
        variant = "contrastive" if self.mode == "cml" else "triplet"
        if self.loss.variant != variant:
            self.loss = dataclasses.replace(self.loss, variant=variant)
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.negative_resample not in RESAMPLE:
            raise ValueError(f"negative_resample must be one of {RESAMPLE}")
        if self.negative_pool not in ("full", "corpus"):
            raise ValueError("negative_pool must be 'full' or 'corpus'")
        if self.alpha_mode not in ("relative", "absolute"):
            raise ValueError("alpha_mode must be 'relative' or 'absolute'")
        if self.alpha_mode == "absolute" and self.alpha_value is None:
            raise ValueError("alpha_mode='absolute' needs alpha_value")
        if self.alpha_vocab not in ("full", "corpus"):
            raise ValueError("alpha_vocab must be 'full' or 'corpus'")
        if self.batch_metric_mode not in ("per-sentence", "pooled"):
            raise ValueError("batch_metric_mode must be 'per-sentence' or 'pooled'")

    @property
    def frozen(self) -> bool:
        return self.mode == "frozen-standard"


@dataclass
class EpochMetrics:
    epoch: int
    ce_loss: float
    tr_loss: float
    clean_accuracy: float
    mean_syn_dist: float
    mean_neg_dist: float
    capped_neg_fraction: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def resolve_alpha(config: TrainConfig, matrix: np.ndarray, rows: np.ndarray | None = None) -> float:
    """Margin for the run: ``alpha_ratio * mean pairwise distance`` or the absolute value.

    The mean distance skips the ``<unk>`` row (row 0) unless ``rows`` selects
    the rows explicitly.
    """
    if config.alpha_mode == "absolute":
        return float(config.alpha_value)
    if config.alpha_ratio == 0:
        return 0.0
    sub = matrix[1:] if rows is None else matrix[rows]
    alpha0 = mean_pairwise_distance(sub, config.loss.p, "auto", seed=config.seed)
    return float(config.alpha_ratio * alpha0)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """``grads`` maps group name to a dense array or a ``(rows, values)`` pair."""
        self.t += 1
        for name in params:
            if name not in grads:
                continue
            g = grads[name]
            if isinstance(g, tuple):
                rows, vals = g
                params[name][rows] -= self.lr * vals
            else:
                params[name] -= self.lr * g

    def state_dict(self) -> dict:
        return {"t": np.array(self.t)}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])


class Adam:
    """Adam with bias correction; sparse ``(rows, values)`` grads update only those rows."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in params:
            if name not in grads:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            g = grads[name]
            if isinstance(g, tuple):
                rows, g = g
            else:
                rows = slice(None)
            m = self.beta1 * self.m[name][rows] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[name][rows] + (1.0 - self.beta2) * (g * g)
            self.m[name][rows] = m
            self.v[name][rows] = v
            params[name][rows] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        out = {"t": np.array(self.t)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v.")}


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.lr)
    return Adam(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)


@dataclass
class BatchResult:
    ce_loss: float
    tr_loss: float
    grads: Gradients


def batch_gradients(
    params: ModelParams,
    sentences: list[np.ndarray],
    labels: np.ndarray,
    syn: SynonymDict | None,
    neg_sampler: Callable[[np.ndarray], np.ndarray] | None,
    loss: LossConfig,
    beta: float,
    frozen: bool = False,
    batch_metric_mode: str = "per-sentence",
    ce_weight: float = 1.0,
) -> BatchResult:
    """Loss and gradients of ``ce_weight * mean CE + beta * mean penalty`` on one batch.

    Embedding gradients come back compact in ``grads.emb_rows`` /
    ``grads.emb_grads``; every touched row is listed, even with a zero gradient.
    """
    b = len(sentences)
    cache = forward_batch(params, sentences)
    ce = cross_entropy_batch(cache.logits, labels)
    grads = backward_batch(params, cache, labels, np.full(b, ce_weight / b), frozen_embedding=frozen)
    tr_loss = 0.0
    if beta > 0 and not frozen:
        tokens, seg = cache.tokens, cache.segments
        has_syn = syn.sizes[tokens] > 0
        anchors, aseg = tokens[has_syn], seg[has_syn]
        if anchors.size:
            terms = metric_terms(anchors, params.embedding, syn, neg_sampler(anchors), loss)
            if loss.avg_mode == "nonempty":
                denom = np.bincount(aseg, minlength=b).astype(np.float64)
            else:
                denom = cache.lengths.astype(np.float64)
            if batch_metric_mode == "per-sentence":
                per_sentence = np.bincount(aseg, weights=terms.values, minlength=b) / np.maximum(denom, 1)
                tr_loss = float(per_sentence.mean())
                weights = beta / (b * denom[aseg])
            else:
                total = float(denom.sum())
                tr_loss = float(terms.values.sum() / total)
                weights = np.full(anchors.size, beta / total)
            rows, g = scatter_grads(terms, weights)
            all_rows = np.concatenate([grads.emb_rows, rows])
            merged_rows, inverse = np.unique(all_rows, return_inverse=True)
            merged = np.zeros((merged_rows.size, g.shape[1]))
            np.add.at(merged, inverse, np.concatenate([grads.emb_grads, g]))
            grads.emb_rows, grads.emb_grads = merged_rows, merged
    return BatchResult(float(ce.mean()), tr_loss, grads)


def _grad_dict(grads: Gradients) -> dict:
    out = {"W1": grads.W1, "b1": grads.b1, "W2": grads.W2, "b2": grads.b2}
    if grads.emb_rows is not None:
        out["embedding"] = (grads.emb_rows, grads.emb_grads)
    return out


def optimizer_step(optimizer, params: ModelParams, grads: Gradients) -> None:
    """Apply one update in place, groups in order embedding, W1, b1, W2, b2."""
    gd = _grad_dict(grads)
    pd = {name: getattr(params, name) for name in GROUPS if name in gd}
    optimizer.step(pd, gd)


@dataclass
class TrainState:
    """Everything needed to resume: optimizer moments, the fixed margin, epochs done."""

    optimizer: object
    alpha: float
    epochs_done: int = 0
    negative_table: np.ndarray | None = None


@dataclass
class TrainResult:
    params: ModelParams
    metrics: list[EpochMetrics]
    state: TrainState


def save_train_state(path, params: ModelParams, state: TrainState) -> None:
    arrays = {f"param.{g}": getattr(params, g) for g in GROUPS}
    arrays.update({f"opt.{k}": v for k, v in state.optimizer.state_dict().items()})
    arrays["alpha"] = np.array(state.alpha)
    arrays["epochs_done"] = np.array(state.epochs_done)
    arrays["max_len"] = np.array(params.max_len)
    arrays["optimizer_kind"] = np.array(type(state.optimizer).__name__)
    if state.negative_table is not None:
        arrays["negative_table"] = state.negative_table
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_train_state(path, config: TrainConfig) -> tuple[ModelParams, TrainState]:
    with np.load(path, allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    params = ModelParams(max_len=int(data["max_len"]), **{g: data[f"param.{g}"] for g in GROUPS})
    opt = make_optimizer(config)
    if type(opt).__name__ != str(data["optimizer_kind"]):
        raise ValueError("saved optimizer does not match config.optimizer")
    opt.load_state_dict({k[4:]: v for k, v in data.items() if k.startswith("opt.")})
    table = data.get("negative_table")
    return params, TrainState(opt, float(data["alpha"]), int(data["epochs_done"]), table)


def _negative_pool(config: TrainConfig, sentences) -> np.ndarray | None:
    if config.negative_pool == "full":
        return None
    return np.unique(np.concatenate(sentences))


def _full_table(syn: SynonymDict, rng, pool) -> np.ndarray:
    """One negative set per word that has synonyms; other rows stay -1."""
    table = np.full((len(syn), syn.k), -1, dtype=np.int64)
    words = np.flatnonzero(syn.sizes > 0)
    table[words] = sample_negative_table(syn, words, rng, pool)
    return table


class _Evaluator:
    """Fixed probes so per-epoch distance statistics are comparable across epochs.

    Synonym distance covers every (word, synonym) pair in the dictionary.
    Negative statistics use a fixed sample of training-token anchors (the
    population the penalty actually draws negatives for), each with ``k``
    negatives drawn once.
    """

    def __init__(self, syn: SynonymDict, config: TrainConfig, sentences, pool):
        self.p = config.loss.p
        self.syn_a, self.syn_b = syn.pairs()
        flat = np.concatenate(sentences)
        occ = flat[syn.sizes[flat] > 0]
        rng = derive_rng(config.seed, "eval-anchors")
        if occ.size > config.eval_anchors:
            occ = occ[np.sort(rng.choice(occ.size, config.eval_anchors, replace=False))]
        self.neg_anchor = np.repeat(occ, syn.k)
        negs = sample_negative_table(syn, occ, derive_rng(config.seed, "eval-negatives"), pool)
        self.neg_other = negs.ravel()

    def distances(self, matrix: np.ndarray, alpha: float) -> tuple[float, float, float]:
        if self.syn_a.size:
            syn_d = float(lp_norm(matrix[self.syn_a] - matrix[self.syn_b], self.p).mean())
        else:
            syn_d = 0.0
        if self.neg_anchor.size:
            nd = lp_norm(matrix[self.neg_anchor] - matrix[self.neg_other], self.p)
            return syn_d, float(nd.mean()), float((nd >= alpha).mean())
        return syn_d, 0.0, 0.0


def _accuracy(params: ModelParams, examples) -> float:
    if not examples:
        return 0.0
    correct = 0
    for lo in range(0, len(examples), 256):
        chunk = examples[lo : lo + 256]
        pred = predict_batch(params, [ex.tokens for ex in chunk])
        correct += int((pred == np.array([ex.label for ex in chunk])).sum())
    return correct / len(examples)


def train(
    dataset: Dataset,
    params: ModelParams,
    syn: SynonymDict,
    config: TrainConfig,
    *,
    split: str = "train",
    eval_split: str = "dev",
    state: TrainState | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Train ``params`` (a copy; the input is left untouched) for ``config.epochs`` epochs.

    With a ``state`` from an earlier run, training resumes after
    ``state.epochs_done`` and stops at ``config.epochs``. A fresh run first
    records epoch-0 metrics at the initial parameters. Randomness per epoch
    derives from ``(seed, component, epoch)`` so resumed runs match
    uninterrupted ones bit for bit.
    """
    params = params.copy()
    if len(syn) != params.vocab_size:
        raise ValueError(
            f"synonym dictionary covers {len(syn)} words, model vocabulary has {params.vocab_size}"
        )
    examples = dataset.split(split) if split in dataset.splits else dataset.examples
    if not examples:
        raise ValueError("empty training split")
    eval_examples = dataset.split(eval_split) if eval_split in dataset.splits else examples
    sentences = [ex.tokens[: params.max_len] for ex in examples]
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    for ex in examples:
        if ex.tokens.max(initial=0) >= params.vocab_size:
            raise ValueError("corpus token index outside the model vocabulary")
    if labels.max() >= params.num_classes:
        raise ValueError("corpus label outside the model's classes")

    pool = _negative_pool(config, sentences)
    metrics: list[EpochMetrics] = []
    if state is None:
        rows = np.unique(np.concatenate(sentences)) if config.alpha_vocab == "corpus" else None
        alpha = resolve_alpha(config, params.embedding, rows)
        state = TrainState(make_optimizer(config), alpha)
    loss = dataclasses.replace(config.loss, alpha=state.alpha)
    use_metric = config.beta > 0
    evaluator = _Evaluator(syn, config, sentences, pool)
    log.info("training mode=%s alpha=%.6g beta=%g", config.mode, state.alpha, config.beta)

    def record(epoch, ce, tr):
        sd, nd, cf = evaluator.distances(params.embedding, state.alpha)
        m = EpochMetrics(epoch, ce, tr, _accuracy(params, eval_examples), sd, nd, cf)
        metrics.append(m)
        if on_epoch is not None:
            on_epoch(m)

    def table_sampler(table):
        return lambda anchors: table[anchors]

    if state.epochs_done == 0:
        ce0, tr0, n0 = 0.0, 0.0, 0
        init_rng = derive_rng(config.seed, "negatives-init")
        for lo in range(0, len(sentences), config.batch_size):
            batch = sentences[lo : lo + config.batch_size]
            res = batch_gradients(
                params, batch, labels[lo : lo + config.batch_size], syn,
                lambda a: sample_negative_table(syn, a, init_rng, pool),
                loss, 1.0 if use_metric else 0.0, frozen=True if not use_metric else False,
                batch_metric_mode=config.batch_metric_mode,
            )
            ce0 += res.ce_loss * len(batch)
            tr0 += res.tr_loss * len(batch)
            n0 += len(batch)
        record(0, ce0 / n0, tr0 / n0)
        if use_metric and config.negative_resample == "fixed":
            state.negative_table = _full_table(syn, derive_rng(config.seed, "negatives", 0), pool)

    for epoch in range(state.epochs_done + 1, config.epochs + 1):
        order = derive_rng(config.seed, "shuffle", epoch).permutation(len(sentences))
        neg_rng = derive_rng(config.seed, "negatives", epoch)
        sampler = None
        if use_metric:
            if config.negative_resample == "per-step":
                sampler = lambda a: sample_negative_table(syn, a, neg_rng, pool)  # noqa: E731
            elif config.negative_resample == "per-epoch":
                sampler = table_sampler(_full_table(syn, neg_rng, pool))
            else:
                sampler = table_sampler(state.negative_table)
        ce_sum = tr_sum = 0.0
        for bi, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            batch = [sentences[i] for i in idx]
            res = batch_gradients(
                params, batch, labels[idx], syn, sampler, loss, config.beta,
                frozen=config.frozen, batch_metric_mode=config.batch_metric_mode,
            )
            if not (np.isfinite(res.ce_loss) and np.isfinite(res.tr_loss)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {bi}: ce={res.ce_loss} tr={res.tr_loss}"
                )
            optimizer_step(state.optimizer, params, res.grads)
            if not params.is_finite():
                raise TrainingDivergedError(f"non-finite parameters after epoch {epoch} batch {bi}")
            ce_sum += res.ce_loss * len(idx)
            tr_sum += res.tr_loss * len(idx)
        state.epochs_done = epoch
        record(epoch, ce_sum / len(order), tr_sum / len(order))
    return TrainResult(params, metrics, state)

"""Acceptance suite: ten end-to-end criteria on the synthetic benchmark.

Every criterion prints one ``PASS``/``FAIL`` line (also collected in the
terminal summary). Training runs are shared between criteria through a
module-level cache; each criterion's reported runtime includes the training
time of every model it uses.
"""

import json
import math
import time

import numpy as np
import pytest

from robustemb.attack import AttackConfig, evaluate_robust_accuracy, is_adversarial
from robustemb.classifier import backward, cross_entropy, forward, init_params
from robustemb.cli import main as cli_main
from robustemb.corpus import GeneratorSpec
from robustemb.embedding_store import Vocabulary
from robustemb.experiments import benchmark_train_config, synthetic_workspace, train_model
from robustemb.losses import LossConfig, contrastive_loss, triplet_loss
from robustemb.synonyms import SynonymConfig, build_synonym_dict

import oracles
from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

EPOCHS = 20
ATTACK = AttackConfig(kind="greedy-saliency", epsilon=0.25, sample_size=200, seed=0)


def report(number, ok, detail, seconds, limit):
    in_time = seconds < limit
    line = f"{'PASS' if ok and in_time else 'FAIL'} criterion {number}: {detail} [{seconds:.1f}s, limit {limit:.0f}s]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert in_time, line


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    t0 = time.perf_counter()
    ws = synthetic_workspace(tmp_path_factory.mktemp("bench"), GeneratorSpec())
    return ws, time.perf_counter() - t0


class Models:
    """Lazily trained, cached models with their training time and attack reports."""

    def __init__(self, ws):
        self.ws = ws
        self.cache = {}

    def get(self, name):
        if name not in self.cache:
            t0 = time.perf_counter()
            if name == "standard":
                result = train_model(self.ws, benchmark_train_config("standard", epochs=EPOCHS))
            elif name == "ftml":
                result = train_model(self.ws, benchmark_train_config("ftml", epochs=EPOCHS))
            elif name == "cml":
                result = train_model(self.ws, benchmark_train_config("cml", epochs=EPOCHS))
            elif name == "ftml-pinf":
                cfg = benchmark_train_config("ftml", epochs=EPOCHS, loss=LossConfig(p=math.inf))
                result = train_model(self.ws, cfg)
            elif name == "frozen-ftml":
                emb = self.get("ftml")[0].params.embedding
                result = train_model(self.ws, benchmark_train_config("frozen-standard", epochs=EPOCHS), emb)
            elif name == "frozen-random":
                result = train_model(self.ws, benchmark_train_config("frozen-standard", epochs=EPOCHS))
            else:
                raise KeyError(name)
            report_ = evaluate_robust_accuracy(result.params, self.ws.syn, self.ws.dataset.split("test"), ATTACK)
            self.cache[name] = (result, report_, time.perf_counter() - t0)
        return self.cache[name]

    def seconds(self, *names):
        return sum(self.cache[n][2] for n in names)


@pytest.fixture(scope="module")
def models(bench):
    return Models(bench[0])


def robust(models, name):
    return models.get(name)[1].summary["robust_accuracy"]


def clean(models, name):
    return models.get(name)[1].summary["clean_accuracy"]


def test_criterion_01_gradient_oracles():
    t0 = time.perf_counter()
    worst = {}
    r = np.random.default_rng(1)
    for p in (1, 2, math.inf):
        key = f"triplet p={p}"
        worst[key] = 0.0
        for _ in range(100):
            a, pos, neg, alpha = oracles.random_config(r, p)
            err = oracles.fd_check(triplet_loss, a, pos, neg, LossConfig(p=p, alpha=alpha))
            worst[key] = max(worst[key], err)
    worst["contrastive"] = 0.0
    for i in range(100):
        p = (1, 2, math.inf)[i % 3]
        a, pos, neg, alpha = oracles.random_config(r, p, alpha=5.98, scale=3.0)
        cfg = LossConfig(p=p, alpha=alpha, variant="contrastive", tau=20.0, cap_numerator=bool(i % 2))
        worst["contrastive"] = max(worst["contrastive"], oracles.fd_check(contrastive_loss, a, pos, neg, cfg))
    worst["classifier"] = 0.0
    for seed in range(100):
        rs = np.random.default_rng(1000 + seed)
        params = init_params(rs.normal(size=(7, 4)), 2, rs, hidden_dim=3)
        params.b1 = rs.normal(size=3)
        params.b2 = rs.normal(size=2)
        while True:
            tokens = rs.integers(0, 7, size=5)
            _, cache = forward(params, tokens)
            if np.abs(cache.h_pre).min() >= 1e-4:
                break
        label = int(rs.integers(0, 2))
        g = backward(params, cache, label)
        dense = np.zeros_like(params.embedding)
        dense[g.emb_rows] = g.emb_grads
        analytic = {"W1": g.W1, "b1": g.b1, "W2": g.W2, "b2": g.b2, "embedding": dense}
        for name, grad in analytic.items():
            def f(x, name=name):
                q = params.copy()
                setattr(q, name, x)
                return cross_entropy(forward(q, tokens)[1].logits, label)
            num = oracles.central_diff(f, getattr(params, name))
            worst["classifier"] = max(worst["classifier"], oracles.rel_error(grad, num))
    ok = all(v <= 1e-4 for v in worst.values())
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    report(1, ok, detail, time.perf_counter() - t0, 60)


def test_criterion_02_closed_forms():
    t0 = time.perf_counter()
    perfect = triplet_loss(np.zeros(2), np.zeros((3, 2)), np.array([[2.0, 0.0], [0.0, 1.5]]), LossConfig(alpha=1.0)).value
    alpha = 2.0
    neg = np.array([[0.5, 0.0], [0.0, 1.0], [5.0, 0.0]])
    m = (0.5 + 1.0 + alpha) / 3
    mix = triplet_loss(np.zeros(2), np.zeros((2, 2)), neg, LossConfig(alpha=alpha)).value
    log2 = contrastive_loss(np.zeros(3), np.zeros((8, 3)), np.zeros((8, 3)),
                            LossConfig(variant="contrastive", tau=1.0, alpha=1.0)).value
    errs = [abs(perfect), abs(mix - (alpha - m)), abs(log2 - math.log(2))]
    ok = max(errs) <= 1e-12
    report(2, ok, f"errors perfect={errs[0]:.1e} capped-mix={errs[1]:.1e} log2={errs[2]:.1e}",
           time.perf_counter() - t0, 10)


def test_criterion_03_synonym_oracle():
    t0 = time.perf_counter()
    r = np.random.default_rng(3)
    mismatches = nonempty = 0
    grid = [(k, d) for k in (1, 4, 8) for d in (0.1, 0.5, 1.0)]
    for i in range(20):
        n = int(r.integers(50, 1001))
        k, delta = grid[i % len(grid)]
        vocab = Vocabulary.from_tokens([f"v{j}" for j in range(n)])
        # spread scales with n^(1/dim) so every delta yields nonempty sets
        cf = r.uniform(0, 0.6 * n ** (1 / 3), size=(n + 1, 3))
        syn = build_synonym_dict(vocab, cf, vocab, SynonymConfig(k=k, delta=delta))
        ref = oracles.synonyms_brute_force(vocab.words, cf, vocab.words, k, delta)
        mismatches += sum(a.tolist() != b for a, b in zip(syn.sets, ref))
        nonempty += sum(bool(b) for b in ref)
    report(3, mismatches == 0, f"20 vocabularies, {nonempty} nonempty sets, {mismatches} mismatching",
           time.perf_counter() - t0, 120)


def test_criterion_04_geometry(models):
    result = models.get("ftml")[0]
    first, last = result.metrics[0], result.metrics[-1]
    ok = last.mean_syn_dist <= 0.5 * first.mean_syn_dist and last.capped_neg_fraction >= first.capped_neg_fraction
    detail = (f"synonym distance {first.mean_syn_dist:.4f} -> {last.mean_syn_dist:.4f}, "
              f"capped fraction {first.capped_neg_fraction:.4f} -> {last.capped_neg_fraction:.4f}")
    report(4, ok, detail, models.seconds("ftml"), 300)


def test_criterion_05_robustness_gap(models):
    gap = robust(models, "ftml") - robust(models, "standard")
    clean_gap = abs(clean(models, "ftml") - clean(models, "standard"))
    ok = gap >= 0.15 and clean_gap <= 0.05
    detail = (f"robust standard={robust(models, 'standard'):.3f} ftml={robust(models, 'ftml'):.3f}, "
              f"clean standard={clean(models, 'standard'):.3f} ftml={clean(models, 'ftml'):.3f}")
    report(5, ok, detail, models.seconds("ftml", "standard"), 600)


def test_criterion_06_frozen_transfer(models):
    ftml_emb = models.get("ftml")[0].params.embedding
    frozen_ftml = models.get("frozen-ftml")[0]
    frozen_rand = models.get("frozen-random")[0]
    identical = (frozen_ftml.params.embedding.tobytes() == ftml_emb.tobytes()
                 and frozen_rand.params.embedding.tobytes() == models.ws.embedding.tobytes())
    gap = robust(models, "frozen-ftml") - robust(models, "frozen-random")
    ok = identical and gap >= 0.10
    detail = (f"robust frozen-ftml={robust(models, 'frozen-ftml'):.3f} "
              f"frozen-random={robust(models, 'frozen-random'):.3f}, embeddings bit-identical={identical}")
    report(6, ok, detail, models.seconds("ftml", "frozen-ftml", "frozen-random"), 600)


def test_criterion_07_cml(models):
    gap = robust(models, "cml") - robust(models, "standard")
    detail = f"robust standard={robust(models, 'standard'):.3f} cml={robust(models, 'cml'):.3f}"
    report(7, gap >= 0.10, detail, models.seconds("cml", "standard"), 600)


def test_criterion_08_attack_consistency(models):
    ws = models.ws
    examples = ws.dataset.split("test")
    t0 = time.perf_counter()
    greedy_params = models.get("standard")[0].params
    replayed = failed = 0
    for name in ("standard", "ftml", "cml"):
        params = models.get(name)[0].params
        for rec in models.get(name)[1].records:
            if rec["attack_success"]:
                ex = examples[rec["index"]]
                replayed += 1
                failed += not is_adversarial(params, ws.syn, ex.tokens, rec["adv_tokens"], ex.label, ATTACK.epsilon)
    greedy = models.get("standard")[1]
    rand = evaluate_robust_accuracy(greedy_params, ws.syn, examples,
                                    AttackConfig(kind="random", epsilon=0.25, sample_size=200, seed=0))
    for rec in rand.records:
        if rec["attack_success"]:
            ex = examples[rec["index"]]
            replayed += 1
            failed += not is_adversarial(greedy_params, ws.syn, ex.tokens, rec["adv_tokens"], ex.label, 0.25)
    paired = [g["index"] for g in greedy.records] == [q["index"] for q in rand.records]
    g_rate = greedy.summary["attack_success_rate"]
    r_rate = rand.summary["attack_success_rate"]
    ok = failed == 0 and replayed > 0 and paired and g_rate >= r_rate
    detail = (f"{replayed - failed}/{replayed} successes replay, success rate on standard model "
              f"greedy={g_rate:.3f} random={r_rate:.3f}, paired={paired}")
    report(8, ok, detail, time.perf_counter() - t0 + models.seconds("standard", "ftml", "cml"), 300)


def _pipeline(root):
    data, out = root / "data", root / "out"
    root.mkdir(parents=True)
    cfg = root / "exp.cfg"
    cfg.write_text("\n".join([
        f"paths.embeddings = {data / 'embeddings.txt'}",
        f"paths.counterfitted = {data / 'counterfitted.txt'}",
        f"paths.data_dir = {data}",
        f"paths.out_dir = {out}",
        "seed = 0",
        "train.lr = 0.01",
        f"train.epochs = {EPOCHS}",
        "attack.epsilon = 0.25",
        "attack.sample_size = 200",
    ]) + "\n")
    codes = [
        cli_main(["gen", "--out", str(data)]),
        cli_main(["build-syn", "--config", str(cfg)]),
        cli_main(["train", "--config", str(cfg), "--mode", "ftml"]),
        cli_main(["attack", "--config", str(cfg), "--checkpoint", str(out / "model.ckpt")]),
    ]
    files = {
        "synonyms.tsv": out / "synonyms.tsv",
        "metrics.jsonl": out / "metrics.jsonl",
        "attack_summary.json": out / "attack" / "attack_summary.json",
        "attack_examples.jsonl": out / "attack" / "attack_examples.jsonl",
    }
    return codes, {k: p.read_bytes() for k, p in files.items()}


def test_criterion_09_determinism(tmp_path):
    t0 = time.perf_counter()
    codes_a, a = _pipeline(tmp_path / "run_a")
    codes_b, b = _pipeline(tmp_path / "run_b")
    same = [k for k in a if a[k] == b[k]]
    ok = codes_a == codes_b == [0, 0, 0, 0] and len(same) == len(a)
    summary = json.loads(a["attack_summary.json"])
    detail = (f"exit codes {codes_a}/{codes_b}, {len(same)}/{len(a)} artifacts byte-identical, "
              f"robust accuracy {summary['robust_accuracy']:.3f}")
    report(9, ok, detail, time.perf_counter() - t0, 900)


def test_criterion_10_p_norm(models):
    r2, rinf = robust(models, "ftml"), robust(models, "ftml-pinf")
    report(10, r2 >= rinf, f"robust p=2 {r2:.3f} p=inf {rinf:.3f}", models.seconds("ftml", "ftml-pinf"), 900)

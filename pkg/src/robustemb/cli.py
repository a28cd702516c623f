"""Train synonym-robust word embeddings and attack the resulting classifiers.

Subcommands: gen, build-syn, train, attack, sweep, distances.
Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import evaluate_robust_accuracy
from .classifier import CheckpointError, init_params, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .corpus import (
    SYNTHETIC_FILES,
    DatasetError,
    GeneratorSpec,
    InfeasibleSpecError,
    file_digest,
    generate_synthetic,
    load_dataset_dir,
    write_synthetic,
)
from .embedding_store import (
    EmbeddingParseError,
    EmbeddingSnapshot,
    SnapshotError,
    digest_embedding,
    load_snapshot,
    lp_norm,
    mean_pairwise_distance,
    read_embedding_file,
    save_snapshot,
)
from .kvconfig import ConfigError, build_dataclass, dump_dataclass, known_keys, parse_kv, read_kv
from .seeding import derive_rng, derive_seed
from .synonyms import SynonymDictError, build_synonym_dict, load_dict, sample_negative_table, save_dict
from .trainer import TrainingDivergedError, resolve_alpha, train

log = logging.getLogger("robustemb")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# bad inputs are reported like config errors: nothing has been written yet
INPUT_ERRORS = (ConfigError, EmbeddingParseError, DatasetError, SynonymDictError,
                SnapshotError, CheckpointError, InfeasibleSpecError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def _resolved_text(command: str, lines: list[str], inputs: dict[str, Path]) -> str:
    out = [f"command = {command}", *lines]
    for name, path in inputs.items():
        out.append(f"digest.{name} = {file_digest(path)}")
    return "\n".join(out) + "\n"


def _overrides(args) -> dict[str, str]:
    values = {}
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "out", None):
        values["paths.out_dir"] = args.out
    return values


def _load(args, extra: dict[str, str] | None = None) -> ExperimentConfig:
    values = _overrides(args)
    values.update(extra or {})
    return load_config(args.config, values)


def _input_paths(cfg: ExperimentConfig, *, dataset=True, synonyms=True) -> dict[str, Path]:
    paths = {"embeddings": Path(cfg.paths.embeddings), "counterfitted": Path(cfg.paths.counterfitted)}
    if dataset:
        paths["train_tsv"] = Path(cfg.paths.data_dir) / "train.tsv"
        paths["test_tsv"] = Path(cfg.paths.data_dir) / "test.tsv"
    if synonyms:
        paths["synonyms"] = cfg.paths.synonyms_path()
    for name, p in paths.items():
        if not p.exists():
            raise ConfigError(f"missing input {name}: {p}")
    return paths


class _Inputs:
    """Everything loaded and cross-checked before any output is written."""

    def __init__(self, cfg: ExperimentConfig, *, dataset=True):
        self.cfg = cfg
        cfg.require("embeddings", "counterfitted")
        if dataset:
            cfg.require("data_dir")
        self.paths = _input_paths(cfg, dataset=dataset)
        self.vocab, self.embedding = read_embedding_file(cfg.paths.embeddings)
        cf_vocab, cf_matrix = read_embedding_file(cfg.paths.counterfitted)
        self.syn = load_dict(self.paths["synonyms"], digest_embedding(cf_vocab, cf_matrix))
        if self.syn.words != self.vocab.words:
            raise ConfigError("synonym dictionary was built for a different vocabulary")
        self.dataset = (
            load_dataset_dir(cfg.paths.data_dir, self.vocab, cfg.data.dev_fraction, cfg.seed)
            if dataset else None
        )

    def load_params(self, checkpoint: str):
        params, digest, meta = load_checkpoint(checkpoint)
        if digest != self.vocab.digest() or params.vocab_size != len(self.vocab):
            raise ConfigError("checkpoint was trained on a different vocabulary")
        self.paths["checkpoint"] = Path(checkpoint)
        return params, meta


def cmd_gen(args) -> int:
    values = read_kv(args.spec) if args.spec else {}
    for item in args.set or []:
        values.update(parse_kv(item))
    unknown = set(values) - known_keys(GeneratorSpec)
    if unknown:
        raise ConfigError(f"unknown generator keys: {', '.join(sorted(unknown))}")
    spec = build_dataclass(GeneratorSpec, values)
    spec.validate()
    bench = generate_synthetic(spec, args.seed)
    out = Path(args.out)
    manifest = write_synthetic(bench, out)
    _write_text(out / "config.resolved", "\n".join(
        ["command = gen", f"seed = {args.seed}", *dump_dataclass(spec)]) + "\n")
    for name in SYNTHETIC_FILES:
        print(f"{manifest[name]}  {name}")
    return EXIT_OK


def cmd_build_syn(args) -> int:
    cfg = _load(args)
    cfg.require("embeddings", "counterfitted")
    vocab, _ = read_embedding_file(cfg.paths.embeddings)
    cf_vocab, cf_matrix = read_embedding_file(cfg.paths.counterfitted)
    syn = build_synonym_dict(cf_vocab, cf_matrix, vocab, cfg.synonym)
    target = cfg.paths.synonyms_path()
    target.parent.mkdir(parents=True, exist_ok=True)
    save_dict(syn, target)
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.resolved", _resolved_text(
        "build-syn", cfg.lines(),
        {"embeddings": Path(cfg.paths.embeddings), "counterfitted": Path(cfg.paths.counterfitted),
         "synonyms": target}))
    nonempty = syn.sizes[syn.sizes > 0]
    print(f"words: {len(syn)}")
    print(f"words with synonyms: {nonempty.size}")
    print(f"mean set size (nonempty): {nonempty.mean() if nonempty.size else 0.0:.4f}")
    print(f"dictionary: {target}")
    return EXIT_OK


def _train_overrides(args) -> dict[str, str]:
    values = {}
    if args.mode:
        values["train.mode"] = args.mode
    if args.alpha_ratio is not None:
        values["train.alpha_mode"] = "relative"
        values["train.alpha_ratio"] = repr(args.alpha_ratio)
    if args.beta is not None:
        values["train.beta"] = repr(args.beta)
    if args.epochs is not None:
        values["train.epochs"] = str(args.epochs)
    if args.init_embedding:
        values["paths.init_embedding"] = args.init_embedding
    return values


def _initial_embedding(cfg: ExperimentConfig, inputs: _Inputs) -> np.ndarray:
    if not cfg.paths.init_embedding:
        return inputs.embedding
    cfg.require("init_embedding")
    snap = load_snapshot(cfg.paths.init_embedding)
    if snap.vocabulary != inputs.vocab:
        raise ConfigError("init_embedding snapshot has a different vocabulary")
    inputs.paths["init_embedding"] = Path(cfg.paths.init_embedding)
    return snap.matrix


def cmd_train(args) -> int:
    cfg = _load(args, _train_overrides(args))
    inputs = _Inputs(cfg)
    emb = _initial_embedding(cfg, inputs)
    params = init_params(emb, inputs.dataset.num_classes, derive_rng(cfg.seed, "init"),
                         hidden_dim=cfg.train.hidden_dim, max_len=cfg.train.max_len)

    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = _resolved_text("train", cfg.lines(), inputs.paths)
    config_digest = hashlib.sha256(resolved.encode("utf-8")).hexdigest()
    _write_text(out / "config.resolved", resolved)
    with open(out / "metrics.jsonl", "w", encoding="utf-8", newline="\n") as f:
        def emit(m):
            f.write(_json_line(m.as_dict()))
            f.flush()
            log.info("epoch %d ce=%.4f tr=%.4f acc=%.3f syn=%.4f capped=%.4f", m.epoch, m.ce_loss,
                     m.tr_loss, m.clean_accuracy, m.mean_syn_dist, m.capped_neg_fraction)

        result = train(inputs.dataset, params, inputs.syn, cfg.train, on_epoch=emit)
    meta = {"mode": cfg.train.mode, "alpha": result.state.alpha, "epochs": result.state.epochs_done,
            "config_digest": config_digest}
    save_checkpoint(result.params, out / "model.ckpt", inputs.vocab.digest(), meta)
    save_snapshot(
        EmbeddingSnapshot(inputs.vocab, result.params.embedding, {
            "source": file_digest(cfg.paths.embeddings),
            "config_digest": config_digest,
            "epoch": result.state.epochs_done,
        }),
        out / "embedding.snap",
    )
    final = result.metrics[-1]
    print(f"mode={cfg.train.mode} alpha={result.state.alpha:.6g} epochs={final.epoch} "
          f"dev_accuracy={final.clean_accuracy:.4f} syn_dist={final.mean_syn_dist:.4f}")
    return EXIT_OK


def _attack_overrides(args) -> dict[str, str]:
    values = {}
    if args.kind:
        values["attack.kind"] = args.kind
    if args.epsilon is not None:
        values["attack.epsilon"] = repr(args.epsilon)
    if args.sample_size is not None:
        values["attack.sample_size"] = str(args.sample_size)
    return values


def cmd_attack(args) -> int:
    cfg = _load(args, _attack_overrides(args))
    inputs = _Inputs(cfg)
    params, _ = inputs.load_params(args.checkpoint)
    out = Path(args.report_dir) if args.report_dir else Path(cfg.paths.out_dir) / "attack"
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.resolved", _resolved_text("attack", cfg.lines(), inputs.paths))
    with open(out / "attack_examples.jsonl", "w", encoding="utf-8", newline="\n") as f:
        report = evaluate_robust_accuracy(
            params, inputs.syn, inputs.dataset.split("test"), cfg.attack,
            on_record=lambda r: f.write(_json_line(r)),
        )
    _write_text(out / "attack_summary.json", json.dumps(report.summary, sort_keys=True, indent=2) + "\n")
    s = report.summary
    print(f"kind={s['kind']} epsilon={s['epsilon']} clean_accuracy={s['clean_accuracy']:.4f} "
          f"robust_accuracy={s['robust_accuracy']:.4f} sampled={s['num_sampled']}")
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = _load(args)
    alphas = _float_list(args.alpha_ratios)
    betas = _float_list(args.betas)
    if not alphas or not betas:
        raise UsageError("sweep grid is empty")
    # validate every grid point's config up front
    cells = []
    for i, (a, b) in enumerate(itertools.product(alphas, betas)):
        seed = derive_seed(cfg.seed, "sweep", i)
        try:
            tc = dataclasses.replace(cfg.train, mode=args.mode, alpha_mode="relative", alpha_ratio=a,
                                     beta=b, seed=seed)
        except ValueError as exc:
            raise ConfigError(f"sweep point alpha_ratio={a} beta={b}: {exc}") from None
        cells.append((a, b, tc, dataclasses.replace(cfg.attack, seed=seed)))
    inputs = _Inputs(cfg)
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.resolved", _resolved_text(
        "sweep", cfg.lines() + [f"sweep.alpha_ratios = {args.alpha_ratios}",
                                f"sweep.betas = {args.betas}", f"sweep.mode = {args.mode}"],
        inputs.paths))
    with open(out / "sweep.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.write("alpha_ratio\tbeta\tclean_accuracy\trobust_accuracy\tstatus\n")
        for a, b, tc, ac in cells:
            try:
                params = init_params(inputs.embedding, inputs.dataset.num_classes,
                                     derive_rng(tc.seed, "init"), hidden_dim=tc.hidden_dim, max_len=tc.max_len)
                result = train(inputs.dataset, params, inputs.syn, tc)
                s = evaluate_robust_accuracy(result.params, inputs.syn, inputs.dataset.split("test"), ac).summary
                row = f"{a!r}\t{b!r}\t{s['clean_accuracy']!r}\t{s['robust_accuracy']!r}\tok"
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
                log.error("sweep cell alpha_ratio=%r beta=%r failed: %s", a, b, exc)
                row = f"{a!r}\t{b!r}\tnan\tnan\tfailed"
            f.write(row + "\n")
            f.flush()
            print(row)
    return EXIT_OK


def cmd_distances(args) -> int:
    cfg = _load(args)
    inputs = _Inputs(cfg, dataset=False)
    if args.checkpoint:
        params, _ = inputs.load_params(args.checkpoint)
        matrix = params.embedding
    elif args.snapshot:
        snap = load_snapshot(args.snapshot)
        if snap.vocabulary != inputs.vocab:
            raise ConfigError("snapshot has a different vocabulary")
        inputs.paths["snapshot"] = Path(args.snapshot)
        matrix = snap.matrix
    else:
        matrix = inputs.embedding
    syn = inputs.syn
    p = cfg.train.loss.p
    alpha = resolve_alpha(cfg.train, inputs.embedding)

    a, b = syn.pairs()
    syn_d = lp_norm(matrix[a] - matrix[b], p) if a.size else np.zeros(0)
    words = np.flatnonzero(syn.sizes > 0)
    negs = sample_negative_table(syn, words, derive_rng(cfg.seed, "distances-negatives"))
    neg_d = lp_norm(matrix[np.repeat(words, syn.k)] - matrix[negs.ravel()], p)
    random_pair = mean_pairwise_distance(matrix[1:], p, min(200_000, (len(matrix) - 1) * (len(matrix) - 2) // 2),
                                         seed=derive_seed(cfg.seed, "distances-pairs"))
    neighbours = {}
    for w in words[: args.top_words]:
        d = lp_norm(matrix - matrix[w], p)
        d[w] = np.inf
        d[0] = np.inf
        top = np.lexsort((np.arange(len(d)), d))[: syn.k]
        neighbours[inputs.vocab.words[w]] = {
            "nearest": [[inputs.vocab.words[j], float(d[j])] for j in top],
            "synonyms": [inputs.vocab.words[j] for j in syn[w]],
        }
    stats = {
        "alpha": alpha,
        "p": "inf" if p == np.inf else int(p),
        "num_synonym_pairs": int(a.size),
        "mean_synonym_distance": float(syn_d.mean()) if syn_d.size else 0.0,
        "mean_negative_distance": float(neg_d.mean()) if neg_d.size else 0.0,
        "capped_negative_fraction": float((neg_d >= alpha).mean()) if neg_d.size else 0.0,
        "mean_random_pair_distance": random_pair,
        "neighbours": neighbours,
    }
    out = Path(args.report_dir) if args.report_dir else Path(cfg.paths.out_dir) / "distances"
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.resolved", _resolved_text("distances", cfg.lines(), inputs.paths))
    _write_text(out / "distances.json", json.dumps(stats, sort_keys=True, indent=2) + "\n")
    print(f"mean_synonym_distance={stats['mean_synonym_distance']:.6g} "
          f"mean_random_pair_distance={random_pair:.6g} "
          f"capped_negative_fraction={stats['capped_negative_fraction']:.4f}")
    return EXIT_OK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustemb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value experiment config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="global seed (overrides 'seed')")
        p.add_argument("--out", help="output directory (overrides paths.out_dir)")

    g = sub.add_parser("gen", help="generate the synthetic benchmark")
    g.add_argument("--spec", help="generator spec file (key = value)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a generator key")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build-syn", help="build the synonym dictionary")
    common(b)
    b.set_defaults(func=cmd_build_syn)

    t = sub.add_parser("train", help="train a classifier (standard, ftml, cml, frozen-standard)")
    common(t)
    t.add_argument("--mode", choices=("standard", "ftml", "cml", "frozen-standard"))
    t.add_argument("--alpha-ratio", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--init-embedding", help="embedding snapshot to initialise from")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="attack a checkpoint and report robust accuracy")
    common(a)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--kind", choices=("greedy-saliency", "random"))
    a.add_argument("--epsilon", type=float)
    a.add_argument("--sample-size", type=int)
    a.add_argument("--report-dir", help="report directory [<out_dir>/attack]")
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep", help="train+attack over an alpha-ratio x beta grid")
    common(s)
    s.add_argument("--alpha-ratios", default="0.0,0.35,0.7,1.05")
    s.add_argument("--betas", default="1")
    s.add_argument("--mode", default="ftml", choices=("ftml", "cml"))
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("distances", help="synonym / negative distance statistics of an embedding")
    common(d)
    d.add_argument("--checkpoint")
    d.add_argument("--snapshot")
    d.add_argument("--top-words", type=int, default=10)
    d.add_argument("--report-dir", help="report directory [<out_dir>/distances]")
    d.set_defaults(func=cmd_distances)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"robustemb: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"robustemb: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except INPUT_ERRORS as exc:
        print(f"robustemb: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"robustemb: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"robustemb: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

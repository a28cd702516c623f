"""Train every mode on the synthetic benchmark and tabulate clean and robust accuracy.

Usage: python scripts/run_benchmark.py [--out DIR] [--epochs N] [--sample-size N]
"""

import argparse
import math
import tempfile
import time

from robustemb.attack import AttackConfig
from robustemb.corpus import GeneratorSpec
from robustemb.experiments import attack_model, benchmark_train_config, metrics_table, synthetic_workspace, train_model
from robustemb.losses import LossConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="directory for the generated benchmark [temporary]")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--sample-size", type=int, default=200)
    ap.add_argument("--epsilon", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--show-metrics", action="store_true", help="print the per-epoch table of each run")
    args = ap.parse_args()

    out = args.out or tempfile.mkdtemp(prefix="robustemb-bench-")
    ws = synthetic_workspace(out, GeneratorSpec())
    print(f"benchmark in {out}: {len(ws.vocab) - 1} words, {len(ws.dataset.split('train'))} train examples")

    runs = {
        "standard": benchmark_train_config("standard", epochs=args.epochs, seed=args.seed),
        "ftml": benchmark_train_config("ftml", epochs=args.epochs, seed=args.seed),
        "ftml p=1": benchmark_train_config("ftml", epochs=args.epochs, seed=args.seed, loss=LossConfig(p=1)),
        "ftml p=inf": benchmark_train_config("ftml", epochs=args.epochs, seed=args.seed, loss=LossConfig(p=math.inf)),
        "cml": benchmark_train_config("cml", epochs=args.epochs, seed=args.seed),
    }
    attacks = {
        kind: AttackConfig(kind=kind, epsilon=args.epsilon, sample_size=args.sample_size, seed=args.seed)
        for kind in ("greedy-saliency", "random")
    }

    rows = []
    embeddings = {}
    for name, cfg in runs.items():
        t0 = time.perf_counter()
        result = train_model(ws, cfg)
        embeddings[name] = result.params.embedding
        if args.show_metrics:
            print(f"\n{name}\n{metrics_table(result.metrics)}")
        rows.append((name, result.params, time.perf_counter() - t0))
    for name, source in (("frozen ftml emb", "ftml"), ("frozen random emb", None)):
        t0 = time.perf_counter()
        cfg = benchmark_train_config("frozen-standard", epochs=args.epochs, seed=args.seed)
        result = train_model(ws, cfg, embeddings.get(source))
        rows.append((name, result.params, time.perf_counter() - t0))

    print(f"\n{'model':<20}{'clean':>8}{'robust/greedy':>15}{'robust/random':>15}{'train s':>9}")
    for name, params, secs in rows:
        g = attack_model(ws, params, attacks["greedy-saliency"]).summary
        r = attack_model(ws, params, attacks["random"]).summary
        print(f"{name:<20}{g['clean_accuracy']:>8.3f}{g['robust_accuracy']:>15.3f}{r['robust_accuracy']:>15.3f}{secs:>9.1f}")


if __name__ == "__main__":
    main()

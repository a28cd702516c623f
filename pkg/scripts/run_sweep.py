"""Margin and weight sweeps on the synthetic benchmark through the CLI.

Generates the benchmark, builds the synonym dictionary, then runs
``robustemb sweep`` twice: over alpha/alpha0 at beta=1 and over beta at
alpha/alpha0=0.7. Both tables land in the output directory.

Usage: python scripts/run_sweep.py --out DIR [--epochs N]
"""

import argparse
from pathlib import Path

from robustemb.cli import main as cli


def run(*argv):
    rc = cli([str(a) for a in argv])
    if rc != 0:
        raise SystemExit(f"command failed with exit code {rc}: {' '.join(map(str, argv))}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--sample-size", type=int, default=200)
    ap.add_argument("--alpha-ratios", default="0.0,0.35,0.7,1.05")
    ap.add_argument("--betas", default="0.001,1,1000")
    args = ap.parse_args()

    out = Path(args.out).resolve()
    data = out / "data"
    cfg = out / "sweep.cfg"
    run("gen", "--out", data)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_text("\n".join([
        "paths.embeddings = data/embeddings.txt",
        "paths.counterfitted = data/counterfitted.txt",
        "paths.data_dir = data",
        "paths.synonyms = data/synonyms.tsv",
        "paths.out_dir = .",
        "train.lr = 0.01",
        f"train.epochs = {args.epochs}",
        "attack.epsilon = 0.25",
        f"attack.sample_size = {args.sample_size}",
    ]) + "\n")
    run("build-syn", "--config", cfg, "--out", data)
    print("alpha sweep (beta=1)")
    run("sweep", "--config", cfg, "--alpha-ratios", args.alpha_ratios, "--betas", "1", "--out", out / "alpha")
    print("beta sweep (alpha/alpha0=0.7)")
    run("sweep", "--config", cfg, "--alpha-ratios", "0.7", "--betas", args.betas, "--out", out / "beta")
    print(f"tables: {out / 'alpha' / 'sweep.tsv'}, {out / 'beta' / 'sweep.tsv'}")


if __name__ == "__main__":
    main()

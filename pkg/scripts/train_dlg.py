"""Train the layout generator on a grammar corpus and report sample quality.

Prints validity at two overlap thresholds and the Wasserstein distance of the
box-area distribution against the corpus, next to a uniform-random baseline
with paired element counts.
"""
import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from dlgdd.dlg import DLGConfig, TrainConfig, sample_layouts, train_adversarial, validity_rate
from dlgdd.layout import grammar_generate_corpus, uniform_random_layout


def areas(layouts):
    return np.array([e.w * e.h for lay in layouts for e in lay.elements])


def wasserstein_1d(a, b):
    # distance between empirical CDFs, integrated over the merged support
    a, b = np.sort(a), np.sort(b)
    grid = np.sort(np.concatenate([a, b]))
    ca = np.searchsorted(a, grid[:-1], side="right") / len(a)
    cb = np.searchsorted(b, grid[:-1], side="right") / len(b)
    return float(np.sum(np.abs(ca - cb) * np.diff(grid)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--style", default="academic", choices=["academic", "magazine"])
    ap.add_argument("--corpus-size", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/dlg"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    corpus = grammar_generate_corpus(args.style, args.corpus_size, args.seed)
    t0 = time.perf_counter()
    gen, critic, report = train_adversarial(corpus, TrainConfig(epochs=args.epochs, seed=args.seed), DLGConfig())
    elapsed = time.perf_counter() - t0

    args.out.mkdir(parents=True, exist_ok=True)
    gen.save(args.out / "generator.npz")
    critic.save(args.out / "critic.npz")
    report.write(args.out / "train_report.jsonl")

    samples = sample_layouts(gen, args.samples, seed=args.seed + 1)
    rng = np.random.default_rng(args.seed + 2)
    uniform = [uniform_random_layout(len(s.elements), rng) for s in samples]
    ref = areas(corpus)
    summary = {
        "train_seconds": round(elapsed, 1),
        "validity@0.5": validity_rate(samples, 0.5),
        "validity@0.05": validity_rate(samples, 0.05),
        "wasserstein_dlg": wasserstein_1d(areas(samples), ref),
        "wasserstein_uniform": wasserstein_1d(areas(uniform), ref),
    }
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()

"""Style discrimination check for the page encoder.

Renders two grammar style families, trains the encoder on a labelled split and
scores held-out pages by nearest class centroid, once per seed.
"""
import argparse
import json
import time

import numpy as np

from dlgdd.ded import AssetLibrary, decorate_batch
from dlgdd.dsd import DSDConfig, embed_pages, train_dsd
from dlgdd.layout import grammar_generate_corpus


def render(style, count, seed, assets, workers):
    return decorate_batch(grammar_generate_corpus(style, count, seed), assets, seed_base=seed, workers=workers)


def centroid_accuracy(encoder, train, held_out, workers=1):
    cents = []
    for pages in train:
        c = embed_pages(encoder, pages, workers).mean(axis=0)
        cents.append(c / np.linalg.norm(c))
    cents = np.stack(cents)
    hits, total = 0, 0
    for label, pages in enumerate(held_out):
        pred = np.argmax(embed_pages(encoder, pages, workers) @ cents.T, axis=1)
        hits += int(np.sum(pred == label))
        total += len(pages)
    return hits / total


def run_seed(seed, n_train, n_test, assets, epochs, workers):
    base = 1000 * seed
    train = [render("academic", n_train, base + 1, assets, workers),
             render("magazine", n_train, base + 2, assets, workers)]
    held = [render("academic", n_test, base + 3, assets, workers),
            render("magazine", n_test, base + 4, assets, workers)]
    t0 = time.perf_counter()
    enc = train_dsd(train[0], train[1], DSDConfig(epochs=epochs, seed=seed))
    elapsed = time.perf_counter() - t0
    return centroid_accuracy(enc, train, held, workers), elapsed


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--train", type=int, default=200, help="pages per class for training")
    ap.add_argument("--test", type=int, default=100, help="held-out pages per class")
    ap.add_argument("--epochs", type=int, default=DSDConfig.epochs)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()
    assets = AssetLibrary.default()
    for seed in args.seeds:
        acc, secs = run_seed(seed, args.train, args.test, assets, args.epochs, args.workers)
        print(json.dumps({"seed": seed, "accuracy": acc, "train_seconds": round(secs, 1)}))


if __name__ == "__main__":
    main()
